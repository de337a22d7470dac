//! Command-line front end over the `embshield` library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use embshield::ckks::{CkksContext, KeySet};
use embshield::embedding::{Attribute, SplitTag};
use embshield::eval::{CurvePoint, FmrFnmrCurve, MetricsReport};
use embshield::pipeline::{
    bench_timings, curves_svg, derive_seed, load_dataset, protect_dataset, run_pipeline, sweep, write_json, write_run_outputs, write_sweep_csv, Manifest,
    PipelineConfig, Stage, SweepParam,
};
use embshield::Error;

#[derive(Parser)]
#[command(name = "embshield", version, about = "Protect face embeddings and measure what they still leak")]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed and the data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as `dataset.csv`.
    GenData,
    /// Apply the plaintext stages of the chain, writing `protected.csv`.
    Protect {
        /// Embedding CSV to protect instead of the configured data.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate keys for the configured preset, writing `keys.ehe`.
    Keygen,
    /// Run the chain and write metrics, curves and a manifest.
    Run,
    /// Sweep one parameter axis, writing `sweep_<param>.csv`.
    Sweep {
        /// `pp`, `compression_dim` or `epsilon`.
        #[arg(long)]
        param: String,
    },
    /// Time encrypted stages of two configurations, writing `bench.json`.
    Bench {
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Configuration to compare against; defaults to the main chain without MRL.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Check and summarize `metrics.json`; redraws `curves.svg` from `fmr_fnmr.csv`.
    Report {
        /// Metrics file; defaults to `<out>/metrics.json`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidChain(_)
        | Error::InvalidFraction(_)
        | Error::InvalidParams(_)
        | Error::DimTooSmall { .. }
        | Error::InvalidBlockSize(_)
        | Error::InvalidInterval { .. } => 2,
        Error::Invariant(_) => 3,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn manifest(dir: &Path, command: &str, cfg: &PipelineConfig, outputs: &[&str]) -> Result<(), Error> {
    write_json(&dir.join("manifest.json"), &Manifest::new(command, cfg, outputs))
}

fn read_curve(path: &Path, report: &MetricsReport) -> Result<FmrFnmrCurve, Error> {
    let mut points = Vec::new();
    for row in csv::Reader::from_path(path)?.records() {
        let row = row?;
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| Error::InvalidData(format!("bad number `{}`", &row[i])));
        points.push(CurvePoint { threshold: num(0)?, fmr: num(1)?, fnmr: num(2)? });
    }
    Ok(FmrFnmrCurve { points, eer: report.eer.unwrap_or(f64::NAN), area: report.fmr_fnmr_area.unwrap_or(f64::NAN) })
}

fn print_report(r: &MetricsReport) {
    println!("chain: [{}]", r.chain.join(", "));
    println!("rank-1: {:.4} (unprotected {:.4}, gain {:+.4})", r.rank1_accuracy, r.rank1_baseline, r.identification_gain);
    for a in Attribute::ALL {
        let g = |m: &std::collections::BTreeMap<String, f64>| m.get(a.name()).copied().unwrap_or(f64::NAN);
        println!(
            "{:<10} acc {:.4} (raw {:.4}, chance {:.4})  auc {:.4}  PG {:+.4}  SR {:+.4}",
            a.name(),
            g(&r.attribute_accuracy),
            g(&r.attribute_baseline),
            g(&r.chance),
            g(&r.attribute_auc),
            g(&r.privacy_gain),
            g(&r.suppression_rate)
        );
    }
    if let Some(e) = r.eer {
        println!("EER {e:.4}");
    }
    for n in &r.notes {
        println!("note: {n}");
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    match &cli.command {
        Command::GenData => {
            cfg.synth.validate()?;
            let ds = embshield::synth::generate_dataset(&cfg.synth)?;
            ds.write_csv(std::fs::File::create(out.join("dataset.csv"))?)?;
            manifest(&out, "gen-data", &cfg, &["dataset.csv"])?;
            eprintln!("wrote {} records of dimension {} to {}", ds.len(), ds.dim, out.join("dataset.csv").display());
        }
        Command::Protect { input } => {
            cfg.validate()?;
            let ds = match input {
                Some(p) => embshield::embedding::Dataset::read_csv(std::fs::File::open(p)?, None, SplitTag::Train)?,
                None => load_dataset(&cfg)?,
            };
            if cfg.has(Stage::Fhe) {
                eprintln!("protect applies plaintext stages only; FHE and later stages are skipped");
            }
            let protected = protect_dataset(&cfg, &ds)?;
            protected.write_csv(std::fs::File::create(out.join("protected.csv"))?)?;
            manifest(&out, "protect", &cfg, &["protected.csv"])?;
            eprintln!("wrote {} protected records of dimension {}", protected.len(), protected.dim);
        }
        Command::Keygen => {
            let ctx = CkksContext::new(cfg.he_preset.preset().params())?;
            let keys = KeySet::generate(&ctx, derive_seed(cfg.seed, "keys"))?;
            std::fs::write(out.join("keys.ehe"), keys.to_bytes())?;
            manifest(&out, "keygen", &cfg, &["keys.ehe"])?;
            eprintln!("wrote {:?} keys with {} rotation keys", cfg.he_preset, keys.rotations.len());
        }
        Command::Run => {
            let run = run_pipeline(&cfg)?;
            write_run_outputs(&out, &cfg, &run)?;
            print_report(&run.report);
        }
        Command::Sweep { param } => {
            let param = SweepParam::parse(param)?;
            let rows = sweep(&cfg, param)?;
            let name = format!("sweep_{}.csv", param.name());
            write_sweep_csv(&rows, std::fs::File::create(out.join(&name))?)?;
            manifest(&out, &format!("sweep {}", param.name()), &cfg, &[&name])?;
            eprintln!("wrote {} rows to {}", rows.len(), out.join(&name).display());
        }
        Command::Bench { repetitions, baseline } => {
            let first = match baseline {
                Some(p) => PipelineConfig::from_json_file(p)?,
                None => PipelineConfig { protection_chain: cfg.protection_chain.iter().copied().filter(|&s| s != Stage::Mrl).collect(), ..cfg.clone() },
            };
            let b = bench_timings((&first, &cfg), *repetitions)?;
            write_json(&out.join("bench.json"), &b)?;
            manifest(&out, "bench", &cfg, &["bench.json"])?;
            for t in [&b.first, &b.second] {
                println!("[{}] D={} ({} per ciphertext): {:.3} ms/record {:?}", t.chain.join(", "), t.dim, t.records_per_ciphertext, t.total_per_record_ms, t.per_record_ms);
            }
            println!("speedup {:.2}x", b.speedup);
        }
        Command::Report { metrics } => {
            let path = metrics.clone().unwrap_or_else(|| out.join("metrics.json"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            let report: MetricsReport = serde_json::from_str(&text)?;
            report.validate()?;
            print_report(&report);
            let dir = path.parent().unwrap_or(Path::new("."));
            let csv_path = dir.join("fmr_fnmr.csv");
            if csv_path.exists() {
                std::fs::write(dir.join("curves.svg"), curves_svg(&read_curve(&csv_path, &report)?))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
