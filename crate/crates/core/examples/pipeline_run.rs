//! Run a protection chain end to end and write its outputs.
//!
//! `cargo run --release --example pipeline_run -- MRL PP` runs a plaintext chain;
//! with no arguments the default encrypted chain runs (a few minutes).

use embshield::pipeline::{run_pipeline, write_run_outputs, PipelineConfig, Stage};

fn main() -> Result<(), embshield::Error> {
    let mut cfg = PipelineConfig::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if !args.is_empty() {
        cfg.protection_chain = args
            .iter()
            .map(|a| serde_json::from_value::<Stage>(serde_json::Value::String(a.to_uppercase())).map_err(|e| embshield::Error::InvalidConfig(e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    let out = std::env::temp_dir().join("embshield_pipeline_run");
    cfg.output_dir = out.clone();

    let run = run_pipeline(&cfg)?;
    write_run_outputs(&out, &cfg, &run)?;
    let r = &run.report;
    println!("chain [{}]: rank-1 {:.3} (unprotected {:.3})", r.chain.join(", "), r.rank1_accuracy, r.rank1_baseline);
    for (k, v) in &r.attribute_accuracy {
        println!("  {k:<10} accuracy {v:.3}, chance {:.3}, PG {:+.3}", r.chance[k], r.privacy_gain[k]);
    }
    if let Some(e) = r.eer {
        println!("  EER {e:.4}");
    }
    for (k, v) in &r.timings_ms {
        println!("  {k}: {v:.1} ms");
    }
    println!("outputs in {}", out.display());
    Ok(())
}
