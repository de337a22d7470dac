//! Sweep the MRL prefix length for a plaintext PolyProtect chain.

use embshield::pipeline::{sweep, write_sweep_csv, PipelineConfig, Stage, SweepParam};
use embshield::synth::SynthConfig;

fn main() -> Result<(), embshield::Error> {
    let cfg = PipelineConfig {
        protection_chain: vec![Stage::Mrl, Stage::Pp],
        synth: SynthConfig { n_identities: 30, records_per_identity: 20, ..SynthConfig::default() },
        ..PipelineConfig::default()
    };
    let rows = sweep(&cfg, SweepParam::CompressionDim)?;
    for r in &rows {
        println!("{:?}: rank-1 {:.3}, attributes {:?}, EER {:.4}", r.point, r.rank1_accuracy, r.attribute_accuracy, r.eer);
    }
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
