//! Time encrypted stages at full dimension and at an MRL prefix.

use embshield::pipeline::{bench_timings, PipelineConfig, Stage};

fn main() -> Result<(), embshield::Error> {
    let compressed = PipelineConfig::default();
    let full = PipelineConfig { protection_chain: vec![Stage::Fhe, Stage::EncPp], ..compressed.clone() };
    let b = bench_timings((&full, &compressed), 1)?;
    for t in [&b.first, &b.second] {
        println!("[{}] D = {}, {} records per ciphertext", t.chain.join(", "), t.dim, t.records_per_ciphertext);
        for (k, v) in &t.per_record_ms {
            println!("  {k:<10} {v:>9.3} ms/record");
        }
    }
    println!("speedup {:.2}x", b.speedup);
    Ok(())
}
