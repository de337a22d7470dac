//! Encrypt packed embeddings and compare them under encryption.

use std::time::Instant;

use embshield::embedding::{cosine_similarity, mrl_truncate, EmbeddingVector};
use embshield::pipeline::{HeSession, PipelineConfig, Stage};
use embshield::synth::{generate_dataset, SynthConfig};

fn main() -> Result<(), embshield::Error> {
    let ds = generate_dataset(&SynthConfig { n_identities: 4, records_per_identity: 4, ..SynthConfig::default() })?;
    let vs: Vec<Vec<f64>> = ds.records.iter().map(|r| Ok(mrl_truncate(&r.embedding, 64)?.into_values())).collect::<Result<_, embshield::Error>>()?;

    let cfg = PipelineConfig { protection_chain: vec![Stage::Mrl, Stage::Fhe], ..PipelineConfig::default() };
    let t = Instant::now();
    let mut he = HeSession::new(&cfg, 64)?;
    println!("keygen {:.2?}; {} vectors of 64 per ciphertext", t.elapsed(), he.layout.per_ct);

    // Record 0 against every record, one block each.
    let n = vs.len();
    let left: Vec<&[f64]> = (0..n).map(|_| vs[0].as_slice()).collect();
    let right: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
    let t = Instant::now();
    let a = he.encrypt(&left)?;
    let b = he.encrypt(&right)?;
    let (ia, ib) = (he.inverse_norm(&a)?, he.inverse_norm(&b)?);
    let scores = he.layout.block_starts(&he.decrypt(&he.cosine(&a, &ia, &b, &ib)?)?);
    println!("{n} encrypted cosines in {:.2?}", t.elapsed());

    let v0 = EmbeddingVector::new(vs[0].clone())?;
    for (i, r) in ds.records.iter().enumerate() {
        let plain = cosine_similarity(&v0, &EmbeddingVector::new(vs[i].clone())?)?;
        println!("id {:>2} vs id {:>2}: encrypted {:+.4}  plaintext {:+.4}", ds.records[0].identity, r.identity, scores[i], plain);
    }
    Ok(())
}
