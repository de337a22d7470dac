//! Run PolyProtect on encrypted embeddings and check it against the plaintext map.

use std::time::Instant;

use embshield::embedding::{l2_normalize, mrl_truncate};
use embshield::protect::polyprotect_apply;
use embshield::pipeline::{HeSession, PipelineConfig, Stage};
use embshield::synth::{generate_dataset, SynthConfig};

fn main() -> Result<(), embshield::Error> {
    let ds = generate_dataset(&SynthConfig { n_identities: 2, records_per_identity: 2, ..SynthConfig::default() })?;
    let vs: Vec<Vec<f64>> = ds.records.iter().map(|r| Ok(mrl_truncate(&r.embedding, 64)?.into_values())).collect::<Result<_, embshield::Error>>()?;

    let cfg = PipelineConfig::default();
    assert_eq!(cfg.protection_chain, vec![Stage::Mrl, Stage::Fhe, Stage::EncPp]);
    let mut he = HeSession::new(&cfg, 64)?;
    let (pp, scale) = he.enc_pp.clone().expect("chain has ENC_PP");
    println!("secret c = {:?}, e = {:?}, output scale {scale:.4}", pp.coefficients, pp.exponents);

    let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
    let ct = he.encrypt(&refs)?;
    let t = Instant::now();
    let out = he.transform(&ct)?;
    println!("ENC_PP on {} packed vectors in {:.2?}; level {} -> {}", refs.len(), t.elapsed(), ct.level(), out.level());

    let slots = he.decrypt(&out)?;
    let stride = pp.stride();
    for (k, v) in ds.records.iter().enumerate() {
        let expect = polyprotect_apply(&l2_normalize(&mrl_truncate(&v.embedding, 64)?)?, &pp)?;
        let got: Vec<f64> = (0..expect.dim()).map(|j| slots[k * he.layout.block + j * stride] / scale).collect();
        let err = expect.values().iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("record {k}: first outputs {:?}, max abs error {err:.2e}", got.iter().take(3).map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>());
    }
    Ok(())
}
