use std::sync::{Mutex, OnceLock};

use embshield::embedding::mrl_truncate;
use embshield::enc_ops::{enc_cosine, enc_inner_product};
use embshield::eval::ciphertext_byte_features;
use embshield::pipeline::{run_pipeline, HeSession, PipelineConfig, Stage};
use embshield::synth::{generate_dataset, SynthConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn session() -> &'static Mutex<HeSession> {
    static CELL: OnceLock<Mutex<HeSession>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = PipelineConfig { protection_chain: vec![Stage::Mrl, Stage::Fhe], ..PipelineConfig::default() };
        Mutex::new(HeSession::new(&cfg, 64).unwrap())
    })
}

fn vectors(n: usize) -> Vec<Vec<f64>> {
    let ds = generate_dataset(&SynthConfig { n_identities: n.div_ceil(2), records_per_identity: 2, ..SynthConfig::default() }).unwrap();
    ds.records.iter().take(n).map(|r| mrl_truncate(&r.embedding, 64).unwrap().into_values()).collect()
}

#[test]
fn encrypted_cosine_is_symmetric() {
    let vs = vectors(16);
    let (left, right): (Vec<&[f64]>, Vec<&[f64]>) = (vs[..8].iter().map(|v| v.as_slice()).collect(), vs[8..].iter().map(|v| v.as_slice()).collect());
    let mut he = session().lock().unwrap();
    let (a, b) = (he.encrypt(&left).unwrap(), he.encrypt(&right).unwrap());
    let mask = he.layout.block_start_mask();
    let ab = he.layout.block_starts(&he.decrypt(&enc_cosine(&he.ctx, &he.keys, &a, &b, he.layout.block, &he.poly, Some(&mask)).unwrap()).unwrap());
    let ba = he.layout.block_starts(&he.decrypt(&enc_cosine(&he.ctx, &he.keys, &b, &a, he.layout.block, &he.poly, Some(&mask)).unwrap()).unwrap());
    for k in 0..8 {
        assert!((ab[k] - ba[k]).abs() < 1e-3, "block {k}: {} vs {}", ab[k], ba[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn inner_product_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        c in prop::collection::vec(-1.0f64..1.0, 64),
        seed in any::<u64>(),
    ) {
        let he = session().lock().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut enc = |v: &[f64]| {
            let pt = he.ctx.encode_at(&he.layout.pack(&[v]).unwrap(), he.ctx.max_level()).unwrap();
            he.keys.public.encrypt(&he.ctx, &pt, &mut rng).unwrap()
        };
        let bc: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x + y).collect();
        let (ea, eb, ec, ebc) = (enc(&a), enc(&b), enc(&c), enc(&bc));
        let ip = |x, y| he.decrypt(&enc_inner_product(&he.ctx, &he.keys, x, y, he.layout.block).unwrap()).unwrap()[0];
        let lhs = ip(&ea, &ebc);
        let rhs = ip(&ea, &eb) + ip(&ea, &ec);
        prop_assert!((lhs - rhs).abs() < 2e-2, "{} vs {}", lhs, rhs);
    }
}

#[test]
fn fresh_encryptions_of_one_vector_differ_in_bytes() {
    let vs = vectors(1);
    let mut he = session().lock().unwrap();
    let x = he.encrypt(&[&vs[0]]).unwrap().to_bytes();
    let y = he.encrypt(&[&vs[0]]).unwrap().to_bytes();
    assert_ne!(x, y);
    let (fx, fy) = (ciphertext_byte_features(&x, 64).unwrap(), ciphertext_byte_features(&y, 64).unwrap());
    assert_eq!(fx.len(), 256 + 64);
    assert_ne!(fx, fy);
}

#[test]
fn small_encrypted_run_is_reproducible() {
    let cfg = PipelineConfig {
        synth: SynthConfig { n_identities: 8, records_per_identity: 4, ..SynthConfig::default() },
        probes_per_identity: 2,
        ..PipelineConfig::default()
    };
    let strip = |mut r: embshield::eval::MetricsReport| {
        r.timings_ms.clear();
        r
    };
    let a = strip(run_pipeline(&cfg).unwrap().report);
    let b = strip(run_pipeline(&cfg).unwrap().report);
    assert_eq!(a, b);
    assert!(a.rank1_accuracy > 0.9, "rank-1 {}", a.rank1_accuracy);
}
