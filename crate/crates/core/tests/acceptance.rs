//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use embshield::ckks::arith::{ntt_primes, PrimeSide};
use embshield::ckks::ntt::NttTable;
use embshield::ckks::{CkksContext, HeParams, KeySet};
use embshield::embedding::{cosine_similarity, mrl_truncate, Attribute, EmbeddingVector};
use embshield::enc_ops::{audit_rel_error, enc_cosine, enc_polyprotect, fit_invsqrt_poly, pp_normalizer, Packing};
use embshield::eval::{privacy_gain, suppression_rate};
use embshield::pipeline::{bench_timings, compute_baseline, load_dataset, run_pipeline, run_pipeline_with, DPConfig, HeSession, PipelineConfig, Stage};
use embshield::protect::{polyprotect_apply, polyprotect_gen_params, PPParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn metric_arithmetic() -> Outcome {
    let rows = [(98.12, 52.22, 45.90, 0.4678), (87.68, 6.12, 81.56, 0.9302)];
    let mut worst: f64 = 0.0;
    for (a_o, a_p, pg, sr) in rows {
        let g = privacy_gain(a_o, a_p, true).map_err(|e| e.to_string())?;
        let s = suppression_rate(a_o, a_p).map_err(|e| e.to_string())?;
        worst = worst.max((g - pg).abs()).max((s - sr).abs());
    }
    check(worst <= 1e-3, format!("max deviation {worst:.2e}"))
}

fn fhe_correctness() -> Outcome {
    let ctx = CkksContext::new(HeParams::desk()).map_err(|e| e.to_string())?;
    let keys = KeySet::generate(&ctx, 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let slots = ctx.slot_count();
    let top = ctx.max_level();
    let (mut e_round, mut e_add, mut e_mul, mut e_rot) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let a: Vec<f64> = (0..slots).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..slots).map(|_| rng.random_range(-1.0..1.0)).collect();
        let enc = |v: &[f64], rng: &mut ChaCha20Rng| keys.public.encrypt(&ctx, &ctx.encode_at(v, top).unwrap(), rng).unwrap();
        let dec = |c: &embshield::ckks::Ciphertext| ctx.decode(&keys.secret.decrypt(&ctx, c).unwrap()).unwrap();
        let (ca, cb) = (enc(&a, &mut rng), enc(&b, &mut rng));
        e_round = e_round.max(max_abs_diff(&dec(&ca), &a));
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let added = ctx.add(&ca, &cb).unwrap();
        e_add = e_add.max(max_abs_diff(&dec(&added), &sum));
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let multiplied = ctx.mul_rescale(&ca, &cb, &keys.relin).unwrap();
        e_mul = e_mul.max(max_abs_diff(&dec(&multiplied), &prod));
        let step = rng.random_range(1..slots);
        let rotated: Vec<f64> = (0..slots).map(|i| a[(i + step) % slots]).collect();
        let shifted = ctx.rotate(&ca, step as i64, &keys).unwrap();
        e_rot = e_rot.max(max_abs_diff(&dec(&shifted), &rotated));
    }
    let detail = format!("roundtrip {e_round:.1e}, add {e_add:.1e}, mul {e_mul:.1e}, rotate {e_rot:.1e}");
    check(e_round <= 1e-4 && e_add.max(e_mul).max(e_rot) <= 1e-3, detail)
}

fn inverse_sqrt() -> Outcome {
    let p = fit_invsqrt_poly(8, 0.5, 2.0, 64).map_err(|e| e.to_string())?;
    let audited = audit_rel_error(&p);
    check(p.degree == 8 && audited <= 1e-3, format!("degree {}, audited max relative error {audited:.2e}", p.degree))
}

/// Default data reduced to the compressed dimension the encrypted chain sees.
fn compressed_records(n: usize) -> Vec<Vec<f64>> {
    let ds = load_dataset(&PipelineConfig::default()).unwrap();
    ds.records.iter().take(n).map(|r| mrl_truncate(&r.embedding, 64).unwrap().into_values()).collect()
}

fn encrypted_cosine() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut he = HeSession::new(&cfg, cfg.compression_dim).map_err(|e| e.to_string())?;
    let (pp, _) = he.enc_pp.clone().expect("default chain has ENC_PP");
    let records = compressed_records(4000);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let pairs: Vec<(usize, usize)> = (0..100)
        .map(|_| {
            let i = rng.random_range(0..records.len());
            // half the pairs share an identity (records are grouped by identity)
            let j = if rng.random_bool(0.5) { (i / 50) * 50 + rng.random_range(0..50) } else { rng.random_range(0..records.len()) };
            (i, j)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for chunk in pairs.chunks(he.layout.per_ct) {
        let left: Vec<&[f64]> = chunk.iter().map(|p| records[p.0].as_slice()).collect();
        let right: Vec<&[f64]> = chunk.iter().map(|p| records[p.1].as_slice()).collect();
        let a = he.encrypt(&left).and_then(|c| he.transform(&c)).map_err(|e| e.to_string())?;
        let b = he.encrypt(&right).and_then(|c| he.transform(&c)).map_err(|e| e.to_string())?;
        let ct = enc_cosine(&he.ctx, &he.keys, &a, &b, he.layout.block, &he.poly, Some(&he.layout.block_start_mask())).map_err(|e| e.to_string())?;
        let got = he.layout.block_starts(&he.decrypt(&ct).map_err(|e| e.to_string())?);
        for (k, &(i, j)) in chunk.iter().enumerate() {
            let pa = polyprotect_apply(&EmbeddingVector::new(records[i].clone()).unwrap(), &pp).unwrap();
            let pb = polyprotect_apply(&EmbeddingVector::new(records[j].clone()).unwrap(), &pp).unwrap();
            let want = cosine_similarity(&pa, &pb).unwrap();
            worst = worst.max((got[k] - want).abs());
        }
    }
    check(worst <= 2e-2, format!("100 pairs, max |enc - plain| {worst:.2e}"))
}

fn encrypted_polyprotect() -> Outcome {
    let ctx = CkksContext::new(HeParams::desk()).map_err(|e| e.to_string())?;
    let keys = KeySet::generate(&ctx, 4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let top = ctx.max_level();
    let run = |vs: &[Vec<f64>], p: &PPParams, out_scale: f64, rng: &mut ChaCha20Rng| -> Vec<Vec<f64>> {
        let layout = Packing::new(vs[0].len(), ctx.slot_count()).unwrap();
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let ct = keys.public.encrypt(&ctx, &ctx.encode_at(&layout.pack(&refs).unwrap(), top).unwrap(), rng).unwrap();
        let out = enc_polyprotect(&ctx, &keys, &ct, p, &layout, out_scale).unwrap();
        let slots = ctx.decode(&keys.secret.decrypt(&ctx, &out).unwrap()).unwrap();
        let n_out = p.output_len(layout.dim);
        (0..vs.len()).map(|k| (0..n_out).map(|j| slots[k * layout.block + j * p.stride()] / out_scale).collect()).collect()
    };
    let rel = |got: &[f64], want: &[f64]| max_abs_diff(got, want) / want.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let worked = PPParams { m: 2, c_bound: 3, overlap: 0, coefficients: vec![2, -3], exponents: vec![1, 2], user_seed: 0 };
    let got = run(&[vec![1.0, 2.0, 3.0, 4.0]], &worked, 1.0, &mut rng).remove(0);
    let mut worst = rel(&got, &[-10.0, -42.0]);
    let worked_detail = format!("[{:.4}, {:.4}]", got[0], got[1]);

    let records = compressed_records(4000);
    let mut trials = 1;
    // 99 more trials: 11 secrets with 9 vectors each, all packed per secret
    for s in 0..11u64 {
        let m = 2 + (s as usize % 7);
        let p = polyprotect_gen_params(m, [10, 20, 45, 50, 60][s as usize % 5], s as usize % m.min(4), 100 + s).unwrap();
        let vs: Vec<Vec<f64>> = (0..9).map(|_| records[rng.random_range(0..records.len())].clone()).collect();
        let outs = run(&vs, &p, 1.0 / pp_normalizer(&p, 64), &mut rng);
        for (v, got) in vs.iter().zip(outs) {
            let want = polyprotect_apply(&EmbeddingVector::new(v.clone()).unwrap(), &p).unwrap();
            worst = worst.max(rel(&got, want.values()));
            trials += 1;
        }
    }
    check(trials == 100 && worst <= 1e-2, format!("{trials} trials, max relative error {worst:.2e}, worked example {worked_detail}"))
}

fn leakage_suppression() -> Outcome {
    let r = run_pipeline(&PipelineConfig::default()).map_err(|e| e.to_string())?.report;
    let mut ok = r.rank1_baseline - r.rank1_accuracy <= 0.03;
    let mut parts = vec![format!("rank-1 {:.4} -> {:.4}", r.rank1_baseline, r.rank1_accuracy)];
    for a in Attribute::ALL {
        let (raw, acc, chance) = (r.attribute_baseline[a.name()], r.attribute_accuracy[a.name()], r.chance[a.name()]);
        ok &= raw >= 0.90 && (acc - chance).abs() <= 0.05;
        parts.push(format!("{} raw {raw:.3} bytes {acc:.3} (chance {chance:.3})", a.name()));
    }
    check(ok, parts.join("; "))
}

fn plaintext_leakage() -> Outcome {
    let base = PipelineConfig::default();
    let ds = load_dataset(&base).map_err(|e| e.to_string())?;
    let baseline = compute_baseline(&base, &ds).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for stage in [Stage::Pp, Stage::Miu, Stage::Nfr] {
        let cfg = PipelineConfig { protection_chain: vec![stage], ..base.clone() };
        let r = run_pipeline_with(&cfg, &ds, Some(&baseline)).map_err(|e| e.to_string())?.report;
        let best = Attribute::ALL.iter().map(|a| r.attribute_accuracy[a.name()] - r.chance[a.name()]).fold(f64::NEG_INFINITY, f64::max);
        ok &= best >= 0.15;
        parts.push(format!("{stage} +{:.1} pts", best * 100.0));
    }
    check(ok, format!("best attribute above chance: {}", parts.join(", ")))
}

fn dp_tradeoff() -> Outcome {
    let base = PipelineConfig { protection_chain: vec![Stage::Mrl, Stage::Dp], ..PipelineConfig::default() };
    let ds = load_dataset(&base).map_err(|e| e.to_string())?;
    let baseline = compute_baseline(&base, &ds).map_err(|e| e.to_string())?;
    let grid = [0.01, 0.1, 1.0, 10.0];
    let mut acc = Vec::new();
    for eps in grid {
        let cfg = PipelineConfig { dp: DPConfig { epsilon: eps, ..base.dp.clone() }, ..base.clone() };
        acc.push(run_pipeline_with(&cfg, &ds, Some(&baseline)).map_err(|e| e.to_string())?.report.rank1_accuracy);
    }
    let monotone = acc.windows(2).all(|w| w[1] >= w[0]);
    let detail = grid.iter().zip(&acc).map(|(e, a)| format!("eps {e}: {a:.4}")).collect::<Vec<_>>().join(", ");
    check(acc[1] <= 0.05 && acc[3] >= 0.50 && monotone, format!("{detail} (MRL 64 + DP)"))
}

fn compression_speedup() -> Outcome {
    let full = PipelineConfig { protection_chain: vec![Stage::Fhe, Stage::EncPp], ..PipelineConfig::default() };
    let compressed = PipelineConfig::default();
    let b = bench_timings((&full, &compressed), 3).map_err(|e| e.to_string())?;
    check(
        b.speedup >= 4.0,
        format!(
            "D={} {:.2} ms/record vs d={} {:.2} ms/record, speedup {:.2}x",
            b.first.dim, b.first.total_per_record_ms, b.second.dim, b.second.total_per_record_ms, b.speedup
        ),
    )
}

fn ring_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let sizes = [2usize, 4, 8, 16, 32, 64];
    let mut mismatches = 0;
    for trial in 0..1000 {
        let n = sizes[trial % sizes.len()];
        let bits = [30u32, 40, 50, 60][trial % 4];
        let q = ntt_primes(bits, n, 1, PrimeSide::Below, &[])[0];
        let t = NttTable::new(q, n).ok_or("no root of unity")?;
        let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
        let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
        if t.negacyclic_mul(&a, &b) != t.negacyclic_schoolbook(&a, &b) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("1000 pairs over N in {sizes:?}, {mismatches} mismatches"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("metric arithmetic", metric_arithmetic, Duration::from_secs(1)),
        ("FHE correctness", fhe_correctness, Duration::from_secs(60)),
        ("inverse-sqrt approximant", inverse_sqrt, Duration::from_secs(5)),
        ("encrypted cosine", encrypted_cosine, Duration::from_secs(300)),
        ("encrypted PolyProtect", encrypted_polyprotect, Duration::from_secs(300)),
        ("leakage suppression", leakage_suppression, Duration::from_secs(900)),
        ("plaintext-hash leakage", plaintext_leakage, Duration::from_secs(300)),
        ("DP trade-off", dp_tradeoff, Duration::from_secs(300)),
        ("compression speedup", compression_speedup, Duration::from_secs(600)),
        ("ring oracle", ring_oracle, Duration::from_secs(30)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|x| *x == id || name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let over = elapsed > *budget;
        let (status, detail) = match &outcome {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {budget:?} budget")),
            Err(d) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {status} {name}: {detail} [{:.1}s]", i + 1, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
