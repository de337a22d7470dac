use embshield::embedding::{cosine_similarity, mrl_truncate, Attribute, EmbeddingVector};
use embshield::eval::{evaluate_attribute_leakage, TrainConfig};
use embshield::pipeline::{compute_baseline, load_dataset, run_pipeline_with, DPConfig, PipelineConfig, Stage};
use embshield::protect::{polyprotect_apply, polyprotect_gen_params};
use embshield::synth::{generate_dataset, split_dataset, SynthConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn templates_of_one_subject_under_two_secrets_look_like_impostors() {
    let ds = generate_dataset(&SynthConfig { n_identities: 40, records_per_identity: 2, ..SynthConfig::default() }).unwrap();
    let vs: Vec<EmbeddingVector> = ds.records.iter().map(|r| mrl_truncate(&r.embedding, 64).unwrap()).collect();
    let (mut linked, mut impostor) = (Vec::new(), Vec::new());
    for t in 0..1200u64 {
        let a = polyprotect_gen_params(5, 50, 0, 2 * t).unwrap();
        let b = polyprotect_gen_params(5, 50, 0, 2 * t + 1).unwrap();
        let i = (t as usize * 7) % vs.len();
        let j = (i + 2 + 2 * (t as usize % 30)) % vs.len();
        assert_ne!(ds.records[i].identity, ds.records[j].identity);
        linked.push(cosine_similarity(&polyprotect_apply(&vs[i], &a).unwrap(), &polyprotect_apply(&vs[i], &b).unwrap()).unwrap());
        impostor.push(cosine_similarity(&polyprotect_apply(&vs[i], &a).unwrap(), &polyprotect_apply(&vs[j], &b).unwrap()).unwrap());
    }
    let gap = (mean(&linked) - mean(&impostor)).abs();
    assert!(gap < 0.1, "mean gap {gap}");
}

#[test]
fn stronger_attribute_signal_never_lowers_leakage() {
    let tc = TrainConfig::default();
    for a in Attribute::ALL {
        let mut prev = 0.0;
        for strength in [0.05, 0.15, 0.3] {
            let ds = generate_dataset(&SynthConfig { n_identities: 40, records_per_identity: 10, attr_signal_strength: strength, seed: 3, ..SynthConfig::default() }).unwrap();
            let (train, test) = split_dataset(&ds, 0.5, 5).unwrap();
            let x = |d: &embshield::embedding::Dataset| d.records.iter().map(|r| r.embedding.values()[..24].to_vec()).collect::<Vec<_>>();
            let acc = evaluate_attribute_leakage(&x(&train), &train.labels(a), &x(&test), &test.labels(a), &tc).unwrap().accuracy;
            assert!(acc >= prev, "{} accuracy fell from {prev} to {acc} at strength {strength}", a.name());
            prev = acc;
        }
    }
}

#[test]
fn identification_under_laplace_noise_improves_with_epsilon() {
    let base = PipelineConfig {
        protection_chain: vec![Stage::Mrl, Stage::Dp],
        synth: SynthConfig { n_identities: 30, records_per_identity: 20, ..SynthConfig::default() },
        ..PipelineConfig::default()
    };
    let ds = load_dataset(&base).unwrap();
    let bl = compute_baseline(&base, &ds).unwrap();
    let mut prev = 0.0;
    for epsilon in [0.01, 0.1, 1.0, 10.0] {
        let cfg = PipelineConfig { dp: DPConfig { epsilon, ..DPConfig::default() }, ..base.clone() };
        let r = run_pipeline_with(&cfg, &ds, Some(&bl)).unwrap().report;
        assert!(r.rank1_accuracy >= prev, "rank-1 fell from {prev} to {} at eps {epsilon}", r.rank1_accuracy);
        prev = r.rank1_accuracy;
    }
    assert!(prev > 0.3);
}
