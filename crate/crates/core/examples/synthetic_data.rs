//! Generate a small synthetic corpus, split it and write it as CSV.

use embshield::embedding::{cosine_similarity, pairwise_scores, Attribute, ScoreKind};
use embshield::synth::{generate_dataset, split_dataset, SynthConfig};

fn main() -> Result<(), embshield::Error> {
    let cfg = SynthConfig { n_identities: 12, records_per_identity: 6, ..SynthConfig::default() };
    let ds = generate_dataset(&cfg)?;
    println!("{} records, {} identities, dimension {}", ds.len(), ds.identities().len(), ds.dim);

    for a in Attribute::ALL {
        let labels = ds.labels(a);
        let mut counts = vec![0usize; cfg.attr_class_counts.get(a)];
        for l in labels {
            counts[l] += 1;
        }
        println!("{:<10} class sizes {counts:?}", a.name());
    }

    let scores = pairwise_scores(&ds)?;
    let mean = |k: ScoreKind| {
        let v: Vec<f64> = scores.iter().filter(|s| s.kind == k).map(|s| s.value).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("mean genuine cosine {:.3}, mean impostor cosine {:.3}", mean(ScoreKind::Genuine), mean(ScoreKind::Impostor));
    println!("first two records: cosine {:.3}", cosine_similarity(&ds.records[0].embedding, &ds.records[1].embedding)?);

    let (train, test) = split_dataset(&ds, 0.5, 1)?;
    println!("split: {} train, {} test", train.len(), test.len());

    let mut csv = Vec::new();
    test.write_csv(&mut csv)?;
    let text = String::from_utf8_lossy(&csv);
    println!("csv header: {}", text.lines().next().unwrap_or("").chars().take(80).collect::<String>());
    Ok(())
}
