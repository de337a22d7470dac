//! Train an attribute classifier on raw and protected embeddings and report
//! privacy gain and suppression rate.

use embshield::embedding::{Attribute, Dataset};
use embshield::eval::{evaluate_attribute_leakage, privacy_gain, suppression_rate, TrainConfig};
use embshield::protect::{polyprotect_apply, polyprotect_gen_params};
use embshield::synth::{generate_dataset, split_dataset, SynthConfig};

fn features(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.records.iter().map(|r| r.embedding.values().to_vec()).collect()
}

fn main() -> Result<(), embshield::Error> {
    let ds = generate_dataset(&SynthConfig { n_identities: 40, records_per_identity: 20, ..SynthConfig::default() })?;
    let (train, test) = split_dataset(&ds, 0.5, 11)?;
    let pp = polyprotect_gen_params(5, 50, 0, 99)?;
    let protect = |d: &Dataset| d.map_embeddings(|_, v| polyprotect_apply(v, &pp));
    let (ptrain, ptest) = (protect(&train)?, protect(&test)?);

    let tc = TrainConfig::default();
    println!("{:<10} {:>7} {:>7} {:>7} {:>7} {:>7}", "attribute", "raw", "pp", "chance", "PG", "SR");
    for a in Attribute::ALL {
        let raw = evaluate_attribute_leakage(&features(&train), &train.labels(a), &features(&test), &test.labels(a), &tc)?;
        let prot = evaluate_attribute_leakage(&features(&ptrain), &ptrain.labels(a), &features(&ptest), &ptest.labels(a), &tc)?;
        println!(
            "{:<10} {:>7.3} {:>7.3} {:>7.3} {:>+7.3} {:>+7.3}",
            a.name(),
            raw.accuracy,
            prot.accuracy,
            prot.chance,
            privacy_gain(raw.accuracy, prot.accuracy, false)?,
            suppression_rate(raw.accuracy, prot.accuracy)?
        );
    }
    Ok(())
}
