//! Seeded synthetic embedding datasets with planted identity clusters and
//! attribute-carrying coordinate blocks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_normalize, Attribute, ClassCounts, Dataset, EmbeddingVector, SplitTag, SubjectRecord};
use crate::Error;

/// Width of each attribute's coordinate block.
pub const ATTR_BLOCK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_identities: usize,
    pub records_per_identity: usize,
    pub attr_class_counts: ClassCounts,
    /// Norm of the per-record noise relative to the unit centroid.
    pub cluster_spread: f64,
    /// Norm of the attribute offset added inside its block.
    pub attr_signal_strength: f64,
    /// Coordinate `k` is weighted by `(1 + k / prefix_decay)^(-1/2)`, so leading
    /// coordinates carry more energy and prefixes stay discriminative.
    pub prefix_decay: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            n_identities: 80,
            records_per_identity: 50,
            attr_class_counts: ClassCounts::default(),
            cluster_spread: 0.3,
            attr_signal_strength: 0.3,
            prefix_decay: 64.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let widths = ATTR_BLOCK * Attribute::ALL.len();
        if self.dim < 8 * widths {
            return bad(&format!("dim must be at least {}", 8 * widths));
        }
        if self.n_identities == 0 || self.records_per_identity == 0 {
            return bad("identity and record counts must be at least 1");
        }
        let c = self.attr_class_counts;
        if c.age == 0 || c.gender == 0 || c.ethnicity == 0 {
            return bad("every attribute needs at least one class");
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be positive");
        }
        if !(self.attr_signal_strength >= 0.0 && self.attr_signal_strength.is_finite()) {
            return bad("attr_signal_strength must be non-negative");
        }
        if !(self.prefix_decay > 0.0) {
            return bad("prefix_decay must be positive");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Classes assigned to identities in shuffled round-robin, so proportions are exact up to rounding.
fn balanced_classes(rng: &mut ChaCha20Rng, n: usize, classes: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).map(|i| i % classes).collect();
    v.shuffle(rng);
    v
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset, Error> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let weights: Vec<f64> = (0..d).map(|k| (1.0 + k as f64 / cfg.prefix_decay).powf(-0.5)).collect();
    let weight_norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();

    let counts = cfg.attr_class_counts;
    let patterns: Vec<Vec<Vec<f64>>> = Attribute::ALL
        .iter()
        .map(|&a| {
            (0..counts.get(a))
                .map(|_| {
                    (0..ATTR_BLOCK)
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    let classes: Vec<Vec<usize>> = Attribute::ALL
        .iter()
        .map(|&a| balanced_classes(&mut rng, cfg.n_identities, counts.get(a)))
        .collect();

    let offset_scale = cfg.attr_signal_strength / (ATTR_BLOCK as f64).sqrt();
    let noise_scale = cfg.cluster_spread / weight_norm;
    let mut records = Vec::with_capacity(cfg.n_identities * cfg.records_per_identity);
    for id in 0..cfg.n_identities {
        let raw: Vec<f64> = gaussian(&mut rng, d).iter().zip(&weights).map(|(g, w)| g * w).collect();
        let centroid = l2_normalize(&EmbeddingVector::new(raw)?)?;
        for _ in 0..cfg.records_per_identity {
            let mut x: Vec<f64> = centroid
                .values()
                .iter()
                .zip(gaussian(&mut rng, d))
                .zip(&weights)
                .map(|((c, g), w)| c + g * w * noise_scale)
                .collect();
            for (block, per_attr) in patterns.iter().enumerate() {
                let pattern = &per_attr[classes[block][id]];
                for (k, p) in pattern.iter().enumerate() {
                    x[block * ATTR_BLOCK + k] += p * offset_scale;
                }
            }
            records.push(SubjectRecord {
                embedding: l2_normalize(&EmbeddingVector::new(x)?)?,
                identity: id as u32,
                age_bucket: classes[0][id],
                gender: classes[1][id],
                ethnicity: classes[2][id],
            });
        }
    }
    Ok(Dataset { records, dim: d, class_counts: counts, split_tag: SplitTag::Train })
}

/// Per-identity split: each identity with at least two records lands in both parts;
/// singletons go to train. Record order is preserved within each part.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), Error> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut is_train = vec![false; ds.records.len()];
    for id in ds.identities() {
        let mut idx: Vec<usize> = (0..ds.records.len()).filter(|&i| ds.records[i].identity == id).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = if n == 1 { 1 } else { ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1) };
        for &i in &idx[..k] {
            is_train[i] = true;
        }
    }
    let part = |want: bool, tag: SplitTag| Dataset {
        records: ds.records.iter().zip(&is_train).filter(|(_, &t)| t == want).map(|(r, _)| r.clone()).collect(),
        dim: ds.dim,
        class_counts: ds.class_counts,
        split_tag: tag,
    };
    Ok((part(true, SplitTag::Train), part(false, SplitTag::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { dim: 192, n_identities: 12, records_per_identity: 6, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let c = generate_dataset(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_counts() {
        let ds = generate_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(ds.len(), 4000);
        assert_eq!(ds.identities().len(), 80);
        ds.validate().unwrap();
    }

    #[test]
    fn unit_norm_and_balanced_classes() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.records.iter().all(|r| (r.embedding.norm() - 1.0).abs() < 1e-9));
        for a in Attribute::ALL {
            let k = cfg.attr_class_counts.get(a);
            let per_class: Vec<usize> = (0..k).map(|c| ds.labels(a).iter().filter(|&&l| l == c).count()).collect();
            let ids_per_class: Vec<usize> = per_class.iter().map(|n| n / cfg.records_per_identity).collect();
            let lo = cfg.n_identities / k;
            assert!(ids_per_class.iter().all(|&n| n == lo || n == lo + 1), "{ids_per_class:?}");
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_dataset(&SynthConfig { dim: 100, ..small() }).is_err());
        assert!(generate_dataset(&SynthConfig { cluster_spread: 0.0, ..small() }).is_err());
        assert!(generate_dataset(&SynthConfig { n_identities: 0, ..small() }).is_err());
    }

    #[test]
    fn split_policy() {
        let mut ds = generate_dataset(&small()).unwrap();
        let (tr, te) = split_dataset(&ds, 0.5, 3).unwrap();
        assert_eq!(tr.len() + te.len(), ds.len());
        assert_eq!(tr.len(), 36);
        assert_eq!(tr.identities(), te.identities());
        assert_eq!(split_dataset(&ds, 0.5, 3).unwrap(), (tr, te));
        assert!(matches!(split_dataset(&ds, 1.0, 3), Err(Error::InvalidFraction(_))));
        ds.records.truncate(7);
        let (tr, te) = split_dataset(&ds, 0.5, 3).unwrap();
        assert!(tr.records.iter().any(|r| r.identity == 1));
        assert!(!te.records.iter().any(|r| r.identity == 1));
    }
}
