//! Plaintext template protection: PolyProtect, MIU block shuffling, NFR, and the
//! Laplace mechanism.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::Error;

/// PolyProtect secret: output `j` is `Σ_i c_i · w_j[i]^{e_i}` over window `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PPParams {
    pub m: usize,
    #[serde(rename = "C")]
    pub c_bound: i64,
    pub overlap: usize,
    pub coefficients: Vec<i64>,
    pub exponents: Vec<u32>,
    pub user_seed: u64,
}

impl PPParams {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.m < 2 {
            return bad(format!("m = {} must be at least 2", self.m));
        }
        if self.overlap >= self.m {
            return bad(format!("overlap {} must be below m = {}", self.overlap, self.m));
        }
        if self.coefficients.len() != self.m || self.exponents.len() != self.m {
            return bad("coefficients and exponents need m entries".into());
        }
        if self.coefficients.iter().any(|&c| c == 0 || c.abs() > self.c_bound) {
            return bad(format!("coefficients must be nonzero with |c| <= {}", self.c_bound));
        }
        let mut e = self.exponents.clone();
        e.sort_unstable();
        if e.iter().enumerate().any(|(i, &x)| x as usize != i + 1) {
            return bad("exponents must be a permutation of 1..=m".into());
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.m - self.overlap
    }

    /// `⌈(D − m) / stride⌉ + 1`.
    pub fn output_len(&self, dim: usize) -> usize {
        (dim - self.m).div_ceil(self.stride()) + 1
    }
}

pub fn polyprotect_gen_params(m: usize, c_bound: i64, overlap: usize, user_seed: u64) -> Result<PPParams, Error> {
    if m < 2 || c_bound < 1 || overlap >= m {
        return Err(Error::InvalidParams(format!("m = {m}, C = {c_bound}, overlap = {overlap}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(user_seed);
    let coefficients = (0..m)
        .map(|_| {
            let mag = rng.random_range(1..=c_bound);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let mut exponents: Vec<u32> = (1..=m as u32).collect();
    exponents.shuffle(&mut rng);
    Ok(PPParams { m, c_bound, overlap, coefficients, exponents, user_seed })
}

pub fn polyprotect_apply(v: &EmbeddingVector, p: &PPParams) -> Result<EmbeddingVector, Error> {
    p.validate()?;
    let x = v.values();
    if x.len() < p.m {
        return Err(Error::DimTooSmall { dim: x.len(), needed: p.m });
    }
    let out = (0..p.output_len(x.len()))
        .map(|j| {
            let start = j * p.stride();
            (0..p.m)
                .map(|i| {
                    let w = x.get(start + i).copied().unwrap_or(0.0);
                    p.coefficients[i] as f64 * w.powi(p.exponents[i] as i32)
                })
                .sum()
        })
        .collect();
    EmbeddingVector::new(out)
}

/// Block permutation: output block `t` is input block `permutation[t]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MIUParams {
    pub block_size: usize,
    pub permutation: Vec<usize>,
    pub seed: u64,
}

pub fn miu_gen_params(dim: usize, block_size: usize, seed: u64) -> Result<MIUParams, Error> {
    if block_size == 0 || block_size > dim {
        return Err(Error::InvalidBlockSize(block_size));
    }
    let mut permutation: Vec<usize> = (0..dim.div_ceil(block_size)).collect();
    permutation.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    Ok(MIUParams { block_size, permutation, seed })
}

fn check_miu(dim: usize, p: &MIUParams) -> Result<(), Error> {
    if p.block_size == 0 || p.block_size > dim {
        return Err(Error::InvalidBlockSize(p.block_size));
    }
    let blocks = dim.div_ceil(p.block_size);
    let mut seen = vec![false; blocks];
    if p.permutation.len() != blocks || p.permutation.iter().any(|&b| b >= blocks || std::mem::replace(&mut seen[b], true)) {
        return Err(Error::InvalidParams(format!("permutation is not a bijection on {blocks} blocks")));
    }
    Ok(())
}

pub fn miu_apply(v: &EmbeddingVector, p: &MIUParams) -> Result<EmbeddingVector, Error> {
    check_miu(v.dim(), p)?;
    let x = v.values();
    let k = p.block_size;
    let out = p
        .permutation
        .iter()
        .flat_map(|&b| x[b * k..((b + 1) * k).min(x.len())].iter().copied())
        .collect();
    EmbeddingVector::new(out)
}

/// Undoes [`miu_apply`].
pub fn miu_invert(v: &EmbeddingVector, p: &MIUParams) -> Result<EmbeddingVector, Error> {
    check_miu(v.dim(), p)?;
    let x = v.values();
    let k = p.block_size;
    let mut out = vec![0.0; x.len()];
    let mut pos = 0;
    for &b in &p.permutation {
        let len = ((b + 1) * k).min(x.len()) - b * k;
        out[b * k..b * k + len].copy_from_slice(&x[pos..pos + len]);
        pos += len;
    }
    EmbeddingVector::new(out)
}

/// Enlarged template size.
pub const NFR_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NFRTemplatePair {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Seeded enlargement map `v -> tanh(W v)` with `W` of shape `4096 × D`.
#[derive(Clone, Debug)]
pub struct NfrTransform {
    dim: usize,
    weights: Vec<f64>,
    seed: u64,
}

impl NfrTransform {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let weights = (0..NFR_SIZE * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { dim, weights, seed }
    }

    pub fn protect(&self, v: &EmbeddingVector) -> Result<NFRTemplatePair, Error> {
        if v.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: v.dim() });
        }
        if v.values().iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector);
        }
        let x = v.values();
        let positive: Vec<f64> = self
            .weights
            .chunks_exact(self.dim)
            .map(|row| crate::embedding::dot(row, x).tanh())
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let distinct = positive.iter().any(|&p| p != positive[0]);
        let negative = (0..NFR_SIZE)
            .map(|i| loop {
                let j = rng.random_range(0..NFR_SIZE - 1);
                let j = if j >= i { j + 1 } else { j };
                if positive[j] != positive[i] || !distinct {
                    break positive[j];
                }
            })
            .collect();
        Ok(NFRTemplatePair { positive, negative })
    }
}

pub fn nfr_protect(v: &EmbeddingVector, seed: u64) -> Result<NFRTemplatePair, Error> {
    NfrTransform::new(v.dim(), seed).protect(v)
}

/// `1 − (matching positions)/n`, where positions match when they differ by at most `tau`.
pub fn nfr_compare(probe_positive: &[f64], gallery_negative: &[f64], tau: f64) -> Result<f64, Error> {
    if probe_positive.len() != gallery_negative.len() || probe_positive.is_empty() {
        return Err(Error::DimMismatch { expected: probe_positive.len(), found: gallery_negative.len() });
    }
    let hits = probe_positive
        .iter()
        .zip(gallery_negative)
        .filter(|(p, n)| (*p - *n).abs() <= tau)
        .count();
    Ok(1.0 - hits as f64 / probe_positive.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DPParams {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub seed: u64,
}

impl DPParams {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self { epsilon, sensitivity: 2.0, seed }
    }

    /// Laplace scale `b = Δf / ε`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// Draws from `Laplace(0, b)` by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `v + n`, `n_i ~ Laplace(0, Δf/ε)`. The noise is a fixed seeded standard draw
/// times `b`, so one seed gives the same direction for every `ε`.
pub fn dp_protect(v: &EmbeddingVector, p: &DPParams) -> Result<EmbeddingVector, Error> {
    if !(p.epsilon > 0.0 && p.epsilon.is_finite()) || !(p.sensitivity > 0.0 && p.sensitivity.is_finite()) {
        return Err(Error::InvalidParams(format!("epsilon {} and sensitivity {} must be positive", p.epsilon, p.sensitivity)));
    }
    let b = p.scale();
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let out = v.values().iter().map(|x| x + b * sample_laplace(&mut rng, 1.0)).collect();
    EmbeddingVector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn pp(m: usize, overlap: usize, c: &[i64], e: &[u32]) -> PPParams {
        PPParams { m, c_bound: 50, overlap, coefficients: c.to_vec(), exponents: e.to_vec(), user_seed: 0 }
    }

    #[test]
    fn default_params_and_determinism() {
        let p = polyprotect_gen_params(5, 50, 0, 42).unwrap();
        assert_eq!((p.m, p.c_bound, p.overlap), (5, 50, 0));
        p.validate().unwrap();
        assert_eq!(p, polyprotect_gen_params(5, 50, 0, 42).unwrap());
        let q = polyprotect_gen_params(2, 1, 0, 9).unwrap();
        assert!(q.coefficients.iter().all(|c| c.abs() == 1));
        let mut e = q.exponents.clone();
        e.sort();
        assert_eq!(e, vec![1, 2]);
        assert!(polyprotect_gen_params(5, 50, 5, 1).is_err());
    }

    #[test]
    fn polyprotect_worked_examples() {
        let out = polyprotect_apply(&ev(&[1.0, 2.0, 3.0, 4.0]), &pp(2, 0, &[2, -3], &[1, 2])).unwrap();
        assert_eq!(out.values(), &[-10.0, -42.0]);
        let out = polyprotect_apply(&ev(&[1.0, 2.0, 3.0]), &pp(2, 1, &[1, 1], &[1, 2])).unwrap();
        assert_eq!(out.values(), &[5.0, 11.0]);
        let p = polyprotect_gen_params(5, 50, 0, 1).unwrap();
        let out = polyprotect_apply(&ev(&[0.0; 64]), &p).unwrap();
        assert_eq!(out.dim(), 13);
        assert!(out.values().iter().all(|&x| x == 0.0));
        assert!(matches!(polyprotect_apply(&ev(&[1.0; 3]), &p), Err(Error::DimTooSmall { .. })));
    }

    #[test]
    fn tail_window_is_zero_padded() {
        let out = polyprotect_apply(&ev(&[1.0, 2.0, 3.0]), &pp(2, 0, &[1, 1], &[1, 2])).unwrap();
        assert_eq!(out.values(), &[1.0 + 4.0, 3.0]);
    }

    #[test]
    fn miu_examples() {
        let p = MIUParams { block_size: 2, permutation: vec![1, 0], seed: 0 };
        assert_eq!(miu_apply(&ev(&[1.0, 2.0, 3.0, 4.0]), &p).unwrap().values(), &[3.0, 4.0, 1.0, 2.0]);
        let id = MIUParams { block_size: 2, permutation: vec![0, 1], seed: 0 };
        assert_eq!(miu_apply(&ev(&[1.0, 2.0, 3.0, 4.0]), &id).unwrap().values(), &[1.0, 2.0, 3.0, 4.0]);
        let short = MIUParams { block_size: 2, permutation: vec![2, 0, 1], seed: 0 };
        assert_eq!(miu_apply(&ev(&[1.0, 2.0, 3.0, 4.0, 5.0]), &short).unwrap().values(), &[5.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(miu_gen_params(4, 0, 1), Err(Error::InvalidBlockSize(0))));
        let dup = MIUParams { block_size: 2, permutation: vec![0, 0], seed: 0 };
        assert!(miu_apply(&ev(&[1.0; 4]), &dup).is_err());
    }

    #[test]
    fn nfr_pair_properties() {
        let v = ev(&(0..32).map(|i| ((i * 7) % 11) as f64 - 5.0).collect::<Vec<_>>());
        let pair = nfr_protect(&v, 5).unwrap();
        assert_eq!(pair.positive.len(), 4096);
        assert_eq!(pair.negative.len(), 4096);
        for (i, n) in pair.negative.iter().enumerate() {
            assert_ne!(*n, pair.positive[i]);
            assert!(pair.positive.contains(n));
        }
        assert_eq!(pair, nfr_protect(&v, 5).unwrap());
        assert_eq!(nfr_protect(&ev(&[0.0; 4]), 1), Err(Error::ZeroVector));
    }

    #[test]
    fn nfr_scores() {
        let v = ev(&(0..16).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>());
        let pair = nfr_protect(&v, 3).unwrap();
        assert_eq!(nfr_compare(&pair.positive, &pair.positive, 1e-9).unwrap(), 0.0);
        assert!(nfr_compare(&pair.positive, &pair.negative, 0.0).unwrap() > 0.999);
        let own = nfr_compare(&pair.positive, &pair.negative, 1e-3).unwrap();
        assert!(own > 0.9, "{own}");
        assert!(nfr_compare(&[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn dp_scale_and_determinism() {
        let p = DPParams::new(0.1, 4);
        assert!((p.scale() - 20.0).abs() < 1e-12);
        let v = ev(&[0.6, 0.8]);
        assert_eq!(dp_protect(&v, &p).unwrap(), dp_protect(&v, &p).unwrap());
        assert!(dp_protect(&v, &DPParams::new(0.0, 1)).is_err());
    }

    #[test]
    fn laplace_moments() {
        let b = 20.0;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_laplace(&mut rng, b)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.5, "mean {mean}");
        assert!((var / (2.0 * b * b) - 1.0).abs() < 0.05, "var {var}");
    }

    proptest! {
        #[test]
        fn miu_roundtrip(v in prop::collection::vec(-1.0f64..1.0, 4..80), k in 1usize..10, seed in any::<u64>()) {
            prop_assume!(k <= v.len());
            let v = ev(&v);
            let p = miu_gen_params(v.dim(), k, seed).unwrap();
            let shuffled = miu_apply(&v, &p).unwrap();
            let mut a = shuffled.values().to_vec();
            let mut b = v.values().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            prop_assert_eq!(miu_invert(&shuffled, &p).unwrap(), v);
        }

        #[test]
        fn polyprotect_length_and_determinism(d in 5usize..100, m in 2usize..8, overlap_frac in 0.0f64..1.0, seed in any::<u64>()) {
            prop_assume!(d >= m);
            let overlap = ((m as f64 * overlap_frac) as usize).min(m - 1);
            let p = polyprotect_gen_params(m, 50, overlap, seed).unwrap();
            let v = ev(&(0..d).map(|i| ((i * 31 + 7) % 13) as f64 / 13.0 - 0.5).collect::<Vec<_>>());
            let out = polyprotect_apply(&v, &p).unwrap();
            prop_assert_eq!(out.dim(), (d - m).div_ceil(m - overlap) + 1);
            prop_assert_eq!(out, polyprotect_apply(&v, &p).unwrap());
        }
    }
}
