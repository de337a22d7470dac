//! Encrypted-domain operations: inner products, polynomial evaluation, cosine
//! similarity and PolyProtect on packed ciphertexts.
//!
//! Vectors of dimension `D` are packed into blocks of `next_pow2(D)` slots, so one
//! ciphertext carries `slot_count / block` vectors and every operation acts on all
//! of them at once. Scalar results (inner products, cosines) land in the first
//! slot of each block.

use std::collections::BTreeMap;

use embshield_ckks::{Ciphertext, CkksContext, HeError, KeySet};
use serde::{Deserialize, Serialize};

use crate::protect::PPParams;
use crate::Error;

/// Polynomial approximation of `1/√x` on `[lo, hi]`, monomial coefficients ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyApprox {
    pub coefficients: Vec<f64>,
    pub degree: usize,
    pub interval: [f64; 2],
    pub max_rel_error: f64,
}

impl PolyApprox {
    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.interval[0] && x <= self.interval[1]
    }

    pub fn check_domain(&self, x: f64) -> Result<(), Error> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::DomainViolation { value: x, lo: self.interval[0], hi: self.interval[1] })
        }
    }

    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, Error> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Points on the audit grid.
pub const AUDIT_POINTS: usize = 10_001;

/// Largest `max|R_ii| / min|R_ii|` accepted from the QR factorization.
const MAX_CONDITION: f64 = 1e12;

/// Least-squares fit of `1/√x` on Chebyshev nodes over `[lo, hi]`, minimizing the
/// relative residual `p(x)·√x − 1`. The fit is done in the Chebyshev basis and
/// converted to monomials; the recorded error is the maximum relative error over a
/// uniform grid of [`AUDIT_POINTS`] points.
pub fn fit_invsqrt_poly(degree: usize, lo: f64, hi: f64, n_nodes: usize) -> Result<PolyApprox, Error> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidInterval { lo, hi });
    }
    if degree == 0 || n_nodes <= degree {
        return Err(Error::InvalidParams(format!("degree {degree} needs more than {degree} nodes, got {n_nodes}")));
    }
    let cols = degree + 1;
    let mut a = vec![vec![0.0; cols]; n_nodes];
    let mut rhs = vec![0.0; n_nodes];
    for r in 0..n_nodes {
        let t = -(std::f64::consts::PI * (2 * r + 1) as f64 / (2 * n_nodes) as f64).cos();
        let x = 0.5 * (hi - lo) * t + 0.5 * (hi + lo);
        let w = x.sqrt();
        let (mut t0, mut t1) = (1.0, t);
        for (k, cell) in a[r].iter_mut().enumerate() {
            *cell = w * if k == 0 { 1.0 } else { t1 };
            if k > 0 {
                let t2 = 2.0 * t * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
        }
        rhs[r] = 1.0;
    }
    let (cheb, cond) = least_squares_qr(a, rhs);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let coefficients = chebyshev_to_monomial(&cheb, lo, hi);
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let mut p = PolyApprox { coefficients, degree, interval: [lo, hi], max_rel_error: 0.0 };
    p.max_rel_error = audit_rel_error(&p);
    Ok(p)
}

/// `max |p(x)·√x − 1|` over the uniform audit grid.
pub fn audit_rel_error(p: &PolyApprox) -> f64 {
    let [lo, hi] = p.interval;
    (0..AUDIT_POINTS)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (AUDIT_POINTS - 1) as f64;
            (p.eval(x) * x.sqrt() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Householder QR solve of an overdetermined system; also returns `max|R_ii|/min|R_ii|`.
fn least_squares_qr(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> (Vec<f64>, f64) {
    let rows = a.len();
    let cols = a[0].len();
    for k in 0..cols {
        let norm = (k..rows).map(|r| a[r][k] * a[r][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (vec![0.0; cols], f64::INFINITY);
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|r| a[r][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for c in k..cols {
            let s = 2.0 * (k..rows).map(|r| v[r - k] * a[r][c]).sum::<f64>() / vnorm2;
            for r in k..rows {
                a[r][c] -= s * v[r - k];
            }
        }
        let s = 2.0 * (k..rows).map(|r| v[r - k] * b[r]).sum::<f64>() / vnorm2;
        for r in k..rows {
            b[r] -= s * v[r - k];
        }
    }
    let diag: Vec<f64> = (0..cols).map(|k| a[k][k].abs()).collect();
    let cond = diag.iter().cloned().fold(0.0, f64::max) / diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let s: f64 = (k + 1..cols).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    (x, cond)
}

/// Rewrites `Σ a_k T_k(t)`, `t = (2x − lo − hi)/(hi − lo)`, in powers of `x`.
fn chebyshev_to_monomial(cheb: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = cheb.len();
    let mut in_t = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    prev[0] = 1.0;
    if n > 1 {
        cur[1] = 1.0;
    }
    for (k, &ak) in cheb.iter().enumerate() {
        let tk = if k == 0 { &prev } else { &cur };
        for (dst, src) in in_t.iter_mut().zip(tk) {
            *dst += ak * src;
        }
        if k >= 1 && k + 1 < n {
            let mut next = vec![0.0; n];
            for j in 0..n - 1 {
                next[j + 1] += 2.0 * cur[j];
            }
            for j in 0..n {
                next[j] -= prev[j];
            }
            prev = std::mem::replace(&mut cur, next);
        }
    }
    let alpha = 2.0 / (hi - lo);
    let beta = -(hi + lo) / (hi - lo);
    let mut out = vec![0.0; n];
    for (j, &bj) in in_t.iter().enumerate() {
        let mut binom = 1.0;
        for i in 0..=j {
            out[i] += bj * binom * alpha.powi(i as i32) * beta.powi((j - i) as i32);
            binom = binom * (j - i) as f64 / (i + 1) as f64;
        }
    }
    out
}

/// Slot layout: each vector occupies a power-of-two block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packing {
    pub dim: usize,
    pub block: usize,
    pub per_ct: usize,
}

impl Packing {
    pub fn new(dim: usize, slot_count: usize) -> Result<Self, Error> {
        let block = dim.next_power_of_two();
        if dim == 0 || block > slot_count {
            return Err(Error::InvalidDim(dim));
        }
        Ok(Self { dim, block, per_ct: slot_count / block })
    }

    /// Concatenates up to `per_ct` vectors into one slot array.
    pub fn pack(&self, vectors: &[&[f64]]) -> Result<Vec<f64>, Error> {
        if vectors.len() > self.per_ct {
            return Err(Error::InvalidData(format!("{} vectors exceed {} per ciphertext", vectors.len(), self.per_ct)));
        }
        let mut slots = vec![0.0; self.per_ct * self.block];
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(Error::DimMismatch { expected: self.dim, found: v.len() });
            }
            slots[k * self.block..k * self.block + self.dim].copy_from_slice(v);
        }
        Ok(slots)
    }

    /// First slot of every block.
    pub fn block_starts(&self, slots: &[f64]) -> Vec<f64> {
        (0..self.per_ct).map(|k| slots[k * self.block]).collect()
    }

    /// 1 at the first slot of every block, 0 elsewhere.
    pub fn block_start_mask(&self) -> Vec<f64> {
        (0..self.per_ct * self.block).map(|i| if i % self.block == 0 { 1.0 } else { 0.0 }).collect()
    }

    /// 1 on the `dim` slots of block `k`, 0 elsewhere.
    pub fn block_mask(&self, k: usize) -> Vec<f64> {
        (0..self.per_ct * self.block)
            .map(|i| if i / self.block == k && i % self.block < self.dim { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Brings both ciphertexts to the lower of their levels.
fn align(ctx: &CkksContext, a: &Ciphertext, b: &Ciphertext) -> Result<(Ciphertext, Ciphertext), Error> {
    Ok(ctx.align(a, b)?)
}

fn add_aligned(ctx: &CkksContext, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, Error> {
    let (a, b) = align(ctx, a, b)?;
    Ok(ctx.add(&a, &b)?)
}

fn mul_aligned(ctx: &CkksContext, keys: &KeySet, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, Error> {
    let (a, b) = align(ctx, a, b)?;
    Ok(ctx.mul_rescale(&a, &b, &keys.relin)?)
}

/// Multiplies by `c` (optionally times a slot mask) and rescales.
fn mul_coefficient(ctx: &CkksContext, x: &Ciphertext, c: f64, mask: Option<&[f64]>) -> Result<Ciphertext, Error> {
    match mask {
        None => Ok(ctx.rescale(&ctx.mul_const(x, c)?)?),
        Some(m) => {
            let vals: Vec<f64> = m.iter().map(|v| v * c).collect();
            let pt = ctx.encode_at(&vals, x.level())?;
            Ok(ctx.mul_plain_rescale(x, &pt)?)
        }
    }
}

/// Adds `c` (optionally times a slot mask) at the ciphertext's own scale.
fn add_coefficient(ctx: &CkksContext, x: &Ciphertext, c: f64, mask: Option<&[f64]>) -> Result<Ciphertext, Error> {
    match mask {
        None => Ok(ctx.add_const(x, c)),
        Some(m) => {
            let vals: Vec<f64> = m.iter().map(|v| v * c).collect();
            let pt = ctx.encode(&vals, x.scale(), x.level())?;
            Ok(ctx.add_plain(x, &pt)?)
        }
    }
}

/// Powers of one ciphertext, each computed with minimal depth `⌈log2 k⌉`.
pub struct PowerCache<'a> {
    ctx: &'a CkksContext,
    keys: &'a KeySet,
    powers: BTreeMap<usize, Ciphertext>,
}

impl<'a> PowerCache<'a> {
    pub fn new(ctx: &'a CkksContext, keys: &'a KeySet, x: &Ciphertext) -> Self {
        let mut powers = BTreeMap::new();
        powers.insert(1, x.clone());
        Self { ctx, keys, powers }
    }

    pub fn get(&mut self, k: usize) -> Result<Ciphertext, Error> {
        assert!(k >= 1, "power must be positive");
        if let Some(p) = self.powers.get(&k) {
            return Ok(p.clone());
        }
        let p = if k.is_power_of_two() {
            let half = self.get(k / 2)?;
            self.ctx.mul_rescale(&half, &half, &self.keys.relin)?
        } else {
            let hi = 1usize << (usize::BITS - 1 - k.leading_zeros());
            let a = self.get(hi)?;
            let b = self.get(k - hi)?;
            mul_aligned(self.ctx, self.keys, &a, &b)?
        };
        self.powers.insert(k, p.clone());
        Ok(p)
    }
}

/// Multiplicative depth consumed by [`enc_poly_eval`] for a given degree.
pub fn poly_eval_depth(degree: usize) -> usize {
    if degree <= 1 {
        return degree;
    }
    (usize::BITS - (degree - 1).leading_zeros()) as usize + 1
}

/// Evaluates `p` slotwise with a baby-step/giant-step split
/// `p = low + x^t · high`, `t` the largest power of two not above the degree.
///
/// With a mask every coefficient is multiplied by it, so slots where the mask is
/// zero come out as (approximately) zero at no extra depth.
pub fn enc_poly_eval(
    ctx: &CkksContext,
    keys: &KeySet,
    x: &Ciphertext,
    coefficients: &[f64],
    mask: Option<&[f64]>,
) -> Result<Ciphertext, Error> {
    let degree = coefficients.len().saturating_sub(1);
    if x.level() < poly_eval_depth(degree) {
        return Err(HeError::LevelExhausted.into());
    }
    let baby = 1usize << (usize::BITS - degree.leading_zeros()).div_ceil(2);
    let mut cache = PowerCache::new(ctx, keys, x);
    eval_rec(ctx, keys, &mut cache, coefficients, baby, mask)
}

fn eval_rec(
    ctx: &CkksContext,
    keys: &KeySet,
    cache: &mut PowerCache<'_>,
    coeffs: &[f64],
    baby: usize,
    mask: Option<&[f64]>,
) -> Result<Ciphertext, Error> {
    let degree = coeffs.len().saturating_sub(1);
    if degree < baby.max(2) {
        let c0 = coeffs.first().copied().unwrap_or(0.0);
        let mut acc: Option<Ciphertext> = None;
        for (i, &c) in coeffs.iter().enumerate().skip(1) {
            let term = mul_coefficient(ctx, &cache.get(i)?, c, mask)?;
            acc = Some(match acc {
                None => term,
                Some(a) => add_aligned(ctx, &a, &term)?,
            });
        }
        let acc = match acc {
            Some(a) => a,
            None => mul_coefficient(ctx, &cache.get(1)?, 0.0, mask)?,
        };
        return add_coefficient(ctx, &acc, c0, mask);
    }
    let t = 1usize << (usize::BITS - 1 - degree.leading_zeros());
    let low = eval_rec(ctx, keys, cache, &coeffs[..t], baby, mask)?;
    let giant = cache.get(t)?;
    let high = if coeffs.len() == t + 1 {
        mul_coefficient(ctx, &giant, coeffs[t], mask)?
    } else {
        let h = eval_rec(ctx, keys, cache, &coeffs[t..], baby, mask)?;
        mul_aligned(ctx, keys, &giant, &h)?
    };
    add_aligned(ctx, &low, &high)
}

/// Slotwise product followed by `log2 n` rotate-and-add folds; the first slot of
/// every `n`-slot block holds that block's inner product.
pub fn enc_inner_product(ctx: &CkksContext, keys: &KeySet, a: &Ciphertext, b: &Ciphertext, n: usize) -> Result<Ciphertext, Error> {
    if !n.is_power_of_two() || n > ctx.slot_count() {
        return Err(Error::InvalidDim(n));
    }
    let mut acc = mul_aligned(ctx, keys, a, b)?;
    let mut step = n / 2;
    while step >= 1 {
        let r = ctx.rotate(&acc, step as i64, keys)?;
        acc = ctx.add(&acc, &r)?;
        step /= 2;
    }
    Ok(acc)
}

/// `enc(⟨a,b⟩ · p(⟨a,a⟩) · p(⟨b,b⟩))`, per `n`-slot block. The polynomial
/// coefficients are multiplied by `mask` (typically the block-start mask) so
/// that only meaningful slots carry values.
pub fn enc_cosine(
    ctx: &CkksContext,
    keys: &KeySet,
    a: &Ciphertext,
    b: &Ciphertext,
    n: usize,
    p: &PolyApprox,
    mask: Option<&[f64]>,
) -> Result<Ciphertext, Error> {
    let ab = enc_inner_product(ctx, keys, a, b, n)?;
    let inv_a = enc_poly_eval(ctx, keys, &enc_inner_product(ctx, keys, a, a, n)?, &p.coefficients, mask)?;
    let inv_b = enc_poly_eval(ctx, keys, &enc_inner_product(ctx, keys, b, b, n)?, &p.coefficients, mask)?;
    let norms = mul_aligned(ctx, keys, &inv_a, &inv_b)?;
    mul_aligned(ctx, keys, &ab, &norms)
}

/// Same as [`enc_cosine`] when the inverse norms are already available.
pub fn enc_cosine_with_norms(
    ctx: &CkksContext,
    keys: &KeySet,
    a: &Ciphertext,
    b: &Ciphertext,
    n: usize,
    inv_norm_a: &Ciphertext,
    inv_norm_b: &Ciphertext,
) -> Result<Ciphertext, Error> {
    let ab = enc_inner_product(ctx, keys, a, b, n)?;
    let norms = mul_aligned(ctx, keys, inv_norm_a, inv_norm_b)?;
    mul_aligned(ctx, keys, &ab, &norms)
}

/// Public normalizer `s` with `s² = n_out · Σ_i c_i² (2e_i − 1)!! / D^{e_i}`, the
/// expected squared norm of a PolyProtect output for inputs with entries of
/// variance `1/D`. Dividing by `s` keeps squared norms near 1.
pub fn pp_normalizer(p: &PPParams, dim: usize) -> f64 {
    let n_out = p.output_len(dim) as f64;
    let d = dim as f64;
    let sum: f64 = p
        .coefficients
        .iter()
        .zip(&p.exponents)
        .map(|(&c, &e)| {
            let dfact: f64 = (1..=e).map(|k| (2 * k - 1) as f64).product();
            (c as f64).powi(2) * dfact / d.powi(e as i32)
        })
        .sum();
    (n_out * sum).sqrt()
}

/// PolyProtect on packed ciphertexts. For each window offset `i` the input is
/// multiplied by a mask holding `c_i · out_scale` at positions `j·stride + i`,
/// raised to `e_i` using a shared power cache, and rotated left by `i`; the sum puts
/// output `j` at slot `j·stride` of each block. Depth is `1 + ⌈log2 max(e_i)⌉`.
pub fn enc_polyprotect(
    ctx: &CkksContext,
    keys: &KeySet,
    v: &Ciphertext,
    p: &PPParams,
    layout: &Packing,
    out_scale: f64,
) -> Result<Ciphertext, Error> {
    p.validate()?;
    if layout.dim < p.m {
        return Err(Error::DimTooSmall { dim: layout.dim, needed: p.m });
    }
    let n_out = p.output_len(layout.dim);
    let stride = p.stride();
    let mut cache = PowerCache::new(ctx, keys, v);
    let mut acc: Option<Ciphertext> = None;
    for i in 0..p.m {
        let mut mask = vec![0.0; layout.per_ct * layout.block];
        for k in 0..layout.per_ct {
            for j in 0..n_out {
                let pos = j * stride + i;
                if pos < layout.dim {
                    mask[k * layout.block + pos] = p.coefficients[i] as f64 * out_scale;
                }
            }
        }
        let masked = ctx.mul_plain_rescale(v, &ctx.encode_at(&mask, v.level())?)?;
        let e = p.exponents[i] as usize;
        let term = if e == 1 { masked } else { mul_aligned(ctx, keys, &masked, &cache.get(e - 1)?)? };
        let term = ctx.rotate(&term, i as i64, keys)?;
        acc = Some(match acc {
            None => term,
            Some(a) => add_aligned(ctx, &a, &term)?,
        });
    }
    Ok(acc.expect("m >= 2"))
}

/// Depth consumed by [`enc_polyprotect`].
pub fn polyprotect_depth(p: &PPParams) -> usize {
    let max_e = p.exponents.iter().copied().max().unwrap_or(1) as usize;
    if max_e <= 1 {
        1
    } else {
        1 + ((usize::BITS - (max_e - 2).leading_zeros()) as usize).max(1)
    }
}

/// Keeps only block `k` (one vector) of a packed ciphertext; costs one level.
pub fn extract_block(ctx: &CkksContext, ct: &Ciphertext, layout: &Packing, k: usize) -> Result<Ciphertext, Error> {
    let pt = ctx.encode_at(&layout.block_mask(k), ct.level())?;
    Ok(ctx.mul_plain_rescale(ct, &pt)?)
}
