//! Precomputed tables shared by every operation, and the RNS ring element type.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::arith::Modulus;
use crate::encoding::SpecialFft;
use crate::ntt::{bit_reverse, NttTable};
use crate::params::HeParams;
use crate::HeError;

/// Ring element in residue-number-system form, every limb in NTT (evaluation) form.
///
/// Limb `i < level + 1` is modulo `q_i`; when `special` is set one extra limb
/// modulo the special prime follows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    pub(crate) limbs: Vec<Vec<u64>>,
    pub(crate) level: usize,
    pub(crate) special: bool,
}

impl RnsPoly {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn has_special(&self) -> bool {
        self.special
    }

    pub fn limbs(&self) -> &[Vec<u64>] {
        &self.limbs
    }

    pub(crate) fn from_limbs(limbs: Vec<Vec<u64>>, level: usize, special: bool) -> Self {
        debug_assert_eq!(limbs.len(), level + 1 + special as usize);
        Self { limbs, level, special }
    }
}

/// Immutable context: parameters plus every table derived from them.
pub struct CkksContext {
    params: HeParams,
    digest: [u8; 32],
    /// Data primes first, special prime last.
    tables: Vec<NttTable>,
    scales: Vec<f64>,
    /// `rescale_inv[l][i] = q_l^{-1} mod q_i` for `i < l`.
    rescale_inv: Vec<Vec<(u64, u64)>>,
    /// `P^{-1} mod q_i`.
    special_inv: Vec<(u64, u64)>,
    /// `P mod q_i`.
    special_mod: Vec<u64>,
    /// `garner_inv[i][k] = q_k^{-1} mod q_i` for `k < i`.
    garner_inv: Vec<Vec<u64>>,
    fft: SpecialFft,
    galois_perms: RwLock<HashMap<usize, Arc<Vec<u32>>>>,
}

impl std::fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkksContext")
            .field("preset", &self.params.preset_name)
            .field("ring_degree", &self.params.ring_degree)
            .field("levels", &self.params.chain_len())
            .finish()
    }
}

impl CkksContext {
    pub fn new(params: HeParams) -> Result<Arc<Self>, HeError> {
        params.validate()?;
        let n = params.ring_degree;
        let mut primes = params.modulus_chain.clone();
        primes.push(params.special_prime);
        let tables = primes
            .iter()
            .map(|&q| {
                NttTable::new(q, n)
                    .ok_or_else(|| HeError::InvalidParams(format!("no 2N-th root of unity mod {q}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let chain = &params.modulus_chain;
        let l = chain.len();

        let mut scales = vec![0.0; l];
        scales[l - 1] = params.scale();
        for lvl in (1..l).rev() {
            scales[lvl - 1] = scales[lvl] * scales[lvl] / chain[lvl] as f64;
        }

        let rescale_inv = (0..l)
            .map(|lvl| {
                (0..lvl)
                    .map(|i| {
                        let m = tables[i].modulus();
                        let v = m.inv(chain[lvl]);
                        (v, m.shoup(v))
                    })
                    .collect()
            })
            .collect();
        let p = params.special_prime;
        let special_inv = (0..l)
            .map(|i| {
                let m = tables[i].modulus();
                let v = m.inv(p);
                (v, m.shoup(v))
            })
            .collect();
        let special_mod = (0..l).map(|i| tables[i].modulus().reduce(p)).collect();
        let garner_inv = (0..l)
            .map(|i| (0..i).map(|k| tables[i].modulus().inv(chain[k])).collect())
            .collect();

        Ok(Arc::new(Self {
            digest: params.digest(),
            fft: SpecialFft::new(n),
            params,
            tables,
            scales,
            rescale_inv,
            special_inv,
            special_mod,
            garner_inv,
            galois_perms: RwLock::new(HashMap::new()),
        }))
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn degree(&self) -> usize {
        self.params.ring_degree
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count()
    }

    pub fn max_level(&self) -> usize {
        self.params.max_level()
    }

    /// Canonical scale at `level`: `Δ` at the top, `Δ_{l-1} = Δ_l² / q_l` below.
    /// Products of two canonical operands rescale onto the canonical scale.
    pub fn scale_at(&self, level: usize) -> f64 {
        self.scales[level]
    }

    pub(crate) fn fft(&self) -> &SpecialFft {
        &self.fft
    }

    pub(crate) fn special_index(&self) -> usize {
        self.tables.len() - 1
    }

    /// Table index of limb `k` of a polynomial at the given basis.
    #[inline]
    pub(crate) fn table_index(&self, level: usize, special: bool, k: usize) -> usize {
        if special && k == level + 1 {
            self.special_index()
        } else {
            k
        }
    }

    pub(crate) fn table(&self, idx: usize) -> &NttTable {
        &self.tables[idx]
    }

    pub(crate) fn modulus(&self, idx: usize) -> &Modulus {
        self.tables[idx].modulus()
    }

    pub(crate) fn check_digest(&self, other: &[u8; 32]) -> Result<(), HeError> {
        if other == &self.digest {
            Ok(())
        } else {
            Err(HeError::ParamsMismatch)
        }
    }

    // ---- polynomial construction ------------------------------------------------

    /// Lifts small signed coefficients into every limb and transforms them.
    pub(crate) fn poly_from_signed(&self, coeffs: &[i64], level: usize, special: bool) -> RnsPoly {
        let count = level + 1 + special as usize;
        let limbs = (0..count)
            .map(|k| {
                let t = self.table(self.table_index(level, special, k));
                let m = t.modulus();
                let mut limb: Vec<u64> = coeffs.iter().map(|&c| m.reduce_i64(c)).collect();
                t.forward(&mut limb);
                limb
            })
            .collect();
        RnsPoly::from_limbs(limbs, level, special)
    }

    pub(crate) fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, level: usize, special: bool) -> RnsPoly {
        let n = self.degree();
        let count = level + 1 + special as usize;
        let limbs = (0..count)
            .map(|k| {
                let q = self.modulus(self.table_index(level, special, k)).value();
                (0..n).map(|_| rng.random_range(0..q)).collect()
            })
            .collect();
        RnsPoly::from_limbs(limbs, level, special)
    }

    pub(crate) fn sample_ternary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        (0..self.degree()).map(|_| rng.random_range(-1i64..=1)).collect()
    }

    /// Rounded continuous Gaussian, truncated at six standard deviations.
    pub(crate) fn sample_error<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        let sigma = self.params.error_stddev;
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let bound = 6.0 * sigma;
        (0..self.degree())
            .map(|_| loop {
                let x: f64 = normal.sample(rng);
                if x.abs() <= bound {
                    break x.round() as i64;
                }
            })
            .collect()
    }

    // ---- limb-wise arithmetic ---------------------------------------------------

    pub(crate) fn poly_add_assign(&self, a: &mut RnsPoly, b: &RnsPoly) {
        debug_assert_eq!((a.level, a.special), (b.level, b.special));
        for (k, (x, y)) in a.limbs.iter_mut().zip(&b.limbs).enumerate() {
            let m = *self.modulus(self.table_index(a.level, a.special, k));
            for (u, v) in x.iter_mut().zip(y) {
                *u = m.add(*u, *v);
            }
        }
    }

    pub(crate) fn poly_sub_assign(&self, a: &mut RnsPoly, b: &RnsPoly) {
        debug_assert_eq!((a.level, a.special), (b.level, b.special));
        for (k, (x, y)) in a.limbs.iter_mut().zip(&b.limbs).enumerate() {
            let m = *self.modulus(self.table_index(a.level, a.special, k));
            for (u, v) in x.iter_mut().zip(y) {
                *u = m.sub(*u, *v);
            }
        }
    }

    pub(crate) fn poly_neg_assign(&self, a: &mut RnsPoly) {
        for (k, x) in a.limbs.iter_mut().enumerate() {
            let m = *self.modulus(self.table_index(a.level, a.special, k));
            for u in x.iter_mut() {
                *u = m.neg(*u);
            }
        }
    }

    /// Pointwise product; `b` may carry more limbs than `a` (only the shared prefix is used),
    /// but bases must agree on the special limb.
    pub(crate) fn poly_mul(&self, a: &RnsPoly, b: &RnsPoly) -> RnsPoly {
        let mut out = a.clone();
        self.poly_mul_assign(&mut out, b);
        out
    }

    pub(crate) fn poly_mul_assign(&self, a: &mut RnsPoly, b: &RnsPoly) {
        let count = a.limbs.len();
        for k in 0..count {
            let idx = self.table_index(a.level, a.special, k);
            let bk = if idx == self.special_index() { b.limbs.len() - 1 } else { k };
            let m = *self.modulus(idx);
            for (u, v) in a.limbs[k].iter_mut().zip(&b.limbs[bk]) {
                *u = m.mul(*u, *v);
            }
        }
    }

    /// `a += b ⊙ c` pointwise.
    pub(crate) fn poly_mul_acc(&self, a: &mut RnsPoly, b: &RnsPoly, c: &RnsPoly) {
        for k in 0..a.limbs.len() {
            let m = *self.modulus(self.table_index(a.level, a.special, k));
            for ((u, x), y) in a.limbs[k].iter_mut().zip(&b.limbs[k]).zip(&c.limbs[k]) {
                *u = m.add(*u, m.mul(*x, *y));
            }
        }
    }

    /// Multiplies every limb by an integer constant given per limb.
    pub(crate) fn poly_mul_scalar_assign(&self, a: &mut RnsPoly, scalar_per_limb: &[u64]) {
        for (k, x) in a.limbs.iter_mut().enumerate() {
            let m = *self.modulus(self.table_index(a.level, a.special, k));
            let w = scalar_per_limb[k];
            let ws = m.shoup(w);
            for u in x.iter_mut() {
                *u = m.mul_shoup(*u, w, ws);
            }
        }
    }

    /// Keeps only limbs `0..=level` (no scale change).
    pub(crate) fn poly_truncate(&self, a: &RnsPoly, level: usize) -> RnsPoly {
        debug_assert!(!a.special && level <= a.level);
        RnsPoly::from_limbs(a.limbs[..=level].to_vec(), level, false)
    }

    /// Returns the same element restricted to the data limbs `0..=level` and, if
    /// requested, the special limb, taken from a full-basis polynomial.
    pub(crate) fn poly_restrict(&self, a: &RnsPoly, level: usize, special: bool) -> RnsPoly {
        debug_assert!(level <= a.level);
        let mut limbs = a.limbs[..=level].to_vec();
        if special {
            debug_assert!(a.special);
            limbs.push(a.limbs.last().expect("special limb").clone());
        }
        RnsPoly::from_limbs(limbs, level, special)
    }

    /// Divides by the last data prime with rounding and drops that limb.
    pub(crate) fn poly_rescale(&self, a: &RnsPoly) -> RnsPoly {
        debug_assert!(!a.special && a.level >= 1);
        let top = a.level;
        let top_mod = *self.modulus(top);
        let mut last = a.limbs[top].clone();
        self.table(top).inverse(&mut last);
        let limbs = (0..top)
            .map(|i| {
                let t = self.table(i);
                let m = t.modulus();
                let mut r: Vec<u64> = last.iter().map(|&c| m.reduce_i64(top_mod.center(c))).collect();
                t.forward(&mut r);
                let (w, ws) = self.rescale_inv[top][i];
                a.limbs[i]
                    .iter()
                    .zip(&r)
                    .map(|(&x, &y)| m.mul_shoup(m.sub(x, y), w, ws))
                    .collect()
            })
            .collect();
        RnsPoly::from_limbs(limbs, top - 1, false)
    }

    /// Divides by the special prime with rounding and drops the special limb.
    pub(crate) fn poly_mod_down(&self, a: &RnsPoly) -> RnsPoly {
        debug_assert!(a.special);
        let sp = self.special_index();
        let p_mod = *self.modulus(sp);
        let mut last = a.limbs[a.level + 1].clone();
        self.table(sp).inverse(&mut last);
        let limbs = (0..=a.level)
            .map(|i| {
                let t = self.table(i);
                let m = t.modulus();
                let mut r: Vec<u64> = last.iter().map(|&c| m.reduce_i64(p_mod.center(c))).collect();
                t.forward(&mut r);
                let (w, ws) = self.special_inv[i];
                a.limbs[i]
                    .iter()
                    .zip(&r)
                    .map(|(&x, &y)| m.mul_shoup(m.sub(x, y), w, ws))
                    .collect()
            })
            .collect();
        RnsPoly::from_limbs(limbs, a.level, false)
    }

    pub(crate) fn special_mod(&self, i: usize) -> u64 {
        self.special_mod[i]
    }

    /// Centered coefficients of `a` as reals via mixed-radix (Garner) reconstruction.
    pub(crate) fn poly_to_centered_f64(&self, a: &RnsPoly) -> Vec<f64> {
        debug_assert!(!a.special);
        let n = self.degree();
        let count = a.level + 1;
        let coeff_limbs: Vec<Vec<u64>> = (0..count)
            .map(|i| {
                let mut c = a.limbs[i].clone();
                self.table(i).inverse(&mut c);
                c
            })
            .collect();
        if count == 1 {
            let m = self.modulus(0);
            return coeff_limbs[0].iter().map(|&c| m.center(c) as f64).collect();
        }
        let chain = &self.params.modulus_chain;
        let mut digits = vec![0u64; count];
        let mixed_radix = |residues: &mut dyn FnMut(usize) -> u64, digits: &mut [u64]| -> f64 {
            for i in 0..count {
                let m = self.modulus(i);
                let mut t = residues(i);
                for k in 0..i {
                    t = m.mul(m.sub(t, m.reduce(digits[k])), self.garner_inv[i][k]);
                }
                digits[i] = t;
            }
            let mut acc = 0.0f64;
            for i in (0..count).rev() {
                acc = acc * chain[i] as f64 + digits[i] as f64;
            }
            acc
        };
        (0..n)
            .map(|j| {
                let pos = mixed_radix(&mut |i| coeff_limbs[i][j], &mut digits);
                let neg = mixed_radix(&mut |i| self.modulus(i).neg(coeff_limbs[i][j]), &mut digits);
                if pos <= neg {
                    pos
                } else {
                    -neg
                }
            })
            .collect()
    }

    // ---- automorphisms ----------------------------------------------------------

    /// Index permutation realizing `X -> X^g` on NTT-form limbs: `out[k] = in[perm[k]]`.
    pub(crate) fn galois_permutation(&self, g: usize) -> Arc<Vec<u32>> {
        if let Some(p) = self.galois_perms.read().expect("lock").get(&g) {
            return p.clone();
        }
        let n = self.degree();
        let log_n = self.table(0).log_n();
        let two_n = 2 * n;
        let perm: Vec<u32> = (0..n)
            .map(|k| {
                let e = 2 * bit_reverse(k, log_n) + 1;
                let e_src = (e * g) % two_n;
                bit_reverse((e_src - 1) / 2, log_n) as u32
            })
            .collect();
        let perm = Arc::new(perm);
        self.galois_perms.write().expect("lock").insert(g, perm.clone());
        perm
    }

    pub(crate) fn poly_automorphism(&self, a: &RnsPoly, g: usize) -> RnsPoly {
        let perm = self.galois_permutation(g);
        let limbs = a
            .limbs
            .iter()
            .map(|x| perm.iter().map(|&p| x[p as usize]).collect())
            .collect();
        RnsPoly::from_limbs(limbs, a.level, a.special)
    }

    /// Galois element for a left slot rotation by `step`: `5^step mod 2N`.
    pub fn galois_element(&self, step: usize) -> usize {
        let two_n = 2 * self.degree();
        let mut g = 1usize;
        for _ in 0..(step % self.slot_count()) {
            g = (g * 5) % two_n;
        }
        g
    }
}
