//! Canonical-embedding encoder.
//!
//! Slot `j` of a plaintext polynomial `m(X)` is `m(ζ^(5^j)) / Δ` where `ζ` is a
//! primitive `2N`-th complex root of unity. With this ordering the Galois map
//! `X -> X^5` rotates slots left by one, and ring products are slotwise products.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::context::{CkksContext, RnsPoly};
use crate::HeError;

/// Encoded slot vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub(crate) poly: RnsPoly,
    pub(crate) scale: f64,
    pub(crate) digest: [u8; 32],
}

impl Plaintext {
    pub fn level(&self) -> usize {
        self.poly.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn poly(&self) -> &RnsPoly {
        &self.poly
    }
}

/// FFT variant over the rotation group `{5^j mod 2N}`.
#[derive(Clone, Debug)]
pub(crate) struct SpecialFft {
    slots: usize,
    m: usize,
    rot_group: Vec<usize>,
    ksi: Vec<Complex64>,
}

impl SpecialFft {
    pub(crate) fn new(n: usize) -> Self {
        let slots = n / 2;
        let m = 2 * n;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = (g * 5) % m;
        }
        let ksi = (0..=m)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64))
            .collect();
        Self { slots, m, rot_group, ksi }
    }

    fn bit_reverse_permute(vals: &mut [Complex64]) {
        let n = vals.len();
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    /// `vals[j] <- Σ_i vals[i] · ζ^(5^j · i)` (coefficients to slots).
    pub(crate) fn forward(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        debug_assert_eq!(size, self.slots);
        Self::bit_reverse_permute(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            let lenq = len << 2;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * self.m / lenq;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// Inverse of [`SpecialFft::forward`].
    pub(crate) fn inverse(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        debug_assert_eq!(size, self.slots);
        let mut len = size;
        while len >= 2 {
            let lenh = len >> 1;
            let lenq = len << 2;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - (self.rot_group[j] % lenq)) * self.m / lenq;
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len >>= 1;
        }
        Self::bit_reverse_permute(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }
}

impl CkksContext {
    /// Encodes up to `slot_count` reals (zero-padded) at the given scale and level.
    pub fn encode(&self, values: &[f64], scale: f64, level: usize) -> Result<Plaintext, HeError> {
        let slots = self.slot_count();
        if values.len() > slots {
            return Err(HeError::TooManyValues { len: values.len(), slots });
        }
        if level > self.max_level() {
            return Err(HeError::InvalidLevel(level));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(HeError::NonFinite(*bad));
        }
        let mut u: Vec<Complex64> = (0..slots)
            .map(|i| Complex64::new(values.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fft().inverse(&mut u);
        let n = self.degree();
        let limit = (self.params().modulus_chain[0] / 2) as f64;
        let mut coeffs = vec![0i64; n];
        for (i, z) in u.iter().enumerate() {
            let re = (z.re * scale).round();
            let im = (z.im * scale).round();
            if !(re.abs() < limit && im.abs() < limit) {
                return Err(HeError::ScaleOverflow);
            }
            coeffs[i] = re as i64;
            coeffs[i + slots] = im as i64;
        }
        Ok(Plaintext {
            poly: self.poly_from_signed(&coeffs, level, false),
            scale,
            digest: *self.digest(),
        })
    }

    /// Encodes at the canonical scale of `level`.
    pub fn encode_at(&self, values: &[f64], level: usize) -> Result<Plaintext, HeError> {
        self.encode(values, self.scale_at(level.min(self.max_level())), level)
    }

    /// Real parts of all `slot_count` slots.
    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<f64>, HeError> {
        self.check_digest(&pt.digest)?;
        let coeffs = self.poly_to_centered_f64(&pt.poly);
        let slots = self.slot_count();
        let inv = 1.0 / pt.scale;
        let mut z: Vec<Complex64> = (0..slots)
            .map(|i| Complex64::new(coeffs[i] * inv, coeffs[i + slots] * inv))
            .collect();
        self.fft().forward(&mut z);
        Ok(z.into_iter().map(|c| c.re).collect())
    }
}
