//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.
//!
//! The forward transform is an in-place Cooley-Tukey pass with twiddles
//! `psi^bitrev(k)`, the inverse is Gentleman-Sande with `psi^-bitrev(k)`.
//! Output index `k` holds the evaluation at `psi^(2*bitrev(k) + 1)`.

use crate::arith::{primitive_root_2n, Modulus};

#[derive(Clone, Debug)]
pub struct NttTable {
    modulus: Modulus,
    n: usize,
    log_n: u32,
    psi: u64,
    fwd: Vec<u64>,
    fwd_shoup: Vec<u64>,
    inv: Vec<u64>,
    inv_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

/// `a·w mod q` in `[0, 2q)`.
#[inline(always)]
fn lazy_mul_shoup(a: u64, w: u64, w_shoup: u64, q: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q))
}

pub(crate) fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

impl NttTable {
    /// Returns `None` when `q` admits no primitive `2n`-th root of unity.
    pub fn new(q: u64, n: usize) -> Option<Self> {
        assert!(n.is_power_of_two() && n >= 2);
        let modulus = Modulus::new(q);
        let psi = primitive_root_2n(q, n)?;
        let psi_inv = modulus.inv(psi);
        let log_n = n.trailing_zeros();
        let mut fwd = vec![0u64; n];
        let mut inv = vec![0u64; n];
        let mut pw = 1u64;
        let mut pw_inv = 1u64;
        for i in 0..n {
            let r = bit_reverse(i, log_n);
            fwd[r] = pw;
            inv[r] = pw_inv;
            pw = modulus.mul(pw, psi);
            pw_inv = modulus.mul(pw_inv, psi_inv);
        }
        let fwd_shoup = fwd.iter().map(|&w| modulus.shoup(w)).collect();
        let inv_shoup = inv.iter().map(|&w| modulus.shoup(w)).collect();
        let n_inv = modulus.inv(n as u64);
        Some(Self {
            modulus,
            n,
            log_n,
            psi,
            fwd,
            fwd_shoup,
            inv,
            inv_shoup,
            n_inv,
            n_inv_shoup: modulus.shoup(n_inv),
        })
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn psi(&self) -> u64 {
        self.psi
    }

    pub(crate) fn log_n(&self) -> u32 {
        self.log_n
    }

    /// Harvey butterflies with lazy reduction: values stay below `4q` between
    /// stages and are fully reduced at the end.
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.modulus.value();
        let two_q = 2 * q;
        let n = self.n;
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            for i in 0..m {
                let w = self.fwd[m + i];
                let ws = self.fwd_shoup[m + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let mut u = *x;
                    if u >= two_q {
                        u -= two_q;
                    }
                    let v = lazy_mul_shoup(*y, w, ws, q);
                    *x = u + v;
                    *y = u + two_q - v;
                }
            }
            m <<= 1;
        }
        for x in a.iter_mut() {
            if *x >= two_q {
                *x -= two_q;
            }
            if *x >= q {
                *x -= q;
            }
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.modulus.value();
        let two_q = 2 * q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let w = self.inv[h + i];
                let ws = self.inv_shoup[h + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    let mut s = u + v;
                    if s >= two_q {
                        s -= two_q;
                    }
                    *x = s;
                    *y = lazy_mul_shoup(u + two_q - v, w, ws, q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.modulus.mul_shoup(*x, self.n_inv, self.n_inv_shoup);
        }
    }

    /// Schoolbook product in `Z_q[X]/(X^N + 1)`; quadratic, kept for verification.
    pub fn negacyclic_schoolbook(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let q = &self.modulus;
        let n = self.n;
        let mut out = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                let p = q.mul(a[i], b[j]);
                let k = i + j;
                if k < n {
                    out[k] = q.add(out[k], p);
                } else {
                    out[k - n] = q.sub(out[k - n], p);
                }
            }
        }
        out
    }

    /// Product via forward transforms, pointwise multiply and inverse transform.
    pub fn negacyclic_mul(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut fa = a.to_vec();
        let mut fb = b.to_vec();
        self.forward(&mut fa);
        self.forward(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x = self.modulus.mul(*x, *y);
        }
        self.inverse(&mut fa);
        fa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{ntt_primes, PrimeSide};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn roundtrip_is_identity() {
        let n = 256;
        let q = ntt_primes(50, n, 1, PrimeSide::Below, &[])[0];
        let t = NttTable::new(q, n).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
        let mut b = a.clone();
        t.forward(&mut b);
        assert_ne!(a, b);
        t.inverse(&mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn output_order_is_bit_reversed_odd_powers() {
        let n = 16;
        let q = ntt_primes(30, n, 1, PrimeSide::Below, &[])[0];
        let t = NttTable::new(q, n).unwrap();
        let m = t.modulus();
        let a: Vec<u64> = (0..n as u64).map(|i| i * i + 3).collect();
        let mut f = a.clone();
        t.forward(&mut f);
        for (k, &val) in f.iter().enumerate() {
            let root = m.pow(t.psi(), (2 * bit_reverse(k, 4) + 1) as u64);
            let direct = a
                .iter()
                .rev()
                .fold(0u64, |acc, &c| m.add(m.mul(acc, root), c));
            assert_eq!(val, direct);
        }
    }

    #[test]
    fn x_times_x_pow_n_minus_1_wraps_negative() {
        let n = 8;
        let q = ntt_primes(20, n, 1, PrimeSide::Below, &[])[0];
        let t = NttTable::new(q, n).unwrap();
        let mut a = vec![0u64; n];
        let mut b = vec![0u64; n];
        a[1] = 1;
        b[n - 1] = 1;
        let prod = t.negacyclic_mul(&a, &b);
        let mut expect = vec![0u64; n];
        expect[0] = q - 1;
        assert_eq!(prod, expect);
    }
}
