//! Word-sized modular arithmetic for NTT-friendly primes below 2^61.

/// A prime modulus with a precomputed Barrett ratio `floor(2^128 / q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    ratio: u128,
}

const LO_MASK: u128 = (1u128 << 64) - 1;

/// Largest modulus the reduction routines support.
pub const MAX_MODULUS_BITS: u32 = 61;

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 2, "modulus must exceed 2");
        assert!(
            64 - value.leading_zeros() <= MAX_MODULUS_BITS,
            "modulus exceeds {MAX_MODULUS_BITS} bits"
        );
        Self {
            value,
            ratio: u128::MAX / value as u128,
        }
    }

    #[inline(always)]
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Reduces any 128-bit integer modulo `q`.
    #[inline(always)]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let x0 = x & LO_MASK;
        let x1 = x >> 64;
        let m0 = self.ratio & LO_MASK;
        let m1 = self.ratio >> 64;
        let carry = (x0 * m0) >> 64;
        let mid_a = x0 * m1;
        let mid_b = x1 * m0;
        let mid = (mid_a & LO_MASK) + (mid_b & LO_MASK) + carry;
        let quot = x1 * m1 + (mid_a >> 64) + (mid_b >> 64) + (mid >> 64);
        let mut r = x.wrapping_sub(quot.wrapping_mul(self.value as u128)) as u64;
        while r >= self.value {
            r -= self.value;
        }
        r
    }

    #[inline(always)]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else {
            self.reduce_u128(x as u128)
        }
    }

    /// Maps a signed integer into `[0, q)`.
    #[inline(always)]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        if x >= 0 {
            self.reduce(x as u64)
        } else {
            let r = self.reduce(x.unsigned_abs());
            if r == 0 {
                0
            } else {
                self.value - r
            }
        }
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat's little theorem; `q` must be prime.
    pub fn inv(&self, a: u64) -> u64 {
        let a = self.reduce(a);
        assert!(a != 0, "zero has no inverse");
        self.pow(a, self.value - 2)
    }

    /// Precomputes `floor(w * 2^64 / q)` for Shoup multiplication by the constant `w`.
    #[inline(always)]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` for a constant `w` with precomputed `w_shoup`.
    #[inline(always)]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline(always)]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            -((self.value - a) as i64)
        } else {
            a as i64
        }
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod_u64(r, b, m);
        }
        b = mul_mod_u64(b, b, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in SMALL {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Direction in which [`ntt_primes`] walks away from `2^bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimeSide {
    Below,
    Above,
}

/// Finds `count` primes `q ≡ 1 (mod 2n)` closest to `2^bits` on the requested side,
/// skipping anything listed in `exclude`.
pub fn ntt_primes(bits: u32, n: usize, count: usize, side: PrimeSide, exclude: &[u64]) -> Vec<u64> {
    let step = 2 * n as u64;
    let center = 1u64 << bits;
    let mut out = Vec::with_capacity(count);
    let mut k = 1u64;
    while out.len() < count {
        let candidate = match side {
            PrimeSide::Below => match center.checked_sub(k * step) {
                Some(c) => c + 1,
                None => break,
            },
            PrimeSide::Above => center + k * step + 1,
        };
        if is_prime(candidate) && !exclude.contains(&candidate) && !out.contains(&candidate) {
            out.push(candidate);
        }
        k += 1;
    }
    out
}

/// Smallest-generator primitive `2n`-th root of unity modulo prime `q` (needs `q ≡ 1 mod 2n`).
pub fn primitive_root_2n(q: u64, n: usize) -> Option<u64> {
    let m = 2 * n as u64;
    if (q - 1) % m != 0 {
        return None;
    }
    let modulus = Modulus::new(q);
    let exp = (q - 1) / m;
    (2..q.min(1 << 20)).find_map(|x| {
        let g = modulus.pow(x, exp);
        // order exactly 2n iff g^n = -1
        (modulus.pow(g, n as u64) == q - 1).then_some(g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn miller_rabin_known_values() {
        assert!(is_prime(2));
        assert!(!is_prime(1));
        assert!(!is_prime(561));
        assert!(is_prime(18_446_744_073_709_551_557));
    }

    #[test]
    fn ntt_primes_are_congruent() {
        for side in [PrimeSide::Below, PrimeSide::Above] {
            let ps = ntt_primes(40, 1024, 3, side, &[]);
            assert_eq!(ps.len(), 3);
            for p in ps {
                assert!(is_prime(p));
                assert_eq!(p % 2048, 1);
                match side {
                    PrimeSide::Below => assert!(p < 1 << 40),
                    PrimeSide::Above => assert!(p > 1 << 40),
                }
            }
        }
    }

    #[test]
    fn primitive_root_has_order_2n() {
        let q = ntt_primes(30, 64, 1, PrimeSide::Below, &[])[0];
        let psi = primitive_root_2n(q, 64).unwrap();
        let m = Modulus::new(q);
        assert_eq!(m.pow(psi, 128), 1);
        assert_eq!(m.pow(psi, 64), q - 1);
    }

    proptest! {
        #[test]
        fn barrett_matches_u128_remainder(a in any::<u64>(), b in any::<u64>()) {
            let q = 2_305_843_009_213_693_951u64; // 2^61 - 1
            let m = Modulus::new(q);
            let (a, b) = (a % q, b % q);
            prop_assert_eq!(m.mul(a, b), ((a as u128 * b as u128) % q as u128) as u64);
        }

        #[test]
        fn reduce_u128_any_input(x in any::<u128>()) {
            let q = 1_099_511_922_689u64;
            let m = Modulus::new(q);
            prop_assert_eq!(m.reduce_u128(x), (x % q as u128) as u64);
        }

        #[test]
        fn shoup_matches_plain(a in any::<u64>(), w in any::<u64>()) {
            let q = 1_152_921_504_606_830_593u64;
            let m = Modulus::new(q);
            let w = w % q;
            prop_assert_eq!(m.mul_shoup(a, w, m.shoup(w)), ((a as u128 * w as u128) % q as u128) as u64);
        }
    }
}
