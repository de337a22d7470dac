//! Ring, modulus-chain and scale configuration.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::arith::{is_prime, ntt_primes, PrimeSide, MAX_MODULUS_BITS};
use crate::HeError;

/// Named parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// `N = 2^10`, one multiplicative level. Unit tests only.
    Toy,
    /// `N = 2^13`, ten multiplicative levels. Used by the pipeline.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Desk => "desk",
        }
    }

    pub fn params(self) -> HeParams {
        match self {
            Preset::Toy => HeParams::toy(),
            Preset::Desk => HeParams::desk(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = HeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Preset::Toy),
            "desk" => Ok(Preset::Desk),
            other => Err(HeError::InvalidParams(format!("unknown preset `{other}`"))),
        }
    }
}

/// Scheme parameters.
///
/// `modulus_chain[0]` is the base prime that is never rescaled away; a fresh
/// ciphertext lives at level `modulus_chain.len() - 1`. The special prime is
/// only used inside key switching.
///
/// Security is *estimated*, not certified: `desk` has `log2(QP) ≈ 530` at
/// `N = 8192`, well above the roughly 218 bits that ring degree tolerates at
/// 128-bit security. Do not deploy these parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HeParams {
    pub preset_name: String,
    pub ring_degree: usize,
    pub modulus_chain: Vec<u64>,
    pub special_prime: u64,
    pub scale_bits: u32,
    pub error_stddev: f64,
}

impl HeParams {
    /// Builds a chain `[base, mid × n_mid]` plus a special prime. Middle primes sit just
    /// above `2^scale_bits`, base and special primes just below `2^base_bits`.
    pub fn generate(
        name: &str,
        ring_degree: usize,
        base_bits: u32,
        n_mid: usize,
        scale_bits: u32,
        special_bits: u32,
    ) -> Self {
        let base = ntt_primes(base_bits, ring_degree, 1, PrimeSide::Below, &[]);
        let mid = ntt_primes(scale_bits, ring_degree, n_mid, PrimeSide::Above, &base);
        let mut used = base.clone();
        used.extend(&mid);
        let special = ntt_primes(special_bits, ring_degree, 1, PrimeSide::Below, &used)[0];
        let mut chain = base;
        chain.extend(mid);
        Self {
            preset_name: name.to_string(),
            ring_degree,
            modulus_chain: chain,
            special_prime: special,
            scale_bits,
            error_stddev: 3.2,
        }
    }

    /// `N = 1024`, primes `{40, 30, 40}` bits (the last one special), `Δ = 2^30`.
    pub fn toy() -> Self {
        Self::generate("toy", 1 << 10, 40, 1, 30, 40)
    }

    /// `N = 8192`, primes `{60, 40 × 10, 60}` bits (the last one special), `Δ = 2^40`.
    pub fn desk() -> Self {
        Self::generate("desk", 1 << 13, 60, 10, 40, 60)
    }

    /// Documented worst-slot error of a fresh encryption: `1e-4` for `toy`
    /// (`Δ = 2^30`) and `1e-7` for `desk` (`Δ = 2^40`), i.e. about `2^17 / Δ`.
    pub fn precision_bound(&self) -> f64 {
        (17.0 - self.scale_bits as f64).exp2().max(1e-7).min(1e-4)
    }

    pub fn slot_count(&self) -> usize {
        self.ring_degree / 2
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }

    /// Number of data primes `L`.
    pub fn chain_len(&self) -> usize {
        self.modulus_chain.len()
    }

    pub fn max_level(&self) -> usize {
        self.modulus_chain.len() - 1
    }

    pub fn validate(&self) -> Result<(), HeError> {
        let n = self.ring_degree;
        let bad = |m: String| Err(HeError::InvalidParams(m));
        if !n.is_power_of_two() || n < 4 {
            return bad(format!("ring degree {n} is not a power of two >= 4"));
        }
        if self.modulus_chain.len() < 2 {
            return bad("modulus chain needs at least two primes".into());
        }
        let mut all = self.modulus_chain.clone();
        all.push(self.special_prime);
        for (i, &q) in all.iter().enumerate() {
            if 64 - q.leading_zeros() > MAX_MODULUS_BITS {
                return bad(format!("prime {q} exceeds {MAX_MODULUS_BITS} bits"));
            }
            if !is_prime(q) {
                return bad(format!("{q} is not prime"));
            }
            if q % (2 * n as u64) != 1 {
                return bad(format!("{q} is not 1 mod 2N"));
            }
            if all[..i].contains(&q) {
                return bad(format!("prime {q} appears twice"));
            }
        }
        let smallest = *self.modulus_chain.iter().min().expect("non-empty chain");
        if self.scale() >= smallest as f64 {
            return bad(format!("scale 2^{} is not below the smallest prime {smallest}", self.scale_bits));
        }
        if !(self.error_stddev > 0.0 && self.error_stddev.is_finite()) {
            return bad("error standard deviation must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 over a canonical little-endian encoding of every field except the name.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"embshield-ckks-params/1");
        h.update((self.ring_degree as u64).to_le_bytes());
        h.update((self.modulus_chain.len() as u64).to_le_bytes());
        for q in &self.modulus_chain {
            h.update(q.to_le_bytes());
        }
        h.update(self.special_prime.to_le_bytes());
        h.update(self.scale_bits.to_le_bytes());
        h.update(self.error_stddev.to_bits().to_le_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in [HeParams::toy(), HeParams::desk()] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn desk_has_twelve_primes_and_ten_levels() {
        let p = HeParams::desk();
        assert_eq!(p.chain_len() + 1, 12);
        assert_eq!(p.max_level(), 10);
        assert_eq!(p.slot_count(), 4096);
        assert!(p.modulus_chain[1..].iter().all(|&q| q >> 40 == 1));
        assert_eq!(64 - p.modulus_chain[0].leading_zeros(), 60);
        assert_eq!(64 - p.special_prime.leading_zeros(), 60);
    }

    #[test]
    fn toy_slots() {
        assert_eq!(HeParams::toy().slot_count(), 512);
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut p = HeParams::toy();
        p.ring_degree = 1000;
        assert!(p.validate().is_err());
        let mut p = HeParams::toy();
        p.modulus_chain.truncate(1);
        assert!(p.validate().is_err());
        let mut p = HeParams::toy();
        p.scale_bits = 45;
        assert!(p.validate().is_err());
        let mut p = HeParams::toy();
        p.modulus_chain[1] += 2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = HeParams::toy();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.scale_bits -= 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("desk".parse::<Preset>().unwrap(), Preset::Desk);
        assert!("huge".parse::<Preset>().is_err());
    }
}
