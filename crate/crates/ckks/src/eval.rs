//! Ciphertexts, encryption, decryption and homomorphic evaluation.

use rand::Rng;

use crate::context::{CkksContext, RnsPoly};
use crate::encoding::Plaintext;
use crate::keys::{KeySet, KeySwitchKey, PublicKey, SecretKey};
use crate::HeError;

/// Relative tolerance under which two scales are treated as equal.
pub const SCALE_TOLERANCE: f64 = 1e-8;

/// Encrypted slot vector: `(c0, c1)`, or `(c0, c1, c2)` before relinearization.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) parts: Vec<RnsPoly>,
    pub(crate) scale: f64,
    pub(crate) digest: [u8; 32],
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.parts[0].level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn size(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[RnsPoly] {
        &self.parts
    }

    pub fn params_digest(&self) -> &[u8; 32] {
        &self.digest
    }
}

fn same_scale(a: f64, b: f64) -> bool {
    (a / b - 1.0).abs() < SCALE_TOLERANCE
}

impl PublicKey {
    /// Fresh encryption at the plaintext's level.
    pub fn encrypt<R: Rng + ?Sized>(&self, ctx: &CkksContext, pt: &Plaintext, rng: &mut R) -> Result<Ciphertext, HeError> {
        ctx.check_digest(&self.digest)?;
        ctx.check_digest(&pt.digest)?;
        let level = pt.level();
        let u = ctx.poly_from_signed(&ctx.sample_ternary(rng), level, false);
        let e0 = ctx.poly_from_signed(&ctx.sample_error(rng), level, false);
        let e1 = ctx.poly_from_signed(&ctx.sample_error(rng), level, false);
        let mut c0 = ctx.poly_mul(&u, &ctx.poly_truncate(&self.b, level));
        ctx.poly_add_assign(&mut c0, &e0);
        ctx.poly_add_assign(&mut c0, &pt.poly);
        let mut c1 = ctx.poly_mul(&u, &ctx.poly_truncate(&self.a, level));
        ctx.poly_add_assign(&mut c1, &e1);
        Ok(Ciphertext {
            parts: vec![c0, c1],
            scale: pt.scale,
            digest: *ctx.digest(),
        })
    }
}

impl SecretKey {
    pub fn decrypt(&self, ctx: &CkksContext, ct: &Ciphertext) -> Result<Plaintext, HeError> {
        ctx.check_digest(&self.digest)?;
        ctx.check_digest(&ct.digest)?;
        let level = ct.level();
        let s = ctx.poly_restrict(&self.poly, level, false);
        let mut acc = ct.parts[0].clone();
        let mut s_pow = s.clone();
        for (i, c) in ct.parts.iter().enumerate().skip(1) {
            if i > 1 {
                s_pow = ctx.poly_mul(&s_pow, &s);
            }
            let term = ctx.poly_mul(c, &s_pow);
            ctx.poly_add_assign(&mut acc, &term);
        }
        Ok(Plaintext {
            poly: acc,
            scale: ct.scale,
            digest: ct.digest,
        })
    }
}

impl CkksContext {
    fn check_pair(&self, a: &Ciphertext, b: &Ciphertext) -> Result<(), HeError> {
        self.check_digest(&a.digest)?;
        self.check_digest(&b.digest)?;
        if a.level() != b.level() {
            return Err(HeError::LevelMismatch { left: a.level(), right: b.level() });
        }
        Ok(())
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_pair(a, b)?;
        if !same_scale(a.scale, b.scale) {
            return Err(HeError::ScaleMismatch { left: a.scale, right: b.scale });
        }
        let (long, short) = if a.size() >= b.size() { (a, b) } else { (b, a) };
        let mut out = long.clone();
        for (x, y) in out.parts.iter_mut().zip(&short.parts) {
            self.poly_add_assign(x, y);
        }
        out.scale = a.scale;
        Ok(out)
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_pair(a, b)?;
        if !same_scale(a.scale, b.scale) {
            return Err(HeError::ScaleMismatch { left: a.scale, right: b.scale });
        }
        let mut out = a.clone();
        for (i, y) in b.parts.iter().enumerate() {
            match out.parts.get_mut(i) {
                Some(x) => self.poly_sub_assign(x, y),
                None => {
                    let mut neg = y.clone();
                    self.poly_neg_assign(&mut neg);
                    out.parts.push(neg);
                }
            }
        }
        Ok(out)
    }

    pub fn negate(&self, a: &Ciphertext) -> Ciphertext {
        let mut out = a.clone();
        for p in &mut out.parts {
            self.poly_neg_assign(p);
        }
        out
    }

    pub fn add_plain(&self, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, HeError> {
        self.check_digest(&a.digest)?;
        self.check_digest(&pt.digest)?;
        if pt.level() < a.level() {
            return Err(HeError::LevelMismatch { left: a.level(), right: pt.level() });
        }
        if !same_scale(a.scale, pt.scale) {
            return Err(HeError::ScaleMismatch { left: a.scale, right: pt.scale });
        }
        let mut out = a.clone();
        let p = self.poly_truncate(&pt.poly, a.level());
        self.poly_add_assign(&mut out.parts[0], &p);
        Ok(out)
    }

    /// Adds the real constant `c` to every slot (exact constant polynomial, no level cost).
    pub fn add_const(&self, a: &Ciphertext, c: f64) -> Ciphertext {
        let v = (c * a.scale).round() as i64;
        let mut out = a.clone();
        let level = a.level();
        for (k, limb) in out.parts[0].limbs.iter_mut().enumerate() {
            let m = *self.modulus(k);
            let r = m.reduce_i64(v);
            for u in limb.iter_mut() {
                *u = m.add(*u, r);
            }
        }
        debug_assert_eq!(out.parts[0].level, level);
        out
    }

    /// Multiplies by an integer exactly; scale and level are unchanged.
    pub fn mul_int(&self, a: &Ciphertext, k: i64) -> Ciphertext {
        let mut out = a.clone();
        let per_limb: Vec<u64> = (0..=a.level()).map(|i| self.modulus(i).reduce_i64(k)).collect();
        for p in &mut out.parts {
            self.poly_mul_scalar_assign(p, &per_limb);
        }
        out
    }

    /// Multiplies every slot by the real constant `c`, encoded at the canonical scale of
    /// the ciphertext's level. The result must be rescaled like any product.
    pub fn mul_const(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext, HeError> {
        let s = self.scale_at(a.level());
        let k = (c * s).round();
        if k.abs() >= (self.params().modulus_chain[0] / 2) as f64 {
            return Err(HeError::ScaleOverflow);
        }
        let mut out = self.mul_int(a, k as i64);
        out.scale = a.scale * s;
        Ok(out)
    }

    pub fn mul_plain(&self, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, HeError> {
        self.check_digest(&a.digest)?;
        self.check_digest(&pt.digest)?;
        if pt.level() < a.level() {
            return Err(HeError::LevelMismatch { left: a.level(), right: pt.level() });
        }
        let mut out = a.clone();
        for p in &mut out.parts {
            self.poly_mul_assign(p, &pt.poly);
        }
        out.scale = a.scale * pt.scale;
        Ok(out)
    }

    /// Tensor product without relinearization (three components).
    pub fn mul_raw(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_pair(a, b)?;
        if a.size() != 2 || b.size() != 2 {
            return Err(HeError::NotRelinearized);
        }
        if a.level() == 0 {
            return Err(HeError::LevelExhausted);
        }
        let d0 = self.poly_mul(&a.parts[0], &b.parts[0]);
        let mut d1 = self.poly_mul(&a.parts[0], &b.parts[1]);
        self.poly_mul_acc(&mut d1, &a.parts[1], &b.parts[0]);
        let d2 = self.poly_mul(&a.parts[1], &b.parts[1]);
        Ok(Ciphertext {
            parts: vec![d0, d1, d2],
            scale: a.scale * b.scale,
            digest: a.digest,
        })
    }

    pub fn relinearize(&self, a: &Ciphertext, relin: &KeySwitchKey) -> Result<Ciphertext, HeError> {
        self.check_digest(&relin.digest)?;
        match a.size() {
            2 => Ok(a.clone()),
            3 => {
                let (k0, k1) = self.key_switch(&a.parts[2], relin);
                let mut c0 = a.parts[0].clone();
                let mut c1 = a.parts[1].clone();
                self.poly_add_assign(&mut c0, &k0);
                self.poly_add_assign(&mut c1, &k1);
                Ok(Ciphertext { parts: vec![c0, c1], scale: a.scale, digest: a.digest })
            }
            n => Err(HeError::Malformed(format!("ciphertext with {n} components"))),
        }
    }

    /// Relinearized product; scale becomes `Δ_a·Δ_b` and the caller rescales.
    /// Fails with [`HeError::LevelExhausted`] at level 0, where no rescale is possible.
    pub fn mul(&self, a: &Ciphertext, b: &Ciphertext, relin: &KeySwitchKey) -> Result<Ciphertext, HeError> {
        let raw = self.mul_raw(a, b)?;
        self.relinearize(&raw, relin)
    }

    pub fn rescale(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_digest(&a.digest)?;
        let level = a.level();
        if level == 0 {
            return Err(HeError::LevelExhausted);
        }
        let q = self.params().modulus_chain[level] as f64;
        Ok(Ciphertext {
            parts: a.parts.iter().map(|p| self.poly_rescale(p)).collect(),
            scale: a.scale / q,
            digest: a.digest,
        })
    }

    /// `mul` followed by `rescale`.
    pub fn mul_rescale(&self, a: &Ciphertext, b: &Ciphertext, relin: &KeySwitchKey) -> Result<Ciphertext, HeError> {
        self.rescale(&self.mul(a, b, relin)?)
    }

    /// `mul_plain` followed by `rescale`.
    pub fn mul_plain_rescale(&self, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, HeError> {
        self.rescale(&self.mul_plain(a, pt)?)
    }

    /// Brings `a` down to `level`, landing on the canonical scale of that level. Each
    /// step multiplies by the integer `round(q_l · Δ_{l-1} / scale)` and rescales.
    pub fn level_down(&self, a: &Ciphertext, level: usize) -> Result<Ciphertext, HeError> {
        if level > a.level() {
            return Err(HeError::LevelMismatch { left: a.level(), right: level });
        }
        let mut cur = a.clone();
        while cur.level() > level {
            let l = cur.level();
            let q = self.params().modulus_chain[l] as f64;
            let k = (q * self.scale_at(l - 1) / cur.scale).round();
            let scaled = self.mul_int(&cur, k as i64);
            cur = self.rescale(&Ciphertext { scale: cur.scale * k, ..scaled })?;
        }
        Ok(cur)
    }

    /// Brings both operands to the lower of their two levels.
    pub fn align(&self, a: &Ciphertext, b: &Ciphertext) -> Result<(Ciphertext, Ciphertext), HeError> {
        let l = a.level().min(b.level());
        Ok((self.level_down(a, l)?, self.level_down(b, l)?))
    }

    /// Cyclic left rotation of the slots by `step` (negative steps rotate right).
    /// Steps without a dedicated key are composed from power-of-two keys.
    pub fn rotate(&self, a: &Ciphertext, step: i64, keys: &KeySet) -> Result<Ciphertext, HeError> {
        self.check_digest(&a.digest)?;
        if a.size() != 2 {
            return Err(HeError::NotRelinearized);
        }
        let slots = self.slot_count() as i64;
        let step = step.rem_euclid(slots) as usize;
        if step == 0 {
            return Ok(a.clone());
        }
        if let Some(key) = keys.rotations.get(&step) {
            return self.rotate_with_key(a, step, key);
        }
        let mut cur = a.clone();
        let mut bit = 1usize;
        while bit < slots as usize {
            if step & bit != 0 {
                let key = keys.rotations.get(&bit).ok_or(HeError::MissingRotationKey(bit))?;
                cur = self.rotate_with_key(&cur, bit, key)?;
            }
            bit <<= 1;
        }
        Ok(cur)
    }

    fn rotate_with_key(&self, a: &Ciphertext, step: usize, key: &KeySwitchKey) -> Result<Ciphertext, HeError> {
        self.check_digest(&key.digest)?;
        let g = self.galois_element(step);
        let c0 = self.poly_automorphism(&a.parts[0], g);
        let c1 = self.poly_automorphism(&a.parts[1], g);
        let (k0, k1) = self.key_switch(&c1, key);
        let mut out0 = c0;
        self.poly_add_assign(&mut out0, &k0);
        Ok(Ciphertext { parts: vec![out0, k1], scale: a.scale, digest: a.digest })
    }

    /// Returns `(k0, k1)` with `k0 + k1·s ≈ d·s'` where the key switches from `s'`.
    /// Per-prime digit decomposition, accumulation over `Q_l·P`, then division by `P`.
    fn key_switch(&self, d: &RnsPoly, key: &KeySwitchKey) -> (RnsPoly, RnsPoly) {
        let level = d.level;
        let n = self.degree();
        let sp = self.special_index();
        let targets: Vec<usize> = (0..=level).chain(std::iter::once(sp)).collect();
        let mut acc0 = vec![vec![0u128; n]; targets.len()];
        let mut acc1 = vec![vec![0u128; n]; targets.len()];
        let mut lifted = vec![0u64; n];
        for j in 0..=level {
            let mut coeff = d.limbs[j].clone();
            self.table(j).inverse(&mut coeff);
            let qj = *self.modulus(j);
            let (kb, ka) = &key.parts[j];
            for (t, &tbl) in targets.iter().enumerate() {
                let digit: &[u64] = if tbl == j {
                    &d.limbs[j]
                } else {
                    let m = self.modulus(tbl);
                    for (x, &c) in lifted.iter_mut().zip(&coeff) {
                        *x = m.reduce_i64(qj.center(c));
                    }
                    self.table(tbl).forward(&mut lifted);
                    &lifted
                };
                // key limbs: data limb index == tbl, special limb is the last one
                let kl = if tbl == sp { kb.limbs.len() - 1 } else { tbl };
                let (bl, al) = (&kb.limbs[kl], &ka.limbs[kl]);
                for (i, &x) in digit.iter().enumerate() {
                    acc0[t][i] += x as u128 * bl[i] as u128;
                    acc1[t][i] += x as u128 * al[i] as u128;
                }
            }
        }
        let finish = |acc: Vec<Vec<u128>>| {
            let limbs = acc
                .into_iter()
                .zip(&targets)
                .map(|(row, &tbl)| {
                    let m = self.modulus(tbl);
                    row.into_iter().map(|x| m.reduce_u128(x)).collect()
                })
                .collect();
            self.poly_mod_down(&RnsPoly::from_limbs(limbs, level, true))
        };
        (finish(acc0), finish(acc1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::HeParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn setup() -> (Arc<CkksContext>, KeySet, ChaCha20Rng) {
        let ctx = CkksContext::new(HeParams::toy()).unwrap();
        let keys = KeySet::generate(&ctx, 11).unwrap();
        (ctx, keys, ChaCha20Rng::seed_from_u64(5))
    }

    fn enc(ctx: &CkksContext, keys: &KeySet, rng: &mut ChaCha20Rng, v: &[f64]) -> Ciphertext {
        let pt = ctx.encode_at(v, ctx.max_level()).unwrap();
        keys.public.encrypt(ctx, &pt, rng).unwrap()
    }

    fn dec(ctx: &CkksContext, keys: &KeySet, ct: &Ciphertext) -> Vec<f64> {
        ctx.decode(&keys.secret.decrypt(ctx, ct).unwrap()).unwrap()
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn encrypt_decrypt_roundtrip() {
        let (ctx, keys, mut rng) = setup();
        let v: Vec<f64> = (0..ctx.slot_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let ct = enc(&ctx, &keys, &mut rng, &v);
        let e = max_err(&dec(&ctx, &keys, &ct), &v);
        assert!(e < ctx.params().precision_bound());
    }

    #[test]
    fn add_sub_and_constants() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[1.0, 2.0, 3.0]);
        let b = enc(&ctx, &keys, &mut rng, &[0.5, -1.0, 4.0]);
        let s = ctx.add(&a, &b).unwrap();
        assert!(max_err(&dec(&ctx, &keys, &s)[..3], &[1.5, 1.0, 7.0]) < 1e-4);
        let d = ctx.sub(&a, &b).unwrap();
        assert!(max_err(&dec(&ctx, &keys, &d)[..3], &[0.5, 3.0, -1.0]) < 1e-4);
        let c = ctx.add_const(&a, 0.25);
        assert!(max_err(&dec(&ctx, &keys, &c)[..4], &[1.25, 2.25, 3.25, 0.25]) < 1e-4);
        let k = ctx.mul_int(&a, -3);
        assert!(max_err(&dec(&ctx, &keys, &k)[..3], &[-3.0, -6.0, -9.0]) < 1e-4);
    }

    #[test]
    fn mul_relinearize_rescale() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[1.5, -2.0, 0.3]);
        let b = enc(&ctx, &keys, &mut rng, &[2.0, 0.5, -1.0]);
        let p = ctx.mul_rescale(&a, &b, &keys.relin).unwrap();
        assert_eq!(p.level(), 0);
        assert!((p.scale() / ctx.scale_at(0) - 1.0).abs() < 1e-9);
        assert!(max_err(&dec(&ctx, &keys, &p)[..3], &[3.0, -1.0, -0.3]) < 1e-3);
        let raw = ctx.mul_raw(&a, &b).unwrap();
        assert_eq!(raw.size(), 3);
        let r = ctx.rescale(&raw).unwrap();
        assert!(max_err(&dec(&ctx, &keys, &r)[..3], &[3.0, -1.0, -0.3]) < 1e-3);
    }

    #[test]
    fn plaintext_and_constant_products() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[1.0, 2.0, 3.0]);
        let pt = ctx.encode_at(&[2.0, 0.0, -1.0], ctx.max_level()).unwrap();
        let p = ctx.mul_plain_rescale(&a, &pt).unwrap();
        assert!(max_err(&dec(&ctx, &keys, &p)[..3], &[2.0, 0.0, -3.0]) < 1e-3);
        let c = ctx.rescale(&ctx.mul_const(&a, -0.5).unwrap()).unwrap();
        assert!(max_err(&dec(&ctx, &keys, &c)[..3], &[-0.5, -1.0, -1.5]) < 1e-3);
    }

    #[test]
    fn level_zero_multiplication_is_exhausted() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[1.0]);
        let p = ctx.mul_rescale(&a, &a, &keys.relin).unwrap();
        assert_eq!(ctx.mul(&p, &p, &keys.relin), Err(HeError::LevelExhausted));
        assert_eq!(ctx.rescale(&p), Err(HeError::LevelExhausted));
    }

    #[test]
    fn mismatches_are_reported() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[1.0]);
        let low = ctx.mul_rescale(&a, &a, &keys.relin).unwrap();
        assert!(matches!(ctx.add(&a, &low), Err(HeError::LevelMismatch { .. })));
        let scaled = ctx.mul_int(&a, 1);
        let odd = Ciphertext { scale: scaled.scale * 2.0, ..scaled };
        assert!(matches!(ctx.add(&a, &odd), Err(HeError::ScaleMismatch { .. })));
        let other = CkksContext::new(HeParams::generate("alt", 1 << 10, 40, 1, 30, 41)).unwrap();
        assert_eq!(keys.secret.decrypt(&other, &a).unwrap_err(), HeError::ParamsMismatch);
    }

    #[test]
    fn level_down_lands_on_canonical_scale() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[0.75, -0.25]);
        let d = ctx.level_down(&a, 0).unwrap();
        assert_eq!(d.level(), 0);
        assert!((d.scale() / ctx.scale_at(0) - 1.0).abs() < 1e-9);
        assert!(max_err(&dec(&ctx, &keys, &d)[..2], &[0.75, -0.25]) < 1e-3);
    }

    #[test]
    fn rotations_shift_slots_left() {
        let (ctx, keys, mut rng) = setup();
        let slots = ctx.slot_count();
        let v: Vec<f64> = (0..slots).map(|i| i as f64 / slots as f64).collect();
        let ct = enc(&ctx, &keys, &mut rng, &v);
        for step in [1i64, 3, 64, 255, -1] {
            let r = ctx.rotate(&ct, step, &keys).unwrap();
            let expect: Vec<f64> = (0..slots).map(|i| v[(i as i64 + step).rem_euclid(slots as i64) as usize]).collect();
            assert!(max_err(&dec(&ctx, &keys, &r), &expect) < 1e-4, "step {step}");
        }
    }

    #[test]
    fn missing_rotation_key_is_reported() {
        let ctx = CkksContext::new(HeParams::toy()).unwrap();
        let keys = KeySet::generate_with_rotations(&ctx, 1, &[1]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let ct = enc(&ctx, &keys, &mut rng, &[1.0]);
        assert!(ctx.rotate(&ct, 1, &keys).is_ok());
        assert_eq!(ctx.rotate(&ct, 2, &keys), Err(HeError::MissingRotationKey(2)));
    }

    #[test]
    fn encryption_is_probabilistic() {
        let (ctx, keys, mut rng) = setup();
        let a = enc(&ctx, &keys, &mut rng, &[1.0]);
        let b = enc(&ctx, &keys, &mut rng, &[1.0]);
        assert_ne!(a.to_bytes(), b.to_bytes());
    }
}
