//! Key generation: ternary secret, RLWE public key, and key-switching keys for
//! relinearization and power-of-two slot rotations.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::context::{CkksContext, RnsPoly};
use crate::HeError;

pub struct SecretKey {
    pub(crate) coeffs: Vec<i64>,
    /// Over every data prime plus the special prime.
    pub(crate) poly: RnsPoly,
    pub(crate) digest: [u8; 32],
}

impl SecretKey {
    pub fn coefficients(&self) -> &[i64] {
        &self.coeffs
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// `(b, a) = (-a·s + e, a)` over the data primes.
#[derive(Clone, Debug)]
pub struct PublicKey {
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
    pub(crate) digest: [u8; 32],
}

/// One `(b_j, a_j)` pair per data prime, each over `Q·P`, with
/// `b_j = -a_j·s + e_j + [i == j]·P·s'` in limb `i`.
#[derive(Clone, Debug)]
pub struct KeySwitchKey {
    pub(crate) parts: Vec<(RnsPoly, RnsPoly)>,
    pub(crate) digest: [u8; 32],
}

impl KeySwitchKey {
    pub fn parts(&self) -> &[(RnsPoly, RnsPoly)] {
        &self.parts
    }
}

/// Every key the scheme uses, all generated under one parameter digest.
#[derive(Debug)]
pub struct KeySet {
    pub secret: SecretKey,
    pub public: PublicKey,
    pub relin: KeySwitchKey,
    /// Left-rotation step → key for the Galois element `5^step`.
    pub rotations: BTreeMap<usize, KeySwitchKey>,
    pub params_digest: [u8; 32],
}

impl KeySet {
    /// Generates keys with rotation keys for every power-of-two step up to `slot_count / 2`.
    pub fn generate(ctx: &Arc<CkksContext>, seed: u64) -> Result<Self, HeError> {
        let steps: Vec<usize> = std::iter::successors(Some(1usize), |s| Some(s * 2))
            .take_while(|&s| s <= ctx.slot_count() / 2)
            .collect();
        Self::generate_with_rotations(ctx, seed, &steps)
    }

    pub fn generate_with_rotations(ctx: &Arc<CkksContext>, seed: u64, steps: &[usize]) -> Result<Self, HeError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let top = ctx.max_level();
        let coeffs = ctx.sample_ternary(&mut rng);
        let secret = SecretKey {
            poly: ctx.poly_from_signed(&coeffs, top, true),
            coeffs,
            digest: *ctx.digest(),
        };

        let a = ctx.sample_uniform(&mut rng, top, false);
        let e = ctx.poly_from_signed(&ctx.sample_error(&mut rng), top, false);
        let mut b = ctx.poly_mul(&a, &ctx.poly_restrict(&secret.poly, top, false));
        ctx.poly_neg_assign(&mut b);
        ctx.poly_add_assign(&mut b, &e);
        let public = PublicKey { b, a, digest: *ctx.digest() };

        let s_squared = ctx.poly_mul(&secret.poly, &secret.poly);
        let relin = make_switch_key(ctx, &secret, &s_squared, &mut rng);

        let mut rotations = BTreeMap::new();
        for &step in steps {
            let step = step % ctx.slot_count();
            if step == 0 || rotations.contains_key(&step) {
                continue;
            }
            let g = ctx.galois_element(step);
            let rotated = ctx.poly_automorphism(&secret.poly, g);
            rotations.insert(step, make_switch_key(ctx, &secret, &rotated, &mut rng));
        }
        Ok(Self {
            secret,
            public,
            relin,
            rotations,
            params_digest: *ctx.digest(),
        })
    }

    /// SHA-256 over all key material, in a fixed order.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.params_digest);
        let mut feed = |p: &RnsPoly| {
            for limb in &p.limbs {
                for w in limb {
                    h.update(w.to_le_bytes());
                }
            }
        };
        feed(&self.secret.poly);
        feed(&self.public.b);
        feed(&self.public.a);
        for key in std::iter::once(&self.relin).chain(self.rotations.values()) {
            for (b, a) in &key.parts {
                feed(b);
                feed(a);
            }
        }
        for step in self.rotations.keys() {
            h.update((*step as u64).to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Key switching from `target` (an element over `Q·P`) to the secret `s`.
fn make_switch_key(
    ctx: &CkksContext,
    secret: &SecretKey,
    target: &RnsPoly,
    rng: &mut ChaCha20Rng,
) -> KeySwitchKey {
    let top = ctx.max_level();
    let parts = (0..=top)
        .map(|j| {
            let a = ctx.sample_uniform(rng, top, true);
            let e = ctx.poly_from_signed(&ctx.sample_error(rng), top, true);
            let mut b = ctx.poly_mul(&a, &secret.poly);
            ctx.poly_neg_assign(&mut b);
            ctx.poly_add_assign(&mut b, &e);
            let m = *ctx.modulus(j);
            let p_mod = ctx.special_mod(j);
            let ps = m.shoup(p_mod);
            for (u, &t) in b.limbs[j].iter_mut().zip(&target.limbs[j]) {
                *u = m.add(*u, m.mul_shoup(t, p_mod, ps));
            }
            (b, a)
        })
        .collect();
    KeySwitchKey { parts, digest: *ctx.digest() }
}
