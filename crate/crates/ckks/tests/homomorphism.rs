use std::sync::{Arc, OnceLock};

use embshield_ckks::{CkksContext, HeParams, KeySet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn toy() -> &'static (Arc<CkksContext>, KeySet) {
    static CELL: OnceLock<(Arc<CkksContext>, KeySet)> = OnceLock::new();
    CELL.get_or_init(|| {
        let ctx = CkksContext::new(HeParams::toy()).unwrap();
        let keys = KeySet::generate(&ctx, 77).unwrap();
        (ctx, keys)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn addition_and_multiplication_commute_with_decryption(
        a in prop::collection::vec(-4.0f64..4.0, 1..64),
        b in prop::collection::vec(-4.0f64..4.0, 1..64),
        seed in any::<u64>(),
    ) {
        let (ctx, keys) = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let top = ctx.max_level();
        let ca = keys.public.encrypt(ctx, &ctx.encode_at(&a, top).unwrap(), &mut rng).unwrap();
        let cb = keys.public.encrypt(ctx, &ctx.encode_at(&b, top).unwrap(), &mut rng).unwrap();
        let sum = ctx.decode(&keys.secret.decrypt(ctx, &ctx.add(&ca, &cb).unwrap()).unwrap()).unwrap();
        let prod = ctx.decode(&keys.secret.decrypt(ctx, &ctx.mul_rescale(&ca, &cb, &keys.relin).unwrap()).unwrap()).unwrap();
        for i in 0..a.len().max(b.len()) {
            let x = a.get(i).copied().unwrap_or(0.0);
            let y = b.get(i).copied().unwrap_or(0.0);
            prop_assert!((sum[i] - (x + y)).abs() < 1e-3);
            prop_assert!((prod[i] - x * y).abs() < 1e-2);
        }
    }

    #[test]
    fn keygen_is_deterministic_in_seed(seed in 0u64..1000) {
        let ctx = CkksContext::new(HeParams::toy()).unwrap();
        let a = KeySet::generate_with_rotations(&ctx, seed, &[1]).unwrap();
        let b = KeySet::generate_with_rotations(&ctx, seed, &[1]).unwrap();
        let c = KeySet::generate_with_rotations(&ctx, seed + 1, &[1]).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
        prop_assert_ne!(a.digest(), c.digest());
    }
}

#[test]
fn keyset_serialization_roundtrip() {
    let (ctx, keys) = toy();
    let bytes = keys.to_bytes();
    let back = KeySet::from_bytes(ctx, &bytes).unwrap();
    assert_eq!(back.digest(), keys.digest());
    assert_eq!(back.secret.coefficients(), keys.secret.coefficients());
}
