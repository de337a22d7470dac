//! Encrypt, compute and decrypt with the toy preset.

use embshield_ckks::{Ciphertext, CkksContext, HeParams, KeySet};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), embshield_ckks::HeError> {
    let ctx = CkksContext::new(HeParams::toy())?;
    let keys = KeySet::generate(&ctx, 1)?;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    println!("N = {}, {} slots, top level {}", ctx.degree(), ctx.slot_count(), ctx.max_level());

    let a = [1.5, -2.0, 0.25, 3.0];
    let b = [0.5, 4.0, -1.0, 2.0];
    let top = ctx.max_level();
    let ca = keys.public.encrypt(&ctx, &ctx.encode_at(&a, top)?, &mut rng)?;
    let cb = keys.public.encrypt(&ctx, &ctx.encode_at(&b, top)?, &mut rng)?;

    let show = |name: &str, ct: &Ciphertext| -> Result<(), embshield_ckks::HeError> {
        let v = ctx.decode(&keys.secret.decrypt(&ctx, ct)?)?;
        println!("{name:<8} level {} -> {:?}", ct.level(), v[..4].iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>());
        Ok(())
    };
    show("a + b", &ctx.add(&ca, &cb)?)?;
    show("a * b", &ctx.mul_rescale(&ca, &cb, &keys.relin)?)?;
    show("a << 1", &ctx.rotate(&ca, 1, &keys)?)?;

    let bytes = ca.to_bytes();
    let back = Ciphertext::from_bytes(&ctx, &bytes)?;
    println!("serialized ciphertext: {} bytes", bytes.len());
    show("roundtrip", &back)?;
    Ok(())
}
