//! RNS variant of the CKKS approximate homomorphic encryption scheme.
//!
//! Real vectors are packed into `N/2` slots; additions and multiplications act
//! slotwise, and slot rotations are available through Galois keys.
//!
//! ```
//! use embshield_ckks::{CkksContext, HeParams, KeySet};
//! use rand::SeedableRng;
//!
//! let ctx = CkksContext::new(HeParams::toy()).unwrap();
//! let keys = KeySet::generate(&ctx, 7).unwrap();
//! let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
//! let pt = ctx.encode_at(&[1.5, -2.0], ctx.max_level()).unwrap();
//! let ct = keys.public.encrypt(&ctx, &pt, &mut rng).unwrap();
//! let sq = ctx.mul_rescale(&ct, &ct, &keys.relin).unwrap();
//! let out = ctx.decode(&keys.secret.decrypt(&ctx, &sq).unwrap()).unwrap();
//! assert!((out[0] - 2.25).abs() < 1e-3 && (out[1] - 4.0).abs() < 1e-3);
//! ```

pub mod arith;
mod context;
mod encoding;
mod eval;
mod keys;
pub mod ntt;
mod params;
mod serial;

pub use context::{CkksContext, RnsPoly};
pub use encoding::Plaintext;
pub use eval::{Ciphertext, SCALE_TOLERANCE};
pub use keys::{KeySet, KeySwitchKey, PublicKey, SecretKey};
pub use params::{HeParams, Preset};
pub use serial::{MAGIC, VERSION};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{len} values do not fit in {slots} slots")]
    TooManyValues { len: usize, slots: usize },
    #[error("encoded value overflows the base modulus")]
    ScaleOverflow,
    #[error("non-finite input value {0}")]
    NonFinite(f64),
    #[error("level {0} is outside the modulus chain")]
    InvalidLevel(usize),
    #[error("object was created under different parameters")]
    ParamsMismatch,
    #[error("level mismatch: {left} vs {right}")]
    LevelMismatch { left: usize, right: usize },
    #[error("scale mismatch: {left} vs {right}")]
    ScaleMismatch { left: f64, right: f64 },
    #[error("no levels left")]
    LevelExhausted,
    #[error("no rotation key for step {0}")]
    MissingRotationKey(usize),
    #[error("ciphertext must be relinearized first")]
    NotRelinearized,
    #[error("malformed input: {0}")]
    Malformed(String),
}
