//! Bit-exact binary format for ciphertexts and keys.
//!
//! Every record is
//! `"EHE1" | version u8 | params digest [32] | level u16 | scale exponent u16 |
//!  tag u8 | aux u32 | n_polys u16 | (n_limbs u16 | limb words u64 ...)*`,
//! all integers little-endian.

use std::collections::BTreeMap;

use crate::context::{CkksContext, RnsPoly};
use crate::eval::Ciphertext;
use crate::keys::{KeySet, KeySwitchKey, PublicKey, SecretKey};
use crate::HeError;

pub const MAGIC: &[u8; 4] = b"EHE1";
pub const VERSION: u8 = 1;

const TAG_CIPHERTEXT: u8 = 1;
const TAG_PUBLIC: u8 = 2;
const TAG_RELIN: u8 = 3;
const TAG_ROTATION: u8 = 4;
const TAG_SECRET: u8 = 5;

struct Record {
    digest: [u8; 32],
    level: usize,
    scale_exp: u16,
    tag: u8,
    aux: u32,
    polys: Vec<RnsPoly>,
}

fn write_record(out: &mut Vec<u8>, rec: &Record) {
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&rec.digest);
    out.extend_from_slice(&(rec.level as u16).to_le_bytes());
    out.extend_from_slice(&rec.scale_exp.to_le_bytes());
    out.push(rec.tag);
    out.extend_from_slice(&rec.aux.to_le_bytes());
    out.extend_from_slice(&(rec.polys.len() as u16).to_le_bytes());
    for p in &rec.polys {
        out.extend_from_slice(&(p.limbs.len() as u16).to_le_bytes());
        for limb in &p.limbs {
            for w in limb {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HeError> {
        if self.buf.len() - self.pos < n {
            return Err(HeError::Malformed("unexpected end of input".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, HeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, HeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, HeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn read_record(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<Record, HeError> {
    if r.take(4)? != MAGIC {
        return Err(HeError::Malformed("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(HeError::Malformed(format!("unsupported version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    ctx.check_digest(&digest)?;
    let level = r.u16()? as usize;
    if level > ctx.max_level() {
        return Err(HeError::InvalidLevel(level));
    }
    let scale_exp = r.u16()?;
    let tag = r.u8()?;
    let aux = r.u32()?;
    let n_polys = r.u16()? as usize;
    let n = ctx.degree();
    let mut polys = Vec::with_capacity(n_polys);
    for _ in 0..n_polys {
        let n_limbs = r.u16()? as usize;
        let special = match n_limbs.checked_sub(level + 1) {
            Some(0) => false,
            Some(1) => true,
            _ => return Err(HeError::Malformed(format!("{n_limbs} limbs at level {level}"))),
        };
        let mut limbs = Vec::with_capacity(n_limbs);
        for k in 0..n_limbs {
            let q = ctx.modulus(ctx.table_index(level, special, k)).value();
            let bytes = r.take(8 * n)?;
            let limb: Vec<u64> = bytes
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if limb.iter().any(|&w| w >= q) {
                return Err(HeError::Malformed("residue out of range".into()));
            }
            limbs.push(limb);
        }
        polys.push(RnsPoly::from_limbs(limbs, level, special));
    }
    Ok(Record { digest, level, scale_exp, tag, aux, polys })
}

fn scale_exponent(scale: f64) -> u16 {
    scale.log2().round().clamp(0.0, u16::MAX as f64) as u16
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_record(
            &mut out,
            &Record {
                digest: self.digest,
                level: self.level(),
                scale_exp: scale_exponent(self.scale),
                tag: TAG_CIPHERTEXT,
                aux: 0,
                polys: self.parts.clone(),
            },
        );
        out
    }

    /// Parses a ciphertext. The scale is restored as the canonical scale of its level
    /// when the stored exponent matches it, and as `2^exponent` otherwise.
    pub fn from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<Self, HeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let rec = read_record(ctx, &mut r)?;
        if !r.done() {
            return Err(HeError::Malformed("trailing bytes".into()));
        }
        if rec.tag != TAG_CIPHERTEXT || !(2..=3).contains(&rec.polys.len()) || rec.polys.iter().any(|p| p.special) {
            return Err(HeError::Malformed("not a ciphertext".into()));
        }
        let canonical = ctx.scale_at(rec.level);
        let scale = if scale_exponent(canonical) == rec.scale_exp {
            canonical
        } else {
            (rec.scale_exp as f64).exp2()
        };
        Ok(Self { parts: rec.polys, scale, digest: rec.digest })
    }
}

impl KeySet {
    /// Secret, public, relinearization and rotation keys as consecutive records.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let rec = |tag, aux, polys: Vec<RnsPoly>| Record {
            digest: self.params_digest,
            level: polys[0].level,
            scale_exp: 0,
            tag,
            aux,
            polys,
        };
        let switch_polys = |k: &KeySwitchKey| k.parts.iter().flat_map(|(b, a)| [b.clone(), a.clone()]).collect();
        write_record(&mut out, &rec(TAG_SECRET, 0, vec![self.secret.poly.clone()]));
        write_record(&mut out, &rec(TAG_PUBLIC, 0, vec![self.public.b.clone(), self.public.a.clone()]));
        write_record(&mut out, &rec(TAG_RELIN, 0, switch_polys(&self.relin)));
        for (step, key) in &self.rotations {
            write_record(&mut out, &rec(TAG_ROTATION, *step as u32, switch_polys(key)));
        }
        out
    }

    pub fn from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<Self, HeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let digest = *ctx.digest();
        let mut secret = None;
        let mut public = None;
        let mut relin = None;
        let mut rotations = BTreeMap::new();
        let to_switch = |polys: Vec<RnsPoly>| -> Result<KeySwitchKey, HeError> {
            if polys.len() != 2 * ctx.params().chain_len() || polys.iter().any(|p| !p.special) {
                return Err(HeError::Malformed("bad key-switching key".into()));
            }
            let mut it = polys.into_iter();
            let mut parts = Vec::new();
            while let (Some(b), Some(a)) = (it.next(), it.next()) {
                parts.push((b, a));
            }
            Ok(KeySwitchKey { parts, digest })
        };
        while !r.done() {
            let rec = read_record(ctx, &mut r)?;
            if rec.level != ctx.max_level() {
                return Err(HeError::Malformed("key not at the top level".into()));
            }
            match rec.tag {
                TAG_SECRET if rec.polys.len() == 1 && rec.polys[0].special => {
                    let poly = rec.polys.into_iter().next().expect("one poly");
                    let mut c = poly.limbs[0].clone();
                    ctx.table(0).inverse(&mut c);
                    let m = ctx.modulus(0);
                    let coeffs = c.iter().map(|&x| m.center(x)).collect();
                    secret = Some(SecretKey { coeffs, poly, digest });
                }
                TAG_PUBLIC if rec.polys.len() == 2 && rec.polys.iter().all(|p| !p.special) => {
                    let mut it = rec.polys.into_iter();
                    let b = it.next().expect("b");
                    let a = it.next().expect("a");
                    public = Some(PublicKey { b, a, digest });
                }
                TAG_RELIN => relin = Some(to_switch(rec.polys)?),
                TAG_ROTATION => {
                    rotations.insert(rec.aux as usize, to_switch(rec.polys)?);
                }
                t => return Err(HeError::Malformed(format!("unexpected record tag {t}"))),
            }
        }
        match (secret, public, relin) {
            (Some(secret), Some(public), Some(relin)) => Ok(KeySet {
                secret,
                public,
                relin,
                rotations,
                params_digest: digest,
            }),
            _ => Err(HeError::Malformed("incomplete key set".into())),
        }
    }
}
