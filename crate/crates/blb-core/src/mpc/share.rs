use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Share modulus: `Z_{2^l}` (`l ≤ 128`) or a prime field `Z_q` with `q < 2^64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulus {
    Ring(u32),
    Field(u128),
}

impl Modulus {
    pub fn ring(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 128 {
            return Err(Error::ShareAlgebra(format!("ring width {bits} outside 1..=128")));
        }
        Ok(Modulus::Ring(bits))
    }

    pub fn field(q: u128) -> Result<Self> {
        if q < 3 || q >= 1 << 64 {
            return Err(Error::ShareAlgebra(format!("field modulus {q} outside 3..2^64")));
        }
        Ok(Modulus::Field(q))
    }

    /// Bits needed for one element on the wire.
    pub fn bits(&self) -> u32 {
        match *self {
            Modulus::Ring(l) => l,
            Modulus::Field(q) => 128 - (q - 1).leading_zeros(),
        }
    }

    pub fn element_bytes(&self) -> usize {
        self.bits().div_ceil(8) as usize
    }

    #[inline]
    fn mask(l: u32) -> u128 {
        if l == 128 {
            u128::MAX
        } else {
            (1u128 << l) - 1
        }
    }

    #[inline]
    pub fn reduce(&self, v: u128) -> u128 {
        match *self {
            Modulus::Ring(l) => v & Self::mask(l),
            Modulus::Field(q) => v % q,
        }
    }

    /// Embed a signed integer (two's complement for rings).
    #[inline]
    pub fn from_signed(&self, v: i128) -> u128 {
        match *self {
            Modulus::Ring(l) => (v as u128) & Self::mask(l),
            Modulus::Field(q) => v.rem_euclid(q as i128) as u128,
        }
    }

    /// Centered representative in `[-M/2, M/2)`.
    #[inline]
    pub fn center(&self, v: u128) -> i128 {
        match *self {
            Modulus::Ring(128) => v as i128,
            // Booleans read as bits.
            Modulus::Ring(1) => v as i128,
            Modulus::Ring(l) => {
                if v >> (l - 1) == 1 {
                    v.wrapping_sub(1u128 << l) as i128
                } else {
                    v as i128
                }
            }
            Modulus::Field(q) => {
                if v >= q.div_ceil(2) {
                    v as i128 - q as i128
                } else {
                    v as i128
                }
            }
        }
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        match *self {
            Modulus::Ring(l) => a.wrapping_add(b) & Self::mask(l),
            Modulus::Field(q) => {
                let s = a + b;
                if s >= q {
                    s - q
                } else {
                    s
                }
            }
        }
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        match *self {
            Modulus::Ring(l) => a.wrapping_sub(b) & Self::mask(l),
            Modulus::Field(q) => {
                if a >= b {
                    a - b
                } else {
                    a + q - b
                }
            }
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        self.sub(0, a)
    }

    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        match *self {
            Modulus::Ring(l) => a.wrapping_mul(b) & Self::mask(l),
            Modulus::Field(q) => (a * b) % q,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u128 {
        match *self {
            Modulus::Ring(l) => rng.random::<u128>() & Self::mask(l),
            Modulus::Field(q) => rng.random_range(0..q),
        }
    }

    /// Largest magnitude a centered value may take.
    pub fn half(&self) -> u128 {
        match *self {
            Modulus::Ring(l) => 1u128 << (l - 1),
            Modulus::Field(q) => q / 2,
        }
    }
}

/// One party's additive share of a fixed-point vector with `scale` fractional bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareVec {
    pub values: Vec<u128>,
    pub modulus: Modulus,
    pub scale: u32,
    pub party: u8,
}

impl ShareVec {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Little-endian wire form: `element_bytes` per value.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.modulus.element_bytes();
        let mut out = Vec::with_capacity(w * self.values.len());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes()[..w]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], modulus: Modulus, scale: u32, party: u8) -> Result<Self> {
        let w = modulus.element_bytes();
        if bytes.len() % w != 0 {
            return Err(Error::ShareAlgebra(format!("{} bytes is not a multiple of {w}", bytes.len())));
        }
        let values = bytes
            .chunks(w)
            .map(|c| {
                let mut b = [0u8; 16];
                b[..w].copy_from_slice(c);
                modulus.reduce(u128::from_le_bytes(b))
            })
            .collect();
        Ok(ShareVec { values, modulus, scale, party })
    }

    pub fn select(&self, idx: &[usize]) -> ShareVec {
        ShareVec { values: idx.iter().map(|&i| self.values[i]).collect(), ..self.clone_meta() }
    }

    pub fn clone_meta(&self) -> ShareVec {
        ShareVec { values: Vec::new(), modulus: self.modulus, scale: self.scale, party: self.party }
    }

    pub fn with_values(&self, values: Vec<u128>) -> ShareVec {
        ShareVec { values, ..self.clone_meta() }
    }
}

fn check_pair(a: &ShareVec, b: &ShareVec) -> Result<()> {
    if a.modulus != b.modulus {
        return Err(Error::ShareAlgebra(format!("modulus mismatch: {:?} vs {:?}", a.modulus, b.modulus)));
    }
    if a.scale != b.scale || a.len() != b.len() {
        return Err(Error::ShareAlgebra(format!(
            "shares disagree: scale {} vs {}, length {} vs {}",
            a.scale,
            b.scale,
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `⌊x·2^s⌉` with ties to even.
pub fn to_fixed(x: f64, scale: u32) -> i128 {
    libm::rint(x * libm::exp2(scale as f64)) as i128
}

/// Split signed integers into two shares; share 0 is uniform.
pub fn share_int<R: Rng>(v: &[i128], modulus: Modulus, scale: u32, rng: &mut R) -> Result<(ShareVec, ShareVec)> {
    let half = modulus.half() as i128;
    let mut s0 = Vec::with_capacity(v.len());
    let mut s1 = Vec::with_capacity(v.len());
    for &x in v {
        if modulus != Modulus::Ring(128) && (x >= half || x < -half) {
            return Err(Error::Range(format!("value {x} outside the {modulus:?} range")));
        }
        let r = modulus.sample(rng);
        s0.push(r);
        s1.push(modulus.sub(modulus.from_signed(x), r));
    }
    Ok((ShareVec { values: s0, modulus, scale, party: 0 }, ShareVec { values: s1, modulus, scale, party: 1 }))
}

pub fn share<R: Rng>(x: &[f64], modulus: Modulus, scale: u32, rng: &mut R) -> Result<(ShareVec, ShareVec)> {
    let v: Vec<i128> = x.iter().map(|&x| to_fixed(x, scale)).collect();
    share_int(&v, modulus, scale, rng)
}

/// Centered integer values.
pub fn reconstruct_int(a: &ShareVec, b: &ShareVec) -> Result<Vec<i128>> {
    check_pair(a, b)?;
    let m = a.modulus;
    Ok(a.values.iter().zip(&b.values).map(|(&x, &y)| m.center(m.add(x, y))).collect())
}

pub fn reconstruct(a: &ShareVec, b: &ShareVec) -> Result<Vec<f64>> {
    let inv = libm::exp2(-(a.scale as f64));
    Ok(reconstruct_int(a, b)?.into_iter().map(|v| v as f64 * inv).collect())
}

fn zip_with(a: &ShareVec, b: &ShareVec, f: impl Fn(&Modulus, u128, u128) -> u128) -> Result<ShareVec> {
    check_pair(a, b)?;
    let m = a.modulus;
    Ok(a.with_values(a.values.iter().zip(&b.values).map(|(&x, &y)| f(&m, x, y)).collect()))
}

/// Local sum of two sharings held by the same party.
pub fn add(a: &ShareVec, b: &ShareVec) -> Result<ShareVec> {
    zip_with(a, b, |m, x, y| m.add(x, y))
}

pub fn sub(a: &ShareVec, b: &ShareVec) -> Result<ShareVec> {
    zip_with(a, b, |m, x, y| m.sub(x, y))
}

pub fn neg(a: &ShareVec) -> ShareVec {
    a.with_values(a.values.iter().map(|&x| a.modulus.neg(x)).collect())
}

/// Add public signed integers; only party 0 changes its share.
pub fn add_public_int(a: &ShareVec, c: &[i128]) -> ShareVec {
    if a.party != 0 {
        return a.clone();
    }
    let m = a.modulus;
    a.with_values(a.values.iter().zip(c).map(|(&x, &y)| m.add(x, m.from_signed(y))).collect())
}

/// Multiply by a public signed integer; the scale is unchanged.
pub fn mul_public_int(a: &ShareVec, c: i128) -> ShareVec {
    let m = a.modulus;
    let c = m.from_signed(c);
    a.with_values(a.values.iter().map(|&x| m.mul(x, c)).collect())
}

/// Multiply element-wise by public signed integers.
pub fn mul_public_ints(a: &ShareVec, c: &[i128]) -> ShareVec {
    let m = a.modulus;
    a.with_values(a.values.iter().zip(c).map(|(&x, &y)| m.mul(x, m.from_signed(y))).collect())
}
