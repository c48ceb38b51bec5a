//! Slot-vector evaluation backends.
//!
//! Packing kernels and matmul protocols are written once against
//! [`SlotBackend`]. [`HeBackend`] runs them on CKKS ciphertexts;
//! [`PlainBackend`] runs the same call sequence on exact `f64` slot vectors
//! with identical level bookkeeping and operation tallies.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::ring_ckks::{CkksCipher, Encryptor, Evaluator, OpCounters};
use crate::{Error, Result};

pub trait SlotBackend {
    type Ct: Clone;

    fn slots(&self) -> usize;
    fn max_level(&self) -> usize;
    fn level(&self, a: &Self::Ct) -> usize;
    fn counters(&self) -> OpCounters;

    /// A fresh operand holding `slots` at `level` (test and demo entry point).
    fn fresh(&mut self, slots: &[f64], level: usize) -> Result<Self::Ct>;
    /// Slot contents; requires secret material on the HE backend.
    fn reveal(&self, a: &Self::Ct) -> Result<Vec<f64>>;

    fn add(&mut self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct>;
    fn sub(&mut self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct>;
    fn add_plain(&mut self, a: &Self::Ct, v: &[f64]) -> Result<Self::Ct>;
    /// Ciphertext product followed by a rescale.
    fn mul(&mut self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct>;
    /// Slot-wise product with a plaintext vector, followed by a rescale.
    fn mul_plain(&mut self, a: &Self::Ct, v: &[f64]) -> Result<Self::Ct>;
    /// Product with a public scalar, followed by a rescale.
    fn mul_const(&mut self, a: &Self::Ct, c: f64) -> Result<Self::Ct>;
    fn rotate(&mut self, a: &Self::Ct, t: i64) -> Result<Self::Ct>;
    /// Lower to `level` keeping the slot values.
    fn drop_to(&mut self, a: &Self::Ct, level: usize) -> Result<Self::Ct>;
}

/// Bring two operands to the lower of their levels.
pub fn align<B: SlotBackend>(be: &mut B, a: &B::Ct, b: &B::Ct) -> Result<(B::Ct, B::Ct)> {
    let (la, lb) = (be.level(a), be.level(b));
    match la.cmp(&lb) {
        core::cmp::Ordering::Equal => Ok((a.clone(), b.clone())),
        core::cmp::Ordering::Greater => Ok((be.drop_to(a, lb)?, b.clone())),
        core::cmp::Ordering::Less => Ok((a.clone(), be.drop_to(b, la)?)),
    }
}

/// Sum of operands, aligned to the lowest level first.
pub fn sum_all<B: SlotBackend>(be: &mut B, xs: &[B::Ct]) -> Result<B::Ct> {
    let lmin = xs.iter().map(|x| be.level(x)).min().ok_or_else(|| Error::Shape("empty sum".into()))?;
    let mut acc = be.drop_to(&xs[0], lmin)?;
    for x in &xs[1..] {
        let x = be.drop_to(x, lmin)?;
        acc = be.add(&acc, &x)?;
    }
    Ok(acc)
}

/// Exact slot vectors with the same level and tally rules as the HE backend.
#[derive(Debug, Clone)]
pub struct PlainBackend {
    pub slots: usize,
    pub max_level: usize,
    pub counters: OpCounters,
    /// Every nonzero rotation amount used, normalized to `0..slots`.
    pub steps: BTreeSet<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlainCt {
    pub vals: Vec<f64>,
    pub level: usize,
}

impl PlainBackend {
    pub fn new(slots: usize, max_level: usize) -> Self {
        PlainBackend { slots, max_level, counters: OpCounters::default(), steps: BTreeSet::new() }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.slots {
            return Err(Error::Capacity(format!("{} values for {} slots", v.len(), self.slots)));
        }
        Ok(())
    }

    fn same_level(a: &PlainCt, b: &PlainCt) -> Result<()> {
        if a.level != b.level {
            return Err(Error::Level(format!("operand levels differ: {} vs {}", a.level, b.level)));
        }
        Ok(())
    }

    fn consume(level: usize) -> Result<usize> {
        level.checked_sub(1).ok_or_else(|| Error::Level("depth budget exhausted at level 0".into()))
    }
}

impl SlotBackend for PlainBackend {
    type Ct = PlainCt;

    fn slots(&self) -> usize {
        self.slots
    }

    fn max_level(&self) -> usize {
        self.max_level
    }

    fn level(&self, a: &PlainCt) -> usize {
        a.level
    }

    fn counters(&self) -> OpCounters {
        self.counters
    }

    fn fresh(&mut self, slots: &[f64], level: usize) -> Result<PlainCt> {
        self.check_len(slots)?;
        if level > self.max_level {
            return Err(Error::Level(format!("level {level} above {}", self.max_level)));
        }
        Ok(PlainCt { vals: slots.to_vec(), level })
    }

    fn reveal(&self, a: &PlainCt) -> Result<Vec<f64>> {
        Ok(a.vals.clone())
    }

    fn add(&mut self, a: &PlainCt, b: &PlainCt) -> Result<PlainCt> {
        Self::same_level(a, b)?;
        Ok(PlainCt { vals: a.vals.iter().zip(&b.vals).map(|(x, y)| x + y).collect(), level: a.level })
    }

    fn sub(&mut self, a: &PlainCt, b: &PlainCt) -> Result<PlainCt> {
        Self::same_level(a, b)?;
        Ok(PlainCt { vals: a.vals.iter().zip(&b.vals).map(|(x, y)| x - y).collect(), level: a.level })
    }

    fn add_plain(&mut self, a: &PlainCt, v: &[f64]) -> Result<PlainCt> {
        self.check_len(v)?;
        Ok(PlainCt { vals: a.vals.iter().zip(v).map(|(x, y)| x + y).collect(), level: a.level })
    }

    fn mul(&mut self, a: &PlainCt, b: &PlainCt) -> Result<PlainCt> {
        Self::same_level(a, b)?;
        let level = Self::consume(a.level)?;
        self.counters.ct_ct_mults += 1;
        self.counters.rescales += 1;
        Ok(PlainCt { vals: a.vals.iter().zip(&b.vals).map(|(x, y)| x * y).collect(), level })
    }

    fn mul_plain(&mut self, a: &PlainCt, v: &[f64]) -> Result<PlainCt> {
        self.check_len(v)?;
        let level = Self::consume(a.level)?;
        self.counters.ct_pt_mults += 1;
        self.counters.rescales += 1;
        Ok(PlainCt { vals: a.vals.iter().zip(v).map(|(x, y)| x * y).collect(), level })
    }

    fn mul_const(&mut self, a: &PlainCt, c: f64) -> Result<PlainCt> {
        let level = Self::consume(a.level)?;
        self.counters.ct_pt_mults += 1;
        self.counters.rescales += 1;
        Ok(PlainCt { vals: a.vals.iter().map(|x| x * c).collect(), level })
    }

    fn rotate(&mut self, a: &PlainCt, t: i64) -> Result<PlainCt> {
        self.counters.rotations += 1;
        let n = self.slots as i64;
        let s = t.rem_euclid(n) as usize;
        if s != 0 {
            self.steps.insert(s as i64);
        }
        let mut vals = Vec::with_capacity(self.slots);
        vals.extend_from_slice(&a.vals[s..]);
        vals.extend_from_slice(&a.vals[..s]);
        Ok(PlainCt { vals, level: a.level })
    }

    fn drop_to(&mut self, a: &PlainCt, level: usize) -> Result<PlainCt> {
        if level > a.level {
            return Err(Error::Level(format!("cannot raise level {} to {level}", a.level)));
        }
        if level < a.level {
            self.counters.rescales += 1;
        }
        Ok(PlainCt { vals: a.vals.clone(), level })
    }
}

/// CKKS evaluation keeping every ciphertext on the canonical scale of its level.
pub struct HeBackend {
    pub ev: Evaluator,
    /// Present only where the secret key may be used (tests, demos).
    pub enc: Option<Encryptor>,
}

impl HeBackend {
    pub fn new(ev: Evaluator, enc: Option<Encryptor>) -> Self {
        HeBackend { ev, enc }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.ev.ctx.slots() {
            return Err(Error::Capacity(format!("{} values for {} slots", v.len(), self.ev.ctx.slots())));
        }
        Ok(())
    }

    /// Scale for a multiplier at `level` that lands the product on the next canonical scale.
    fn multiplier_scale(&self, a: &CkksCipher) -> Result<f64> {
        let l = a.level();
        if l == 0 {
            return Err(Error::Level("depth budget exhausted at level 0".into()));
        }
        let ctx = &self.ev.ctx;
        Ok(ctx.chain[l] as f64 * ctx.level_scale(l - 1) / a.scale)
    }
}

impl SlotBackend for HeBackend {
    type Ct = CkksCipher;

    fn slots(&self) -> usize {
        self.ev.ctx.slots()
    }

    fn max_level(&self) -> usize {
        self.ev.ctx.max_level()
    }

    fn level(&self, a: &CkksCipher) -> usize {
        a.level()
    }

    fn counters(&self) -> OpCounters {
        self.ev.counters
    }

    fn fresh(&mut self, slots: &[f64], level: usize) -> Result<CkksCipher> {
        self.check_len(slots)?;
        let pt = self.ev.encode(slots, self.ev.ctx.level_scale(level), level)?;
        let enc = self.enc.as_mut().ok_or_else(|| Error::Param("no encryption key on this backend".into()))?;
        enc.encrypt(&pt)
    }

    fn reveal(&self, a: &CkksCipher) -> Result<Vec<f64>> {
        let enc = self.enc.as_ref().ok_or_else(|| Error::Param("no secret key on this backend".into()))?;
        Ok(enc.decrypt_decode(&self.ev.emb, a))
    }

    fn add(&mut self, a: &CkksCipher, b: &CkksCipher) -> Result<CkksCipher> {
        self.ev.add(a, b)
    }

    fn sub(&mut self, a: &CkksCipher, b: &CkksCipher) -> Result<CkksCipher> {
        self.ev.sub(a, b)
    }

    fn add_plain(&mut self, a: &CkksCipher, v: &[f64]) -> Result<CkksCipher> {
        self.check_len(v)?;
        let pt = self.ev.encode(v, a.scale, a.level())?;
        self.ev.add_plain(a, &pt)
    }

    fn mul(&mut self, a: &CkksCipher, b: &CkksCipher) -> Result<CkksCipher> {
        let p = self.ev.mul(a, b)?;
        self.ev.rescale(&p)
    }

    fn mul_plain(&mut self, a: &CkksCipher, v: &[f64]) -> Result<CkksCipher> {
        self.check_len(v)?;
        let scale = self.multiplier_scale(a)?;
        let pt = self.ev.encode(v, scale, a.level())?;
        let p = self.ev.mul_plain(a, &pt)?;
        self.ev.rescale(&p)
    }

    fn mul_const(&mut self, a: &CkksCipher, c: f64) -> Result<CkksCipher> {
        let scale = self.multiplier_scale(a)?;
        let k = libm::rint(c * scale);
        if libm::fabs(k) >= 9.0e18 {
            return Err(Error::EncodingOverflow(format!("constant {c} too large at this level")));
        }
        let p = self.ev.mul_int(a, k as i64);
        let mut r = self.ev.rescale(&p)?;
        // the integer already carries the multiplier scale
        r.scale = a.scale * scale / self.ev.ctx.chain[a.level()] as f64;
        self.ev.counters.ct_pt_mults += 1;
        Ok(r)
    }

    fn rotate(&mut self, a: &CkksCipher, t: i64) -> Result<CkksCipher> {
        self.ev.rotate(a, t)
    }

    fn drop_to(&mut self, a: &CkksCipher, level: usize) -> Result<CkksCipher> {
        if level >= a.level() {
            return self.ev.drop_to_level(a, level);
        }
        // drop primes, then an integer multiply and one rescale land on the target scale
        let above = self.ev.drop_to_level(a, level + 1)?;
        let ctx = self.ev.ctx.clone();
        let q = ctx.chain[level + 1] as f64;
        let k = libm::rint(q * ctx.level_scale(level) / a.scale);
        let p = self.ev.mul_int(&above, k as i64);
        let mut r = self.ev.rescale(&p)?;
        r.scale = a.scale * k / q;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring_ckks::{setup_context, CkksParams};
    use crate::rng::SeedTree;
    use alloc::sync::Arc;

    fn he(levels: usize) -> HeBackend {
        let mut widths = alloc::vec![60u32];
        widths.extend(core::iter::repeat(41).take(levels));
        let params = CkksParams::from_widths(256, &widths, 40, 3.2).unwrap();
        let (ctx, sk, keys) = setup_context(params, 3, &[1, -1]).unwrap();
        let enc = Encryptor::new(ctx.clone(), sk, SeedTree::new(3).stream("enc"));
        HeBackend::new(Evaluator::new(ctx, Arc::new(keys)), Some(enc))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| libm::fabs(x - y) < tol)
    }

    #[test]
    fn mixed_paths_add_on_a_common_scale() {
        let mut be = he(3);
        let x: Vec<f64> = (0..128).map(|i| (i as f64 / 64.0) - 1.0).collect();
        let a = be.fresh(&x, 3).unwrap();
        let sq = be.mul(&a, &a).unwrap();
        let sq = be.mul_const(&sq, 0.5).unwrap();
        let dropped = be.drop_to(&a, 1).unwrap();
        assert_eq!(sq.level(), 1);
        assert!(libm::fabs(sq.scale / dropped.scale - 1.0) < 1e-9);
        let s = be.add(&sq, &dropped).unwrap();
        let want: Vec<f64> = x.iter().map(|v| 0.5 * v * v + v).collect();
        assert!(close(&be.reveal(&s).unwrap(), &want, 1e-8));
        let p = be.mul_plain(&s, &x).unwrap();
        let want: Vec<f64> = want.iter().zip(&x).map(|(a, b)| a * b).collect();
        assert!(close(&be.reveal(&p).unwrap(), &want, 1e-8));
        assert!(libm::fabs(p.scale / be.ev.ctx.level_scale(0) - 1.0) < 1e-9);
    }

    #[test]
    fn plain_backend_tallies_like_the_he_backend() {
        let mut h = he(2);
        let mut p = PlainBackend::new(128, 2);
        let x: Vec<f64> = (0..128).map(|i| i as f64 / 128.0).collect();
        let (a, b) = (h.fresh(&x, 2).unwrap(), p.fresh(&x, 2).unwrap());
        let a = h.rotate(&a, 1).unwrap();
        let b = p.rotate(&b, 1).unwrap();
        let a = h.mul_plain(&a, &x).unwrap();
        let b = p.mul_plain(&b, &x).unwrap();
        let a2 = h.drop_to(&a, 0).unwrap();
        let b2 = p.drop_to(&b, 0).unwrap();
        assert_eq!(h.counters(), p.counters());
        assert!(close(&h.reveal(&a2).unwrap(), &b2.vals, 1e-8));
    }
}
