//! Matrix products on packed ciphertexts.
//!
//! Three protocols share one set of helpers: the ct-pt product on
//! spatial-first inputs, the ct-ct product with row preprocessing,
//! multi-head packing and BSGS, and the ct-pt product that consumes its
//! diagonal-packed output. A BOLT-style ct-ct product is kept as the
//! rotation baseline. Every protocol has a closed-form cost in
//! [`predict_cost`] that matches the backend counters exactly.

mod bolt;
mod cc;
mod cp;
mod run;
#[cfg(test)]
mod tests;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::packing::{align, sum_all, Layout, SlotBackend};
use crate::ring_ckks::OpCounters;
use crate::{Error, Result};

pub use bolt::{bolt_layouts, bolt_matmul_cc};
pub use cc::{cc_layouts, matmul_cc};
pub use run::{operand_shapes, reference_product, run_protocol};
pub use cp::{collapse_padding, collapse_rotations, cp_layouts, cpdiag_layouts, matmul_cp_diagonal, matmul_cp_spatial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// ct-ct product with preprocessing, multi-head packing and BSGS.
    Cc,
    /// ct-pt product on a spatial-first input.
    Cp,
    /// ct-pt product on a diagonal-packed input.
    CpDiag,
    /// ct-ct product without preprocessing, one head at a time.
    BoltCc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsgsTarget {
    CcStep1,
    CcStep2,
    Cp,
}

/// Baby-step/giant-step split of a rotation range `R` with `b·g ≥ R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsgsPlan {
    pub b: usize,
    pub g: usize,
    pub target: BsgsTarget,
}

fn ceil_sqrt(r: usize) -> usize {
    let mut s = libm::sqrt(r as f64) as usize;
    while s * s < r {
        s += 1;
    }
    while s > 1 && (s - 1) * (s - 1) >= r {
        s -= 1;
    }
    s.max(1)
}

impl BsgsPlan {
    /// `b = g = ⌈√R⌉`.
    pub fn square(range: usize, target: BsgsTarget) -> Self {
        let b = ceil_sqrt(range.max(1));
        BsgsPlan { b, g: range.max(1).div_ceil(b), target }
    }

    /// `b = ⌈√(2R)⌉`, rounded up to a power of two when `R` is one, `g = ⌈R/b⌉`.
    pub fn split(range: usize, target: BsgsTarget) -> Self {
        let r = range.max(1);
        let mut b = ceil_sqrt(2 * r);
        if r.is_power_of_two() {
            b = b.next_power_of_two();
        }
        let b = b.min(r);
        BsgsPlan { b, g: r.div_ceil(b), target }
    }

    /// No giant steps: every rotation is a baby step.
    pub fn trivial(range: usize, target: BsgsTarget) -> Self {
        BsgsPlan { b: range.max(1), g: 1, target }
    }

    pub fn check(&self, range: usize) -> Result<()> {
        if self.b == 0 || self.g == 0 || self.b * self.g < range {
            return Err(Error::Param(format!("BSGS split {}x{} does not cover {range}", self.b, self.g)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub l: usize,
    pub d: usize,
    pub heads: usize,
}

/// One split per rotation loop; a protocol reads only the ones it uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatmulPlan {
    pub step1: BsgsPlan,
    pub step2: BsgsPlan,
    pub cp: BsgsPlan,
}

/// Rotation ranges `(K, L, R)` of step 1, step 2 and the ct-pt loop.
fn ranges(protocol: Protocol, dims: Dims, slots: usize) -> Result<(usize, usize, usize)> {
    Ok(match protocol {
        Protocol::Cc | Protocol::BoltCc => {
            let (a, _, _) = cc_layouts(dims, slots)?;
            (a.groups_per_ct() / a.heads, dims.l, 1)
        }
        Protocol::Cp => (1, 1, cp_layouts(dims, slots)?.0.groups_per_ct()),
        Protocol::CpDiag => (1, 1, cpdiag_layouts(dims, slots)?.0.groups_per_ct()),
    })
}

impl MatmulPlan {
    pub fn default_for(protocol: Protocol, dims: Dims, slots: usize) -> Result<Self> {
        let (k, l, r) = ranges(protocol, dims, slots)?;
        Ok(MatmulPlan {
            step1: BsgsPlan::square(k, BsgsTarget::CcStep1),
            step2: BsgsPlan::split(l, BsgsTarget::CcStep2),
            cp: BsgsPlan::square(r, BsgsTarget::Cp),
        })
    }

    /// No BSGS anywhere.
    pub fn trivial_for(protocol: Protocol, dims: Dims, slots: usize) -> Result<Self> {
        let (k, l, r) = ranges(protocol, dims, slots)?;
        Ok(MatmulPlan {
            step1: BsgsPlan::trivial(k, BsgsTarget::CcStep1),
            step2: BsgsPlan::trivial(l, BsgsTarget::CcStep2),
            cp: BsgsPlan::trivial(r, BsgsTarget::Cp),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatmulCost {
    pub rotations: u64,
    pub ct_ct_mults: u64,
    pub ct_pt_mults: u64,
    pub depth: usize,
}

impl MatmulCost {
    pub fn measured(delta: &OpCounters, depth: usize) -> Self {
        MatmulCost { rotations: delta.rotations, ct_ct_mults: delta.ct_ct_mults, ct_pt_mults: delta.ct_pt_mults, depth }
    }
}

/// Closed-form operation counts of a protocol run.
pub fn predict_cost(protocol: Protocol, dims: Dims, slots: usize, plan: &MatmulPlan) -> Result<MatmulCost> {
    match protocol {
        Protocol::Cc => cc::predict(dims, slots, plan),
        Protocol::Cp => {
            let (x, out) = cp_layouts(dims, slots)?;
            cp::predict(&x, &out, &plan.cp)
        }
        Protocol::CpDiag => {
            let (x, out) = cpdiag_layouts(dims, slots)?;
            cp::predict(&x, &out, &plan.cp)
        }
        Protocol::BoltCc => bolt::predict(dims, slots),
    }
}

/// Counts of the generic ct-pt product from any input layout to any output layout.
pub fn predict_linear(x: &Layout, out: &Layout, plan: &BsgsPlan) -> Result<MatmulCost> {
    cp::predict(x, out, plan)
}

/// `out[x] = v[x + r]`, the plaintext counterpart of a left rotation.
pub(crate) fn rot_vec(v: &[f64], r: i64) -> Vec<f64> {
    let n = v.len();
    let s = r.rem_euclid(n as i64) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&v[s..]);
    out.extend_from_slice(&v[..s]);
    out
}

pub(crate) fn norm(r: i64, slots: usize) -> usize {
    r.rem_euclid(slots as i64) as usize
}

/// Left rotation; the identity amount costs nothing.
pub(crate) fn rot<B: SlotBackend>(be: &mut B, x: &B::Ct, r: i64) -> Result<B::Ct> {
    if norm(r, be.slots()) == 0 {
        return Ok(x.clone());
    }
    be.rotate(x, r)
}

/// Terms of a masked rotation sum, keyed by their giant-step amount.
pub(crate) type Giants<'a, C> = BTreeMap<usize, Vec<(&'a C, Vec<f64>)>>;

/// `Σ_G Rot_G(Σ Rot_{-G}(mask) ⊙ baby)`: one rotation per nonzero giant amount,
/// one plaintext product per term.
pub(crate) fn giant_sum<B: SlotBackend>(be: &mut B, giants: Giants<'_, B::Ct>) -> Result<B::Ct> {
    let mut parts = Vec::with_capacity(giants.len());
    for (g, terms) in giants {
        let mut acc: Option<B::Ct> = None;
        for (ct, mask) in terms {
            let p = be.mul_plain(ct, &rot_vec(&mask, -(g as i64)))?;
            accumulate(be, &mut acc, p)?;
        }
        let s = acc.ok_or_else(|| Error::Shape("empty giant step".into()))?;
        parts.push(rot(be, &s, g as i64)?);
    }
    sum_all(be, &parts)
}

/// `acc += x`, dropping the higher operand to the lower level.
pub(crate) fn accumulate<B: SlotBackend>(be: &mut B, acc: &mut Option<B::Ct>, x: B::Ct) -> Result<()> {
    *acc = Some(match acc.take() {
        None => x,
        Some(a) => {
            let (a, x) = align(be, &a, &x)?;
            be.add(&a, &x)?
        }
    });
    Ok(())
}

pub(crate) fn nonzero_amounts(amounts: impl IntoIterator<Item = i64>, slots: usize) -> u64 {
    amounts.into_iter().map(|r| norm(r, slots)).filter(|&r| r != 0).collect::<BTreeSet<_>>().len() as u64
}

/// Row and column of the logical entry held in each slot of each ciphertext, replicas included.
pub(crate) fn owners(lay: &Layout) -> Vec<Vec<Option<(usize, usize)>>> {
    let mut out = alloc::vec![alloc::vec![None; lay.slots]; lay.num_cts()];
    let per = lay.ct_period();
    for i in 0..lay.rows {
        for j in 0..lay.cols {
            let (ct, slot) = lay.locate(i, j);
            let mut s = slot;
            while s < lay.slots {
                out[ct][s] = Some((i, j));
                s += per;
            }
        }
    }
    out
}
