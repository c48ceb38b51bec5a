//! Ciphertext-ciphertext product `C_h = A_h·B_h` for all heads at once.
//!
//! `A` is multi-head spatial-first (`L×D`, column `k` of head `h` in group
//! `h + H·k`), `B` multi-head reduce-first (`D×L`, row `k` of head `h` in
//! the same group) and `C` comes out multi-head diagonal (diagonal `d` of
//! head `h` in group `h + H·d`). With `K` rows per head in each input
//! ciphertext:
//!
//! 1. row `κ` of every head is rotated left by `κ` (`κ < K`), so group
//!    `(h, κ)` of `A ⊙ B` carries partial sums of diagonal `κ`;
//! 2. all rows are rotated by `t = j·B₂ + i` for `t < L`: baby rotations on
//!    `B`, giant counter-rotations on `A`, one product per `t`, summed over
//!    input ciphertexts;
//! 3. each product is moved right by `i` head-blocks, masked onto the
//!    output diagonals, and the deferred giant step (a row rotation by
//!    `j·B₂` plus the remaining `j·B₂` head-blocks) is applied once per
//!    giant and output ciphertext as two plain rotations whose lane masks
//!    are folded into the step-3 masks.
//!
//! Levels: masks in step 1, row-rotation masks in step 2, the product and
//! the step-3 masks, four in all.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{accumulate, giant_sum, nonzero_amounts, norm, rot, Dims, Giants, MatmulCost, MatmulPlan};
use crate::packing::{align, drop_tensor, inner_rotate_all, level_of, Layout, LayoutKind, PackedTensor, SlotBackend};
use crate::{Error, Result};

/// Layouts of `A` (`L×D`), `B` (`D×L`) and the diagonal output (`L×H·L`).
pub fn cc_layouts(dims: Dims, slots: usize) -> Result<(Layout, Layout, Layout)> {
    let Dims { l, d, heads: h } = dims;
    if !l.is_power_of_two() {
        return Err(Error::Shape(format!("L = {l} must be padded to a power of two")));
    }
    if h == 0 || d % h != 0 {
        return Err(Error::Shape(format!("{h} heads do not divide D = {d}")));
    }
    let width = (d / h).next_power_of_two();
    if width > l {
        return Err(Error::Shape(format!("per-head width {width} exceeds L = {l}; pad L")));
    }
    if slots / l < h {
        return Err(Error::Capacity(format!("{h} heads of {l} lanes do not fit {slots} slots")));
    }
    let kind = |single, multi| if h > 1 { multi } else { single };
    let a = Layout::new(kind(LayoutKind::SpatialFirst, LayoutKind::MultiHeadSpatialFirst), l, d, h, l, width, slots)?;
    let b = Layout::new(kind(LayoutKind::ReduceFirst, LayoutKind::MultiHeadReduceFirst), d, l, h, l, width, slots)?;
    let out = Layout::new(kind(LayoutKind::Diagonal, LayoutKind::MultiHeadDiagonal), l, h * l, h, l, l, slots)?;
    Ok((a, b, out))
}

struct Geo {
    l: usize,
    h: usize,
    k: usize,
    gpc_out: usize,
    slots: usize,
}

impl Geo {
    fn new(a: &Layout, out: &Layout) -> Self {
        Geo { l: a.lanes, h: a.heads, k: a.groups_per_ct() / a.heads, gpc_out: out.groups_per_ct(), slots: a.slots }
    }

    fn lane(&self, s: usize) -> usize {
        s % self.l
    }

    fn row(&self, s: usize) -> usize {
        (s / self.l / self.h) % self.k
    }

    /// Step-1 mask for local row `kappa`: the lanes that stay in place (`lo`)
    /// or wrap around (`!lo`) under a left rotation by `kappa`.
    fn row_mask(&self, kappa: usize, lo: bool) -> Vec<f64> {
        (0..self.slots)
            .map(|s| {
                let keep = self.row(s) == kappa && ((self.lane(s) < self.l - kappa) == lo);
                if keep {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Step-3 mask of output ciphertext `o` for shift `t`, restricted to the
    /// lanes a row rotation by `s` keeps (`lo`) or wraps (`!lo`).
    fn align_mask(&self, o: usize, t: usize, s: usize, lo: bool) -> Vec<f64> {
        let full = self.slots / self.l;
        let shift = (t * self.h) % full;
        (0..self.slots)
            .map(|x| {
                let p = x / self.l;
                let src = (p + full - shift) % full;
                let kappa = (src / self.h) % self.k;
                let d = ((o * self.gpc_out + p) / self.h) % self.l;
                let keep = (kappa + t) % self.l == d && ((self.lane(x) < self.l - s) == lo);
                if keep {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn step1<B: SlotBackend>(be: &mut B, x: &B::Ct, geo: &Geo, b1: usize) -> Result<B::Ct> {
    let nb = b1.min(geo.k);
    let mut babies = vec![x.clone()];
    for b in 1..nb {
        babies.push(be.rotate(x, b as i64)?);
    }
    let mut giants: Giants<'_, B::Ct> = BTreeMap::new();
    for kappa in 0..geo.k {
        let g = (kappa / nb * nb) as i64;
        let baby = &babies[kappa % nb];
        giants.entry(norm(g, geo.slots)).or_default().push((baby, geo.row_mask(kappa, true)));
        if kappa > 0 {
            giants.entry(norm(g - geo.l as i64, geo.slots)).or_default().push((baby, geo.row_mask(kappa, false)));
        }
    }
    giant_sum(be, giants)
}

pub fn matmul_cc<B: SlotBackend>(
    be: &mut B,
    a: &PackedTensor<B::Ct>,
    b: &PackedTensor<B::Ct>,
    plan: &MatmulPlan,
) -> Result<PackedTensor<B::Ct>> {
    let dims = Dims { l: a.layout.rows, d: a.layout.cols, heads: a.layout.heads };
    let (la_want, lb_want, out_layout) = cc_layouts(dims, a.layout.slots)?;
    if a.layout != la_want || b.layout != lb_want {
        return Err(Error::Layout(format!("matmul_cc expects {la_want:?} and {lb_want:?}")));
    }
    let geo = Geo::new(&a.layout, &out_layout);
    plan.step1.check(geo.k)?;
    plan.step2.check(geo.l)?;
    let (la, lb) = (level_of(be, a), level_of(be, b));
    if la < 3 || lb < 4 {
        return Err(Error::Level(format!("matmul_cc needs depth 4, inputs at levels {la} and {lb}")));
    }
    let a = drop_tensor(be, a, la)?;
    let b = drop_tensor(be, b, lb)?;
    let l = geo.l;

    // step 1
    let mut rows = Vec::with_capacity(b.cts.len());
    for bc in &b.cts {
        rows.push(if geo.k > 1 { step1(be, bc, &geo, plan.step1.b)? } else { be.drop_to(bc, lb - 1)? });
    }

    // step 2
    let nb = plan.step2.b.min(l);
    let ng = l.div_ceil(nb);
    let mut prods: Vec<Option<B::Ct>> = vec![None; l];
    for (ac, bc) in a.cts.iter().zip(&rows) {
        let mut babies = vec![bc.clone()];
        for i in 1..nb {
            babies.push(inner_rotate_all(be, bc, l, l, i as i64)?);
        }
        let mut giants = vec![ac.clone()];
        for j in 1..ng {
            giants.push(inner_rotate_all(be, ac, l, l, -((j * nb) as i64))?);
        }
        for (j, ga) in giants.iter().enumerate() {
            for (i, bb) in babies.iter().enumerate() {
                let t = j * nb + i;
                if t >= l {
                    continue;
                }
                let (u, v) = align(be, ga, bb)?;
                let p = be.mul(&u, &v)?;
                accumulate(be, &mut prods[t], p)?;
            }
        }
    }

    // step 3
    let hl = (geo.h * l) as i64;
    let mut ys = Vec::with_capacity(l);
    for (t, p) in prods.iter().enumerate() {
        let p = p.as_ref().ok_or_else(|| Error::Shape("empty product".into()))?;
        ys.push(rot(be, p, -((t % nb) as i64) * hl)?);
    }
    let mut cts = Vec::with_capacity(out_layout.num_cts());
    for o in 0..out_layout.num_cts() {
        let mut giants: Giants<'_, B::Ct> = BTreeMap::new();
        for (t, y) in ys.iter().enumerate() {
            let s = t / nb * nb;
            let base = s as i64 - s as i64 * hl;
            giants.entry(norm(base, geo.slots)).or_default().push((y, geo.align_mask(o, t, s, true)));
            if s > 0 {
                giants.entry(norm(base - l as i64, geo.slots)).or_default().push((y, geo.align_mask(o, t, s, false)));
            }
        }
        cts.push(giant_sum(be, giants)?);
    }
    PackedTensor::new(out_layout, cts)
}

pub(super) fn predict(dims: Dims, slots: usize, plan: &MatmulPlan) -> Result<MatmulCost> {
    let (a, _, out) = cc_layouts(dims, slots)?;
    let geo = Geo::new(&a, &out);
    plan.step1.check(geo.k)?;
    plan.step2.check(geo.l)?;
    let (l, k) = (geo.l, geo.k);
    let n_in = a.num_cts() as u64;
    let n_out = out.num_cts() as u64;
    let mut c = MatmulCost { depth: 4, ..MatmulCost::default() };

    if k > 1 {
        let nb = plan.step1.b.min(k);
        let keys = (0..k).flat_map(|kappa| {
            let g = (kappa / nb * nb) as i64;
            [Some(g), (kappa > 0).then_some(g - l as i64)].into_iter().flatten()
        });
        c.rotations += n_in * (nb as u64 - 1 + nonzero_amounts(keys, slots));
        c.ct_pt_mults += n_in * (2 * k as u64 - 1);
    }

    let nb = plan.step2.b.min(l);
    let ng = l.div_ceil(nb);
    let inner = 2 * (nb as u64 - 1 + ng as u64 - 1);
    c.rotations += n_in * inner;
    c.ct_pt_mults += n_in * inner;
    c.ct_ct_mults += n_in * l as u64;

    let hl = (geo.h * l) as i64;
    c.rotations += (0..l).filter(|t| norm(-((t % nb) as i64) * hl, slots) != 0).count() as u64;
    let keys = (0..ng).flat_map(|j| {
        let s = (j * nb) as i64;
        let base = s - s * hl;
        [Some(base), (j > 0).then_some(base - l as i64)].into_iter().flatten()
    });
    c.rotations += n_out * nonzero_amounts(keys, slots);
    c.ct_pt_mults += n_out * (0..l).map(|t| if t < nb { 1 } else { 2 }).sum::<u64>();
    Ok(c)
}
