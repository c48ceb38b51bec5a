use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::backend::{align, SlotBackend};
use super::layout::Layout;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// A logical tensor held in one or more slot vectors.
#[derive(Debug, Clone)]
pub struct PackedTensor<C> {
    pub layout: Layout,
    pub cts: Vec<C>,
}

impl<C: Clone> PackedTensor<C> {
    pub fn new(layout: Layout, cts: Vec<C>) -> Result<Self> {
        if cts.len() != layout.num_cts() {
            return Err(Error::Layout(format!("{} ciphertexts for a layout needing {}", cts.len(), layout.num_cts())));
        }
        Ok(PackedTensor { layout, cts })
    }
}

pub fn pack<B: SlotBackend>(be: &mut B, x: &Matrix, layout: Layout, level: usize) -> Result<PackedTensor<B::Ct>> {
    let cts = layout.pack(x)?.iter().map(|v| be.fresh(v, level)).collect::<Result<Vec<_>>>()?;
    PackedTensor::new(layout, cts)
}

pub fn unpack<B: SlotBackend>(be: &B, t: &PackedTensor<B::Ct>) -> Result<Matrix> {
    let v = t.cts.iter().map(|c| be.reveal(c)).collect::<Result<Vec<_>>>()?;
    t.layout.unpack(&v)
}

pub fn level_of<B: SlotBackend>(be: &B, t: &PackedTensor<B::Ct>) -> usize {
    t.cts.iter().map(|c| be.level(c)).min().unwrap_or(0)
}

pub fn drop_tensor<B: SlotBackend>(be: &mut B, t: &PackedTensor<B::Ct>, level: usize) -> Result<PackedTensor<B::Ct>> {
    let cts = t.cts.iter().map(|c| be.drop_to(c, level)).collect::<Result<Vec<_>>>()?;
    Ok(PackedTensor { layout: t.layout, cts })
}

/// Pick the ciphertext of `t` aligned with ciphertext `k` of a (possibly wider) partner.
fn pick<C>(t: &PackedTensor<C>, k: usize) -> &C {
    &t.cts[k % t.cts.len()]
}

fn check_compatible(a: &Layout, b: &Layout) -> Result<()> {
    let ok = a.lanes == b.lanes
        && a.slots == b.slots
        && (a == b || (b.num_cts() == 1 && a.ct_period() % b.ct_period() == 0 && b.cols == b.heads && b.is_spatial()));
    if !ok {
        return Err(Error::Layout(format!("incompatible layouts {a:?} and {b:?}")));
    }
    Ok(())
}

fn elementwise<B: SlotBackend>(
    be: &mut B,
    a: &PackedTensor<B::Ct>,
    b: &PackedTensor<B::Ct>,
    op: fn(&mut B, &B::Ct, &B::Ct) -> Result<B::Ct>,
) -> Result<PackedTensor<B::Ct>> {
    check_compatible(&a.layout, &b.layout)?;
    let mut cts = Vec::with_capacity(a.cts.len());
    for (k, x) in a.cts.iter().enumerate() {
        let (x, y) = align(be, x, pick(b, k))?;
        cts.push(op(be, &x, &y)?);
    }
    Ok(PackedTensor { layout: a.layout, cts })
}

/// Element-wise sum; `b` may be a per-row (per-head) broadcast of `a`'s shape.
pub fn ew_add<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, b: &PackedTensor<B::Ct>) -> Result<PackedTensor<B::Ct>> {
    elementwise(be, a, b, |be, x, y| be.add(x, y))
}

pub fn ew_sub<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, b: &PackedTensor<B::Ct>) -> Result<PackedTensor<B::Ct>> {
    elementwise(be, a, b, |be, x, y| be.sub(x, y))
}

/// Element-wise product (one level); a broadcast `b` gives the scalar-row product.
pub fn ew_mul<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, b: &PackedTensor<B::Ct>) -> Result<PackedTensor<B::Ct>> {
    elementwise(be, a, b, |be, x, y| be.mul(x, y))
}

/// Add a plaintext matrix packed in `a`'s layout.
pub fn add_plain<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, m: &Matrix) -> Result<PackedTensor<B::Ct>> {
    let vs = a.layout.pack(m)?;
    let cts = a.cts.iter().zip(&vs).map(|(c, v)| be.add_plain(c, v)).collect::<Result<Vec<_>>>()?;
    Ok(PackedTensor { layout: a.layout, cts })
}

/// Multiply by a plaintext matrix packed in `a`'s layout (one level).
pub fn mul_plain<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, m: &Matrix) -> Result<PackedTensor<B::Ct>> {
    let vs = a.layout.pack(m)?;
    let cts = a.cts.iter().zip(&vs).map(|(c, v)| be.mul_plain(c, v)).collect::<Result<Vec<_>>>()?;
    Ok(PackedTensor { layout: a.layout, cts })
}

pub fn mul_const<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, c: f64) -> Result<PackedTensor<B::Ct>> {
    let cts = a.cts.iter().map(|x| be.mul_const(x, c)).collect::<Result<Vec<_>>>()?;
    Ok(PackedTensor { layout: a.layout, cts })
}

/// Add a public constant to every logical entry (padding stays zero).
pub fn add_const<B: SlotBackend>(be: &mut B, a: &PackedTensor<B::Ct>, c: f64) -> Result<PackedTensor<B::Ct>> {
    add_plain(be, a, &Matrix::from_fn(a.layout.rows, a.layout.cols, |_, _| c))
}

/// Row sums of a spatial-first tensor by rotate-and-sum over the column groups.
///
/// Fused: `log2 G` rotations, no multiplication; every group ends up holding
/// the row sum, i.e. the result is already broadcast. Unfused: the same
/// rotations plus one mask keeping only group 0.
pub fn reduce_sum<B: SlotBackend>(be: &mut B, t: &PackedTensor<B::Ct>, fuse_with_scalar: bool) -> Result<PackedTensor<B::Ct>> {
    let lay = t.layout;
    if !lay.is_spatial() || lay.heads != 1 {
        return Err(Error::Layout(format!("reduce_sum needs a headless spatial-first tensor, got {:?}", lay.kind)));
    }
    let mut acc = t.cts[0].clone();
    for c in &t.cts[1..] {
        let (a, b) = align(be, &acc, c)?;
        acc = be.add(&a, &b)?;
    }
    let mut step = lay.lanes;
    while step < lay.ct_period() {
        let r = be.rotate(&acc, step as i64)?;
        acc = be.add(&acc, &r)?;
        step *= 2;
    }
    if fuse_with_scalar {
        let out = Layout::broadcast(lay.rows, lay.lanes, lay.slots)?;
        return PackedTensor::new(out, vec![acc]);
    }
    let out = Layout::new(lay.kind, lay.rows, 1, 1, lay.lanes, lay.groups_per_ct(), lay.slots)?;
    let mask = out.support().remove(0);
    let acc = be.mul_plain(&acc, &mask)?;
    PackedTensor::new(out, vec![acc])
}

/// Replicate a group-0 column across all `width` groups with `log2 width` right rotations.
pub fn broadcast<B: SlotBackend>(be: &mut B, t: &PackedTensor<B::Ct>) -> Result<PackedTensor<B::Ct>> {
    let lay = t.layout;
    if !lay.is_spatial() || lay.cols != 1 || t.cts.len() != 1 {
        return Err(Error::Layout(format!("broadcast needs a single spatial column, got {lay:?}")));
    }
    let mut acc = t.cts[0].clone();
    let mut step = lay.lanes;
    while step < lay.period() {
        let r = be.rotate(&acc, -(step as i64))?;
        acc = be.add(&acc, &r)?;
        step *= 2;
    }
    PackedTensor::new(Layout::broadcast(lay.rows, lay.lanes, lay.slots)?, vec![acc])
}

/// Lane mask: 1 on lanes `lo..hi` of the groups selected by `group`, repeated every `period`.
pub fn lane_mask(slots: usize, lanes: usize, period: usize, lo: usize, hi: usize, group: impl Fn(usize) -> bool) -> Vec<f64> {
    (0..slots)
        .map(|s| {
            let p = s % period;
            let (lane, g) = (p % lanes, p / lanes);
            if lane >= lo && lane < hi && group(g) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Cyclic left shift by `steps` within every lane run of a ciphertext:
/// two rotations and two masks, one level.
pub fn inner_rotate_all<B: SlotBackend>(be: &mut B, x: &B::Ct, lanes: usize, period: usize, steps: i64) -> Result<B::Ct> {
    let n = lanes as i64;
    let k = steps.rem_euclid(n);
    if k == 0 {
        return Ok(x.clone());
    }
    let slots = be.slots();
    let lo = be.rotate(x, k)?;
    let hi = be.rotate(x, k - n)?;
    let lo = be.mul_plain(&lo, &lane_mask(slots, lanes, period, 0, (n - k) as usize, |_| true))?;
    let hi = be.mul_plain(&hi, &lane_mask(slots, lanes, period, (n - k) as usize, lanes, |_| true))?;
    be.add(&lo, &hi)
}

/// Cyclic left shift of one row of a row-packed (reduce-first) tensor by
/// `steps`, leaving every other slot in place: two rotations, three masks.
pub fn inner_rotate<B: SlotBackend>(be: &mut B, t: &PackedTensor<B::Ct>, row: usize, steps: i64) -> Result<PackedTensor<B::Ct>> {
    let lay = t.layout;
    if !lay.is_reduce_first() {
        return Err(Error::Layout(format!("inner_rotate needs a row-packed tensor, got {:?}", lay.kind)));
    }
    if row >= lay.rows {
        return Err(Error::Shape(format!("row {row} of {}", lay.rows)));
    }
    let n = lay.lanes as i64;
    let k = steps.rem_euclid(n);
    if k == 0 {
        return Ok(t.clone());
    }
    let (ct, slot) = lay.locate(row, 0);
    let g = slot / lay.lanes;
    let per = lay.ct_period();
    let slots = lay.slots;
    let x = &t.cts[ct];
    let keep = lane_mask(slots, lay.lanes, per, 0, lay.lanes, |q| q != g);
    let lo_mask = lane_mask(slots, lay.lanes, per, 0, (n - k) as usize, |q| q == g);
    let hi_mask = lane_mask(slots, lay.lanes, per, (n - k) as usize, lay.lanes, |q| q == g);
    let rest = be.mul_plain(x, &keep)?;
    let lo = be.rotate(x, k)?;
    let lo = be.mul_plain(&lo, &lo_mask)?;
    let hi = be.rotate(x, k - n)?;
    let hi = be.mul_plain(&hi, &hi_mask)?;
    let mut r = be.add(&rest, &lo)?;
    r = be.add(&r, &hi)?;
    let mut out = t.clone();
    out.cts[ct] = r;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packing::backend::PlainBackend;
    use crate::packing::layout::LayoutKind;

    #[test]
    fn fused_reduce_sum_costs_log_d_rotations_only() {
        let mut be = PlainBackend::new(64, 3);
        let x = Matrix::from_fn(4, 4, |_, _| 1.0);
        let t = pack(&mut be, &x, Layout::spatial(4, 4, 4, 64).unwrap(), 3).unwrap();
        let s = reduce_sum(&mut be, &t, true).unwrap();
        assert_eq!(be.counters.rotations, 2);
        assert_eq!(be.counters.ct_pt_mults + be.counters.ct_ct_mults, 0);
        assert_eq!(s.cts[0].level, 3);
        assert!(s.cts[0].vals.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn masked_sum_then_broadcast_equals_fused_sum() {
        let mut be = PlainBackend::new(64, 3);
        let x = Matrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        let lay = Layout::spatial(3, 5, 4, 64).unwrap();
        let t = pack(&mut be, &x, lay, 3).unwrap();
        let fused = reduce_sum(&mut be, &t, true).unwrap();
        let before = be.counters;
        let masked = reduce_sum(&mut be, &t, false).unwrap();
        let d = be.counters.since(&before);
        assert_eq!((d.rotations, d.ct_pt_mults), (3, 1));
        assert_eq!(masked.cts[0].level, 2);
        let before = be.counters;
        let b = broadcast(&mut be, &masked).unwrap();
        assert_eq!(be.counters.since(&before).rotations, 3);
        assert_eq!(b.cts[0].vals, fused.cts[0].vals);
        assert_eq!(unpack(&be, &b).unwrap().data, vec![10.0, 35.0, 60.0]);
    }

    #[test]
    fn broadcast_replicates_a_column() {
        let mut be = PlainBackend::new(8, 1);
        let lay = Layout::new(LayoutKind::SpatialFirst, 2, 1, 1, 2, 2, 8).unwrap();
        let t = PackedTensor::new(lay, vec![be.fresh(&[1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0], 1).unwrap()]).unwrap();
        let b = broadcast(&mut be, &t).unwrap();
        assert_eq!(b.cts[0].vals, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(be.counters.rotations, 1);
    }

    #[test]
    fn inner_rotation_moves_one_row() {
        let mut be = PlainBackend::new(16, 2);
        let b = Matrix::from_fn(2, 4, |i, j| (10 * (i + 1) + j) as f64);
        let lay = Layout::new(LayoutKind::ReduceFirst, 2, 4, 1, 4, 2, 16).unwrap();
        let t = pack(&mut be, &b, lay, 2).unwrap();
        let r = inner_rotate(&mut be, &t, 1, 1).unwrap();
        let m = unpack(&be, &r).unwrap();
        assert_eq!(m.data, vec![10.0, 11.0, 12.0, 13.0, 21.0, 22.0, 23.0, 20.0]);
        assert_eq!((be.counters.rotations, be.counters.ct_pt_mults), (2, 3));
        // slots outside the row are bit-identical
        for s in 0..16 {
            if (s / 4) % 2 == 0 {
                assert_eq!(r.cts[0].vals[s], t.cts[0].vals[s]);
            }
        }
        let zero = inner_rotate(&mut be, &t, 0, 0).unwrap();
        assert_eq!(zero.cts[0], t.cts[0]);
        assert_eq!(be.counters.rotations, 2);
        let back = inner_rotate(&mut be, &r, 1, 3).unwrap();
        assert_eq!(unpack(&be, &back).unwrap(), b);
    }

    #[test]
    fn reduce_sum_rejects_other_layouts() {
        let mut be = PlainBackend::new(16, 1);
        let lay = Layout::new(LayoutKind::ReduceFirst, 2, 4, 1, 4, 2, 16).unwrap();
        let t = pack(&mut be, &Matrix::zeros(2, 4), lay, 1).unwrap();
        assert!(matches!(reduce_sum(&mut be, &t, true), Err(Error::Layout(_))));
    }

    #[test]
    fn reduce_sum_over_split_tensor() {
        let mut be = PlainBackend::new(8, 2);
        let x = Matrix::from_fn(4, 8, |i, j| (i + j) as f64);
        let t = pack(&mut be, &x, Layout::spatial(4, 8, 4, 8).unwrap(), 2).unwrap();
        assert_eq!(t.cts.len(), 4);
        let s = reduce_sum(&mut be, &t, true).unwrap();
        assert_eq!(be.counters.rotations, 1);
        let want: Vec<f64> = (0..4).map(|i| (0..8).map(|j| (i + j) as f64).sum()).collect();
        assert_eq!(unpack(&be, &s).unwrap().data, want);
    }
}
