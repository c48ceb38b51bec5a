//! BOLT-style ct-ct product used as the rotation baseline.
//!
//! Heads are separate products. For every shift `t` the rows of `B_h` are
//! rotated by `t` and multiplied with `A_h`; all partial sums of diagonal `t`
//! then share one ciphertext and are accumulated with `log2` of the groups
//! per ciphertext rotations before a mask places the diagonal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{accumulate, rot, Dims, MatmulCost};
use crate::packing::{align, inner_rotate_all, level_of, Layout, LayoutKind, PackedTensor, SlotBackend};
use crate::{Error, Result};

/// Per-head layouts: `A_h` is `L×D/H` and `B_h` is `D/H×L`, both padded to `L` groups.
pub fn bolt_layouts(dims: Dims, slots: usize) -> Result<(Layout, Layout, Layout)> {
    let Dims { l, d, heads } = dims;
    if !l.is_power_of_two() || heads == 0 || d % heads != 0 || d / heads > l {
        return Err(Error::Shape(format!("unsupported baseline dims {dims:?}")));
    }
    let dh = d / heads;
    Ok((
        Layout::new(LayoutKind::SpatialFirst, l, dh, 1, l, l, slots)?,
        Layout::new(LayoutKind::ReduceFirst, dh, l, 1, l, l, slots)?,
        Layout::new(LayoutKind::Diagonal, l, l, 1, l, l, slots)?,
    ))
}

pub fn bolt_matmul_cc<B: SlotBackend>(
    be: &mut B,
    a_heads: &[PackedTensor<B::Ct>],
    b_heads: &[PackedTensor<B::Ct>],
) -> Result<Vec<PackedTensor<B::Ct>>> {
    if a_heads.len() != b_heads.len() || a_heads.is_empty() {
        return Err(Error::Shape(format!("{} left and {} right heads", a_heads.len(), b_heads.len())));
    }
    let mut outs = Vec::with_capacity(a_heads.len());
    for (a, b) in a_heads.iter().zip(b_heads) {
        let dims = Dims { l: a.layout.rows, d: a.layout.cols, heads: 1 };
        let (la_want, lb_want, out) = bolt_layouts(dims, a.layout.slots)?;
        if a.layout != la_want || b.layout != lb_want {
            return Err(Error::Layout(format!("baseline expects {la_want:?} and {lb_want:?}")));
        }
        let (la, lb) = (level_of(be, a), level_of(be, b));
        if la.min(lb.saturating_sub(1)) < 2 {
            return Err(Error::Level(format!("baseline needs depth 3, inputs at levels {la} and {lb}")));
        }
        let l = a.layout.lanes;
        let gpc = a.layout.groups_per_ct();
        let gpc_out = out.groups_per_ct();
        let mut cts: Vec<Option<B::Ct>> = vec![None; out.num_cts()];
        for t in 0..l {
            let mut acc: Option<B::Ct> = None;
            for (ac, bc) in a.cts.iter().zip(&b.cts) {
                let r = if t == 0 { be.drop_to(bc, lb - 1)? } else { inner_rotate_all(be, bc, l, l, t as i64)? };
                let (u, v) = align(be, ac, &r)?;
                let p = be.mul(&u, &v)?;
                accumulate(be, &mut acc, p)?;
            }
            let mut acc = acc.ok_or_else(|| Error::Shape("no input ciphertexts".into()))?;
            let mut step = l;
            while step < gpc * l {
                let r = rot(be, &acc, step as i64)?;
                acc = be.add(&acc, &r)?;
                step *= 2;
            }
            let (o, pos) = (t / gpc_out, t % gpc_out);
            let mask: Vec<f64> = (0..out.slots).map(|s| if (s / l) % gpc_out == pos { 1.0 } else { 0.0 }).collect();
            let m = be.mul_plain(&acc, &mask)?;
            accumulate(be, &mut cts[o], m)?;
        }
        let cts = cts.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| Error::Shape("unfilled output".into()))?;
        outs.push(PackedTensor::new(out, cts)?);
    }
    Ok(outs)
}

pub(super) fn predict(dims: Dims, slots: usize) -> Result<MatmulCost> {
    let (a, _, _) = bolt_layouts(dims, slots)?;
    let (l, h) = (dims.l as u64, dims.heads as u64);
    let n_in = a.num_cts() as u64;
    let acc = a.groups_per_ct().trailing_zeros() as u64;
    Ok(MatmulCost {
        rotations: h * (n_in * 2 * (l - 1) + l * acc),
        ct_ct_mults: h * n_in * l,
        ct_pt_mults: h * (n_in * 2 * (l - 1) + l),
        depth: 3,
    })
}
