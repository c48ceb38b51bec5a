use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::{giant_sum, norm, owners, rot, BsgsPlan, Dims, Giants, MatmulCost};
use crate::matrix::Matrix;
use crate::packing::{Layout, LayoutKind, PackedTensor, SlotBackend};
use crate::{Error, Result};

fn lanes_for(rows: usize) -> usize {
    rows.next_power_of_two()
}

fn mh_kind(heads: usize, single: LayoutKind, multi: LayoutKind) -> LayoutKind {
    if heads > 1 {
        multi
    } else {
        single
    }
}

/// Input and output layouts of the spatial ct-pt product for an `L×D` input
/// and a `D×D` weight; `heads > 1` asks for a multi-head output.
pub fn cp_layouts(dims: Dims, slots: usize) -> Result<(Layout, Layout)> {
    let lanes = lanes_for(dims.l);
    let x = Layout::spatial(dims.l, dims.d, lanes, slots)?;
    Ok((x, spatial_out(dims.l, dims.d, dims.heads, lanes, slots)?))
}

/// Layouts of the diagonal ct-pt product for a dense `L×D` multi-head diagonal input.
pub fn cpdiag_layouts(dims: Dims, slots: usize) -> Result<(Layout, Layout)> {
    let lanes = lanes_for(dims.l);
    check_heads(dims)?;
    let width = (dims.d / dims.heads).next_power_of_two();
    let kind = mh_kind(dims.heads, LayoutKind::Diagonal, LayoutKind::MultiHeadDiagonal);
    let x = Layout::new(kind, dims.l, dims.d, dims.heads, lanes, width, slots)?;
    Ok((x, Layout::spatial(dims.l, dims.d, lanes, slots)?))
}

fn check_heads(dims: Dims) -> Result<()> {
    if dims.heads == 0 || dims.d % dims.heads != 0 {
        return Err(Error::Shape(format!("{} heads do not divide {}", dims.heads, dims.d)));
    }
    Ok(())
}

fn spatial_out(rows: usize, cols: usize, heads: usize, lanes: usize, slots: usize) -> Result<Layout> {
    if heads > 1 {
        check_heads(Dims { l: rows, d: cols, heads })?;
        Layout::multi_head_spatial(rows, cols, heads, lanes, (cols / heads).next_power_of_two(), slots)
    } else {
        Layout::spatial(rows, cols, lanes, slots)
    }
}

pub(super) fn predict(x: &Layout, out: &Layout, plan: &BsgsPlan) -> Result<MatmulCost> {
    let r = x.groups_per_ct();
    plan.check(r)?;
    let nb = plan.b.min(r);
    let (n_in, n_out) = (x.num_cts() as u64, out.num_cts() as u64);
    Ok(MatmulCost {
        rotations: n_in * (nb as u64 - 1) + n_out * (r.div_ceil(nb) as u64 - 1),
        ct_ct_mults: 0,
        ct_pt_mults: n_in * n_out * r as u64,
        depth: 1,
    })
}

/// `out = Σ_c Σ_r M_{o,c,r} ⊙ Rot_{r·lanes}(x_c)` with group rotations `r`
/// split into baby and giant steps. Each mask reads the weight entry that
/// links the logical entry arriving in a slot to the one the output layout
/// keeps there, so any input or output ordering is a plaintext reordering.
fn linear_cp<B: SlotBackend>(
    be: &mut B,
    x: &PackedTensor<B::Ct>,
    w: &Matrix,
    out: Layout,
    plan: &BsgsPlan,
) -> Result<PackedTensor<B::Ct>> {
    let lay = x.layout;
    if w.rows != lay.cols || out.cols != w.cols || out.rows != lay.rows {
        return Err(Error::Shape(format!("{}x{} input times {}x{} weight", lay.rows, lay.cols, w.rows, w.cols)));
    }
    if out.lanes != lay.lanes || out.slots != lay.slots {
        return Err(Error::Layout(format!("output layout {out:?} does not match input {lay:?}")));
    }
    let range = lay.groups_per_ct();
    plan.check(range)?;
    let nb = plan.b.min(range);
    let (lanes, slots) = (lay.lanes, lay.slots);
    let src = owners(&lay);
    let dst = owners(&out);
    let mut babies: Vec<Vec<B::Ct>> = Vec::with_capacity(x.cts.len());
    for c in &x.cts {
        let mut row = Vec::with_capacity(nb);
        for b in 0..nb {
            row.push(rot(be, c, (b * lanes) as i64)?);
        }
        babies.push(row);
    }
    let mut cts = Vec::with_capacity(out.num_cts());
    for dst_ct in &dst {
        let mut giants: Giants<'_, B::Ct> = BTreeMap::new();
        for (c, row) in babies.iter().enumerate() {
            for r in 0..range {
                let mask = (0..slots)
                    .map(|s| match (dst_ct[s], src[c][(s + r * lanes) % slots]) {
                        (Some((i, n)), Some((i2, j))) if i == i2 => w.get(j, n),
                        _ => 0.0,
                    })
                    .collect();
                let g = r / nb * nb;
                giants.entry(norm((g * lanes) as i64, slots)).or_default().push((&row[r % nb], mask));
            }
        }
        cts.push(giant_sum(be, giants)?);
    }
    PackedTensor::new(out, cts)
}

/// `x·W` for a spatial-first `x`. With `head_reorder = Some(H)` the weight
/// columns are permuted so the output lands in multi-head spatial-first
/// order, ready for [`super::matmul_cc`].
pub fn matmul_cp_spatial<B: SlotBackend>(
    be: &mut B,
    x: &PackedTensor<B::Ct>,
    w: &Matrix,
    head_reorder: Option<usize>,
    plan: &BsgsPlan,
) -> Result<PackedTensor<B::Ct>> {
    let lay = x.layout;
    if !lay.is_spatial() {
        return Err(Error::Layout(format!("matmul_cp_spatial needs a spatial-first input, got {:?}", lay.kind)));
    }
    let out = spatial_out(lay.rows, w.cols, head_reorder.unwrap_or(1), lay.lanes, lay.slots)?;
    linear_cp(be, x, w, out, plan)
}

/// `C·W` for a diagonal-packed `C` (dense, see [`collapse_padding`]); the
/// weight rows follow the head order of `C` and the output is spatial-first.
pub fn matmul_cp_diagonal<B: SlotBackend>(
    be: &mut B,
    c: &PackedTensor<B::Ct>,
    w: &Matrix,
    plan: &BsgsPlan,
) -> Result<PackedTensor<B::Ct>> {
    let lay = c.layout;
    if !lay.is_diagonal() {
        return Err(Error::Layout(format!("matmul_cp_diagonal needs a diagonal input, got {:?}", lay.kind)));
    }
    let out = Layout::spatial(lay.rows, w.cols, lay.lanes, lay.slots)?;
    linear_cp(be, c, w, out, plan)
}

/// Fold a diagonal product whose right operand was zero-padded from `dense`
/// to `2·dense` columns per head back into a dense diagonal packing by adding
/// diagonals `d` and `d + dense`: one rotation within a ciphertext, or plain
/// additions of ciphertext pairs when the halves live in different ones.
pub fn collapse_padding<B: SlotBackend>(be: &mut B, c: &PackedTensor<B::Ct>, dense: usize) -> Result<PackedTensor<B::Ct>> {
    let lay = c.layout;
    if !lay.is_diagonal() || lay.head_width() != lay.width || lay.width != 2 * dense {
        return Err(Error::Shape(format!("cannot collapse {lay:?} to {dense} columns per head")));
    }
    let out = Layout::new(lay.kind, lay.rows, lay.heads * dense, lay.heads, lay.lanes, dense, lay.slots)?;
    let offset = lay.heads * dense;
    let gpc = lay.groups_per_ct();
    let cts = if offset >= gpc {
        let half = c.cts.len() / 2;
        (0..half).map(|o| be.add(&c.cts[o], &c.cts[o + half])).collect::<Result<Vec<_>>>()?
    } else {
        let r = rot(be, &c.cts[0], (offset * lay.lanes) as i64)?;
        alloc::vec![be.add(&c.cts[0], &r)?]
    };
    PackedTensor::new(out, cts)
}

/// Rotations spent by [`collapse_padding`].
pub fn collapse_rotations(lay: &Layout, dense: usize) -> u64 {
    u64::from(lay.heads * dense < lay.groups_per_ct())
}
