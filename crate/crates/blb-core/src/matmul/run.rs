use alloc::format;
use alloc::vec::Vec;

use super::{
    bolt_layouts, bolt_matmul_cc, cc_layouts, cp_layouts, cpdiag_layouts, matmul_cc, matmul_cp_diagonal, matmul_cp_spatial,
    Dims, MatmulCost, MatmulPlan, Protocol,
};
use crate::matrix::Matrix;
use crate::packing::{level_of, pack, unpack, SlotBackend};
use crate::{Error, Result};

/// Shapes of the two operands: `L×D` on the left, `D×L` (ct-ct) or `D×D` (ct-pt) on the right.
pub fn operand_shapes(protocol: Protocol, dims: Dims) -> ((usize, usize), (usize, usize)) {
    match protocol {
        Protocol::Cc | Protocol::BoltCc => ((dims.l, dims.d), (dims.d, dims.l)),
        Protocol::Cp | Protocol::CpDiag => ((dims.l, dims.d), (dims.d, dims.d)),
    }
}

/// Plaintext result in the order [`run_protocol`] returns it: per-head products
/// side by side for the ct-ct protocols, `left·right` otherwise.
pub fn reference_product(protocol: Protocol, heads: usize, left: &Matrix, right: &Matrix) -> Result<Matrix> {
    match protocol {
        Protocol::Cp | Protocol::CpDiag => left.matmul(right),
        Protocol::Cc | Protocol::BoltCc => {
            if heads == 0 || left.cols % heads != 0 || right.rows != left.cols {
                return Err(Error::Shape(format!("{heads} heads over {}x{} times {}x{}", left.rows, left.cols, right.rows, right.cols)));
            }
            let dh = left.cols / heads;
            let blocks = (0..heads)
                .map(|h| left.col_block(h * dh, dh).matmul(&right.row_block(h * dh, dh)))
                .collect::<Result<Vec<_>>>()?;
            Ok(hconcat(&blocks))
        }
    }
}

fn hconcat(blocks: &[Matrix]) -> Matrix {
    let rows = blocks[0].rows;
    let cols: usize = blocks.iter().map(|b| b.cols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut off = 0;
    for b in blocks {
        for i in 0..rows {
            for j in 0..b.cols {
                out.set(i, off + j, b.get(i, j));
            }
        }
        off += b.cols;
    }
    out
}

/// Pack both operands at `level` (the right one stays plaintext for ct-pt),
/// run the protocol and decrypt. The cost covers the protocol alone.
pub fn run_protocol<B: SlotBackend>(
    be: &mut B,
    protocol: Protocol,
    heads: usize,
    left: &Matrix,
    right: &Matrix,
    plan: &MatmulPlan,
    level: usize,
) -> Result<(Matrix, MatmulCost)> {
    let dims = Dims { l: left.rows, d: left.cols, heads };
    let slots = be.slots();
    let (out, before, out_level) = match protocol {
        Protocol::Cc => {
            let (la, lb, _) = cc_layouts(dims, slots)?;
            let pa = pack(be, left, la, level)?;
            let pb = pack(be, right, lb, level)?;
            let before = be.counters();
            let c = matmul_cc(be, &pa, &pb, plan)?;
            (unpack(be, &c)?, before, level_of(be, &c))
        }
        Protocol::Cp => {
            let (lx, _) = cp_layouts(dims, slots)?;
            let px = pack(be, left, lx, level)?;
            let before = be.counters();
            let reorder = (heads > 1).then_some(heads);
            let c = matmul_cp_spatial(be, &px, right, reorder, &plan.cp)?;
            (unpack(be, &c)?, before, level_of(be, &c))
        }
        Protocol::CpDiag => {
            let (lx, _) = cpdiag_layouts(dims, slots)?;
            let px = pack(be, left, lx, level)?;
            let before = be.counters();
            let c = matmul_cp_diagonal(be, &px, right, &plan.cp)?;
            (unpack(be, &c)?, before, level_of(be, &c))
        }
        Protocol::BoltCc => {
            let (la, lb, _) = bolt_layouts(dims, slots)?;
            let dh = dims.d / heads;
            let mut pa = Vec::with_capacity(heads);
            let mut pb = Vec::with_capacity(heads);
            for h in 0..heads {
                pa.push(pack(be, &left.col_block(h * dh, dh), la, level)?);
                pb.push(pack(be, &right.row_block(h * dh, dh), lb, level)?);
            }
            let before = be.counters();
            let outs = bolt_matmul_cc(be, &pa, &pb)?;
            let blocks = outs.iter().map(|c| unpack(be, c)).collect::<Result<Vec<_>>>()?;
            let lvl = outs.iter().map(|c| level_of(be, c)).min().unwrap_or(0);
            (hconcat(&blocks), before, lvl)
        }
    };
    let delta = be.counters().since(&before);
    Ok((out, MatmulCost::measured(&delta, level - out_level)))
}
