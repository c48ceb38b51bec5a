use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutKind {
    SpatialFirst,
    ReduceFirst,
    Diagonal,
    MultiHeadSpatialFirst,
    MultiHeadReduceFirst,
    MultiHeadDiagonal,
}

impl LayoutKind {
    fn base(self) -> Base {
        match self {
            LayoutKind::SpatialFirst | LayoutKind::MultiHeadSpatialFirst => Base::Spatial,
            LayoutKind::ReduceFirst | LayoutKind::MultiHeadReduceFirst => Base::Reduce,
            LayoutKind::Diagonal | LayoutKind::MultiHeadDiagonal => Base::Diagonal,
        }
    }

    fn multi_head(self) -> bool {
        matches!(
            self,
            LayoutKind::MultiHeadSpatialFirst | LayoutKind::MultiHeadReduceFirst | LayoutKind::MultiHeadDiagonal
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Base {
    Spatial,
    Reduce,
    Diagonal,
}

/// Binding of a logical `rows × cols` matrix to slot positions.
///
/// Slots are grouped in runs of `lanes`. With `groups = heads · width`, one
/// period of `lanes · groups` slots holds the tensor and is repeated to fill
/// the ciphertext; anything not holding a logical entry is zero.
///
/// * spatial: entry `(i, h·w + c)` sits at `i + lanes·(h + heads·c)`
/// * reduce-first: entry `(h·w + k, j)` sits at `j + lanes·(h + heads·k)`
/// * diagonal: entry `(i, h·w + c)` sits at `i + lanes·(h + heads·((c − i) mod width))`
///
/// where `w` is the logical per-head width (`cols / heads`, or `rows / heads`
/// for reduce-first) and `width ≥ w` its padded group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub kind: LayoutKind,
    pub rows: usize,
    pub cols: usize,
    pub heads: usize,
    pub lanes: usize,
    pub width: usize,
    pub slots: usize,
}

impl Layout {
    pub fn new(
        kind: LayoutKind,
        rows: usize,
        cols: usize,
        heads: usize,
        lanes: usize,
        width: usize,
        slots: usize,
    ) -> Result<Self> {
        let l = Layout { kind, rows, cols, heads, lanes, width, slots };
        l.validate()?;
        Ok(l)
    }

    /// Spatial-first with the smallest power-of-two padding.
    pub fn spatial(rows: usize, cols: usize, lanes: usize, slots: usize) -> Result<Self> {
        Self::new(LayoutKind::SpatialFirst, rows, cols, 1, lanes, cols.next_power_of_two(), slots)
    }

    /// A per-row vector replicated across every column group.
    pub fn broadcast(rows: usize, lanes: usize, slots: usize) -> Result<Self> {
        Self::new(LayoutKind::SpatialFirst, rows, 1, 1, lanes, 1, slots)
    }

    pub fn multi_head_spatial(rows: usize, cols: usize, heads: usize, lanes: usize, width: usize, slots: usize) -> Result<Self> {
        Self::new(LayoutKind::MultiHeadSpatialFirst, rows, cols, heads, lanes, width, slots)
    }

    fn validate(&self) -> Result<()> {
        let pow2 = |x: usize| x.is_power_of_two();
        if !pow2(self.lanes) || !pow2(self.width) || !pow2(self.heads) || !pow2(self.slots) {
            return Err(Error::Layout(format!("lanes, width, heads and slots must be powers of two: {self:?}")));
        }
        if !self.kind.multi_head() && self.heads != 1 {
            return Err(Error::Layout(format!("{:?} is headless but heads = {}", self.kind, self.heads)));
        }
        let (lane_dim, head_dim) = match self.kind.base() {
            Base::Spatial | Base::Diagonal => (self.rows, self.cols),
            Base::Reduce => (self.cols, self.rows),
        };
        if head_dim % self.heads != 0 {
            return Err(Error::Layout(format!("{} heads do not divide dimension {head_dim}", self.heads)));
        }
        if lane_dim > self.lanes {
            return Err(Error::Capacity(format!("{lane_dim} entries exceed {} lanes", self.lanes)));
        }
        if head_dim / self.heads > self.width {
            return Err(Error::Capacity(format!(
                "per-head width {} exceeds padded width {}",
                head_dim / self.heads,
                self.width
            )));
        }
        if self.lanes > self.slots {
            return Err(Error::Capacity(format!("{} lanes exceed {} slots", self.lanes, self.slots)));
        }
        Ok(())
    }

    /// Logical per-head width.
    pub fn head_width(&self) -> usize {
        match self.kind.base() {
            Base::Reduce => self.rows / self.heads,
            _ => self.cols / self.heads,
        }
    }

    pub fn groups(&self) -> usize {
        self.heads * self.width
    }

    pub fn period(&self) -> usize {
        self.lanes * self.groups()
    }

    pub fn num_cts(&self) -> usize {
        self.period().div_ceil(self.slots)
    }

    /// Column groups held by one ciphertext.
    pub fn groups_per_ct(&self) -> usize {
        self.groups().min(self.slots / self.lanes)
    }

    /// Slot period inside one ciphertext.
    pub fn ct_period(&self) -> usize {
        self.lanes * self.groups_per_ct()
    }

    pub fn is_spatial(&self) -> bool {
        self.kind.base() == Base::Spatial
    }

    pub fn is_reduce_first(&self) -> bool {
        self.kind.base() == Base::Reduce
    }

    pub fn is_diagonal(&self) -> bool {
        self.kind.base() == Base::Diagonal
    }

    /// `(lane, group)` of logical entry `(i, j)`.
    pub fn lane_group(&self, i: usize, j: usize) -> (usize, usize) {
        let w = self.head_width();
        match self.kind.base() {
            Base::Spatial => (i, j / w + self.heads * (j % w)),
            Base::Reduce => (j, i / w + self.heads * (i % w)),
            Base::Diagonal => {
                let (h, c) = (j / w, j % w);
                let d = (c + self.width - i % self.width) % self.width;
                (i, h + self.heads * d)
            }
        }
    }

    /// `(ciphertext, slot)` of the first copy of entry `(i, j)`.
    pub fn locate(&self, i: usize, j: usize) -> (usize, usize) {
        let (lane, group) = self.lane_group(i, j);
        let gpc = self.groups_per_ct();
        (group / gpc, lane + self.lanes * (group % gpc))
    }

    /// Slot vectors (one per ciphertext) of `x`, zero-padded and replicated.
    pub fn pack(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x.rows != self.rows || x.cols != self.cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix for a {}x{} layout",
                x.rows, x.cols, self.rows, self.cols
            )));
        }
        let mut out = vec![vec![0.0; self.slots]; self.num_cts()];
        let per = self.ct_period();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let (ct, slot) = self.locate(i, j);
                let v = x.get(i, j);
                let mut s = slot;
                while s < self.slots {
                    out[ct][s] += v;
                    s += per;
                }
            }
        }
        Ok(out)
    }

    pub fn unpack(&self, cts: &[Vec<f64>]) -> Result<Matrix> {
        if cts.len() != self.num_cts() || cts.iter().any(|c| c.len() != self.slots) {
            return Err(Error::Shape(format!("expected {} slot vectors of length {}", self.num_cts(), self.slots)));
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| {
            let (ct, slot) = self.locate(i, j);
            cts[ct][slot]
        }))
    }

    /// Indicator of the slots holding logical entries.
    pub fn support(&self) -> Vec<Vec<f64>> {
        self.pack(&Matrix::from_fn(self.rows, self.cols, |_, _| 1.0)).expect("shape matches")
    }

    pub fn with_kind(&self, kind: LayoutKind) -> Result<Self> {
        Self::new(kind, self.rows, self.cols, self.heads, self.lanes, self.width, self.slots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spatial_first_stacks_columns() {
        let x = Matrix::from_fn(4, 2, |i, j| (10 * i + j) as f64);
        let l = Layout::spatial(4, 2, 4, 8).unwrap();
        assert_eq!(l.pack(&x).unwrap()[0], vec![0.0, 10.0, 20.0, 30.0, 1.0, 11.0, 21.0, 31.0]);
    }

    #[test]
    fn multi_head_interleaves_heads_within_a_column() {
        // two heads of width two: columns h0c0, h1c0, h0c1, h1c1
        let x = Matrix::from_fn(2, 4, |i, j| (10 * i + j) as f64);
        let l = Layout::multi_head_spatial(2, 4, 2, 2, 2, 8).unwrap();
        assert_eq!(l.pack(&x).unwrap()[0], vec![0.0, 10.0, 2.0, 12.0, 1.0, 11.0, 3.0, 13.0]);
        let l = Layout::multi_head_spatial(4, 2, 2, 4, 1, 8).unwrap();
        let x = Matrix::from_fn(4, 2, |i, j| (10 * i + j) as f64);
        assert_eq!(l.pack(&x).unwrap()[0], vec![0.0, 10.0, 20.0, 30.0, 1.0, 11.0, 21.0, 31.0]);
    }

    #[test]
    fn diagonal_places_wrapped_diagonals() {
        let x = Matrix::from_fn(4, 4, |i, j| (10 * i + j) as f64);
        let l = Layout::new(LayoutKind::Diagonal, 4, 4, 1, 4, 4, 16).unwrap();
        let s = &l.pack(&x).unwrap()[0];
        // diagonal 1: (0,1) (1,2) (2,3) (3,0)
        assert_eq!(&s[4..8], &[1.0, 12.0, 23.0, 30.0]);
    }

    #[test]
    fn padding_is_zero_and_replicated() {
        let x = Matrix::from_fn(3, 3, |i, j| 1.0 + (i * 3 + j) as f64);
        let l = Layout::spatial(3, 3, 4, 64).unwrap();
        let s = &l.pack(&x).unwrap()[0];
        assert_eq!(l.period(), 16);
        assert_eq!(s[3], 0.0);
        assert_eq!(s[12..16], [0.0; 4]);
        assert_eq!(&s[..16], &s[16..32]);
    }

    #[test]
    fn wide_tensors_split_by_column_groups() {
        let x = Matrix::from_fn(4, 8, |i, j| (i * 8 + j) as f64);
        let l = Layout::spatial(4, 8, 4, 8).unwrap();
        assert_eq!(l.num_cts(), 4);
        let cts = l.pack(&x).unwrap();
        assert_eq!(cts[1], vec![2.0, 10.0, 18.0, 26.0, 3.0, 11.0, 19.0, 27.0]);
        assert_eq!(l.unpack(&cts).unwrap(), x);
    }

    #[test]
    fn overflow_is_a_capacity_error() {
        assert!(matches!(Layout::spatial(16, 2, 16, 8), Err(Error::Capacity(_))));
        assert!(matches!(Layout::new(LayoutKind::Diagonal, 4, 4, 1, 4, 4, 2), Err(Error::Capacity(_))));
    }

    fn any_layout() -> impl Strategy<Value = Layout> {
        (0usize..6, 1usize..=8, 1usize..=8, 0u32..3).prop_filter_map("valid", |(k, r, c, hb)| {
            let kind = [
                LayoutKind::SpatialFirst,
                LayoutKind::ReduceFirst,
                LayoutKind::Diagonal,
                LayoutKind::MultiHeadSpatialFirst,
                LayoutKind::MultiHeadReduceFirst,
                LayoutKind::MultiHeadDiagonal,
            ][k];
            let heads = if kind.multi_head() { 1usize << hb } else { 1 };
            let (lane_dim, head_dim) = if kind.base() == Base::Reduce { (c, r * heads) } else { (r, c * heads) };
            let (rows, cols) = if kind.base() == Base::Reduce { (head_dim, lane_dim) } else { (lane_dim, head_dim) };
            let lanes = lane_dim.next_power_of_two();
            let w = head_dim / heads;
            let width = if kind.base() == Base::Diagonal { w.next_power_of_two().max(lanes) } else { w.next_power_of_two() };
            Layout::new(kind, rows, cols, heads, lanes, width, 256).ok()
        })
    }

    proptest! {
        #[test]
        fn unpack_inverts_pack(layout in any_layout(), seed in any::<u64>()) {
            let x = Matrix::from_fn(layout.rows, layout.cols, |i, j| {
                ((seed.wrapping_mul(31).wrapping_add((i * 131 + j * 7) as u64)) % 1000) as f64 - 500.0
            });
            let cts = layout.pack(&x).unwrap();
            prop_assert_eq!(layout.unpack(&cts).unwrap(), x);
            // distinct entries occupy distinct slots
            let ones = layout.support();
            let filled: usize = ones.iter().map(|c| c.iter().filter(|&&v| v != 0.0).count()).sum();
            let copies = layout.slots / layout.ct_period();
            prop_assert_eq!(filled, layout.rows * layout.cols * copies);
        }
    }
}
