//! Slot layouts for logical tensors and the rotate-and-sum kernels.

pub mod backend;
pub mod kernels;
pub mod layout;

pub use backend::{align, sum_all, HeBackend, PlainBackend, PlainCt, SlotBackend};
pub use kernels::{
    add_const, add_plain, broadcast, drop_tensor, ew_add, ew_mul, ew_sub, inner_rotate, inner_rotate_all, lane_mask,
    level_of, mul_const, mul_plain, pack, reduce_sum, unpack, PackedTensor,
};
pub use layout::{Layout, LayoutKind};
