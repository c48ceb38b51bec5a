//! Operator graphs of a Transformer block and their partition into fused
//! linear blocks.
//!
//! Every node is one of the fifteen operators below. Linear operators fall
//! into four categories by how they change the shape of their input; a
//! chain of linear operators runs under HE as one block as long as each
//! producer/consumer pair may fuse and the chain fits a preset's depth.

mod cost;
mod graph;
mod plan;
#[cfg(test)]
mod tests;

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cost::{block_bytes, compare_estimates, estimate_plan_cost, ConversionCost, CostConfig, HeOpEstimate, PlanComparison, PlanCost};
pub use graph::{
    decompose_block, decompose_block_with, gelu_graph, layernorm_graph, operand_names, parse_graph, softmax_graph, Approx, BlockDims,
    Graph, OpNode, Operand, Shape, Value,
};
pub use plan::{
    plan_blocks, unfused_plan, Conversion, Direction, FusedBlock, FusionPlan, MpcSegment, Packing, Placement, Segment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Input and output shapes agree.
    Identity,
    /// A per-row scalar spread over the row, `(L,1) → (L,D)`.
    Expansion,
    /// Sum over a dimension, `(L,D) → (L,1)`.
    Reduction,
    /// Matrix product.
    Transformation,
    Nonlinear,
}

impl Category {
    pub fn is_linear(self) -> bool {
        self != Category::Nonlinear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    EwaddCc,
    EwaddCp,
    EwmulCc,
    EwmulCp,
    SaddCc,
    SaddCp,
    SmulCc,
    SmulCp,
    Sum,
    MatmulCc,
    MatmulCp,
    Cmp,
    Mux,
    Rec,
    Rsqrt,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::EwaddCc,
        OpKind::EwaddCp,
        OpKind::EwmulCc,
        OpKind::EwmulCp,
        OpKind::SaddCc,
        OpKind::SaddCp,
        OpKind::SmulCc,
        OpKind::SmulCp,
        OpKind::Sum,
        OpKind::MatmulCc,
        OpKind::MatmulCp,
        OpKind::Cmp,
        OpKind::Mux,
        OpKind::Rec,
        OpKind::Rsqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::EwaddCc => "ewadd_cc",
            OpKind::EwaddCp => "ewadd_cp",
            OpKind::EwmulCc => "ewmul_cc",
            OpKind::EwmulCp => "ewmul_cp",
            OpKind::SaddCc => "sadd_cc",
            OpKind::SaddCp => "sadd_cp",
            OpKind::SmulCc => "smul_cc",
            OpKind::SmulCp => "smul_cp",
            OpKind::Sum => "sum",
            OpKind::MatmulCc => "matmul_cc",
            OpKind::MatmulCp => "matmul_cp",
            OpKind::Cmp => "cmp",
            OpKind::Mux => "mux",
            OpKind::Rec => "rec",
            OpKind::Rsqrt => "rsqrt",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        OpKind::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| Error::UnknownOp(String::from(name)))
    }

    pub fn category(self) -> Category {
        match self {
            OpKind::EwaddCc | OpKind::EwaddCp | OpKind::EwmulCc | OpKind::EwmulCp => Category::Identity,
            OpKind::SaddCc | OpKind::SaddCp | OpKind::SmulCc | OpKind::SmulCp => Category::Expansion,
            OpKind::Sum => Category::Reduction,
            OpKind::MatmulCc | OpKind::MatmulCp => Category::Transformation,
            OpKind::Cmp | OpKind::Mux | OpKind::Rec | OpKind::Rsqrt => Category::Nonlinear,
        }
    }

    /// Additions, which cost no level and are local on shares.
    pub fn is_additive(self) -> bool {
        matches!(self, OpKind::EwaddCc | OpKind::EwaddCp | OpKind::SaddCc | OpKind::SaddCp | OpKind::Sum)
    }
}

impl core::fmt::Display for OpKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Category of an operator given by name.
pub fn categorize(op: &str) -> Result<Category> {
    OpKind::parse(op).map(OpKind::category)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllegalReason {
    /// The pattern never arises in a Transformer layer.
    AbsentFromTransformers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Legality {
    Legal { result: Category, new_packing: bool },
    Illegal(IllegalReason),
}

impl Legality {
    pub fn is_legal(self) -> bool {
        matches!(self, Legality::Legal { .. })
    }
}

/// Whether `first` followed by `second` may run as one fused operator.
pub fn fuse_legality(first: Category, second: Category) -> Result<Legality> {
    use Category::*;
    if !first.is_linear() || !second.is_linear() {
        return Err(Error::Domain(format!("cannot fuse {first:?} with {second:?}")));
    }
    let legal = |result, new_packing| Ok(Legality::Legal { result, new_packing });
    match (first, second) {
        (Identity, other) | (other, Identity) => legal(other, false),
        (Expansion, Reduction) | (Reduction, Expansion) => legal(Identity, true),
        (Expansion, Transformation) => legal(Expansion, true),
        (Transformation, Reduction) => legal(Reduction, true),
        (Transformation, Transformation) => legal(Transformation, true),
        _ => Ok(Legality::Illegal(IllegalReason::AbsentFromTransformers)),
    }
}
