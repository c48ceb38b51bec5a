use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Shape, Value};
use super::plan::{plan_blocks, unfused_plan, Direction, FusionPlan, Packing, Placement};
use super::OpKind;
use crate::bridge::WORK_BITS;
use crate::matmul::{predict_cost, predict_linear, BsgsPlan, BsgsTarget, Dims, MatmulPlan, Protocol};
use crate::mpc::CostModel;
use crate::packing::Layout;
use crate::ring_ckks::HePreset;
use crate::Result;

/// Everything the estimator needs to price a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub presets: Vec<HePreset>,
    pub ring_bits: u32,
    pub frac_bits: u32,
    pub headroom: u32,
    pub cost: CostModel,
}

impl CostConfig {
    pub fn new(presets: Vec<HePreset>) -> Self {
        CostConfig { presets, ring_bits: 43, frac_bits: 13, headroom: 40, cost: CostModel::default() }
    }

    fn n(&self) -> usize {
        self.presets.first().map_or(0, |p| p.n)
    }

    fn preset(&self, name: &str) -> &HePreset {
        self.presets.iter().find(|p| p.name == name).unwrap_or(&self.presets[0])
    }

    /// Bytes of a ciphertext at `level` under `preset`.
    pub fn ct_bytes(&self, preset: &HePreset, level: usize) -> u64 {
        let bits: u64 = preset.widths[..=level.min(preset.widths.len() - 1)].iter().map(|&w| w as u64).sum();
        2 * preset.n as u64 * bits / 8
    }

    fn dealer_bytes(&self, kind: &str, bits: u32, elements: usize) -> (u64, u64) {
        let c = self.cost.cost(kind, bits);
        ((c.bits_per_element * elements as u64).div_ceil(8), c.rounds)
    }

    /// Bytes and rounds of moving one ciphertext's slots into HE at `level`.
    pub fn to_he_bytes(&self, preset: &HePreset, level: usize) -> (u64, u64) {
        let (ext, r) = self.dealer_bytes("extend", WORK_BITS, preset.n / 2);
        (ext + self.ct_bytes(preset, level), r + 1)
    }

    /// Bytes and rounds of moving one ciphertext out of HE.
    pub fn to_mpc_bytes(&self, preset: &HePreset) -> (u64, u64) {
        let q0 = preset.widths[0];
        let (f2r, r) = self.dealer_bytes("field_to_ring", q0.max(WORK_BITS), preset.n);
        (self.ct_bytes(preset, 0) + f2r, r + 1)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionCost {
    pub count: u64,
    pub ciphertexts: u64,
    pub bytes: u64,
    pub rounds: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeOpEstimate {
    pub rotations: u64,
    pub ct_ct_mults: u64,
    pub ct_pt_mults: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanCost {
    pub to_he: ConversionCost,
    pub to_mpc: ConversionCost,
    /// Nonlinear functionalities on shares.
    pub mpc_bytes: u64,
    pub mpc_rounds: u64,
    pub truncations: u64,
    /// Truncations on a value passed from one linear operator to another.
    pub truncations_between_linear: u64,
    pub truncation_bytes: u64,
    pub he: HeOpEstimate,
    pub total_bytes: u64,
    pub total_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanComparison {
    pub fused: PlanCost,
    pub unfused: PlanCost,
    /// Fused bytes over unfused bytes.
    pub byte_ratio: f64,
    /// Conversion bytes saved by fusion, as a fraction of the unfused ones.
    pub conversion_reduction: f64,
}

/// Ciphertexts holding a `shape` tensor in `packing`.
pub(crate) fn ciphertexts(shape: Shape, packing: Packing, slots: usize) -> u64 {
    let lanes = shape.rows.next_power_of_two();
    let groups = match packing {
        Packing::Broadcast => return 1,
        Packing::Spatial => shape.cols.next_power_of_two(),
        Packing::MultiHeadSpatial | Packing::MultiHeadDiagonal => shape.heads * shape.head_width().next_power_of_two(),
    };
    (lanes * groups).div_ceil(slots).max(1) as u64
}

fn row_max_tree(g: &Graph, v: Value) -> (usize, u64) {
    let s = g.shape(v);
    let w = s.head_width();
    (s.rows * s.heads * w.saturating_sub(1), (usize::BITS - w.saturating_sub(1).leading_zeros()) as u64)
}

fn he_ops(g: &Graph, plan: &FusionPlan, i: usize, slots: usize) -> Result<HeOpEstimate> {
    let n = &g.nodes[i];
    let pk = plan.packing[i].unwrap_or(Packing::Spatial);
    let cts = ciphertexts(n.shape, pk, slots);
    let mut e = HeOpEstimate::default();
    match n.op {
        OpKind::EwmulCc | OpKind::SmulCc => e.ct_ct_mults = cts,
        OpKind::EwmulCp | OpKind::SmulCp => {
            let b = plan.block_of(i).map(|b| &plan.blocks[b]);
            if !b.is_some_and(|b| b.folded.contains(&i)) {
                e.ct_pt_mults = cts;
            }
        }
        OpKind::Sum => {
            let s = g.shape(n.inputs[0]);
            e.rotations = s.head_width().next_power_of_two().trailing_zeros() as u64;
        }
        OpKind::MatmulCc => {
            let a = g.shape(n.inputs[0]);
            let dims = Dims { l: a.rows.next_power_of_two(), d: a.cols, heads: a.heads };
            let c = predict_cost(Protocol::Cc, dims, slots, &MatmulPlan::default_for(Protocol::Cc, dims, slots)?)?;
            e = HeOpEstimate { rotations: c.rotations, ct_ct_mults: c.ct_ct_mults, ct_pt_mults: c.ct_pt_mults };
        }
        OpKind::MatmulCp => {
            let s = g.shape(n.inputs[0]);
            let lanes = s.rows.next_power_of_two();
            let x = Layout::spatial(s.rows, s.cols, lanes, slots)?;
            let out = if n.shape.heads > 1 {
                Layout::multi_head_spatial(n.shape.rows, n.shape.cols, n.shape.heads, lanes, n.shape.head_width().next_power_of_two(), slots)?
            } else {
                Layout::spatial(n.shape.rows, n.shape.cols, lanes, slots)?
            };
            let c = predict_linear(&x, &out, &BsgsPlan::square(x.groups_per_ct(), BsgsTarget::Cp))?;
            e = HeOpEstimate { rotations: c.rotations, ct_ct_mults: 0, ct_pt_mults: c.ct_pt_mults };
        }
        _ => {}
    }
    Ok(e)
}

/// Bytes and rounds of a plan: conversions, nonlinear functionalities on
/// shares and truncations, plus estimated HE operation counts.
pub fn estimate_plan_cost(g: &Graph, plan: &FusionPlan, cfg: &CostConfig) -> Result<PlanCost> {
    let slots = cfg.n() / 2;
    let l = cfg.ring_bits;
    let mut c = PlanCost::default();
    for conv in &plan.conversions {
        let preset = cfg.preset(&plan.blocks[conv.block].preset);
        let shape = g.shape(conv.value);
        match conv.direction {
            Direction::ToHe => {
                let cts = g
                    .consumers(conv.value)
                    .into_iter()
                    .filter(|&i| plan.placement[i] == Placement::Block(conv.block))
                    .map(|i| {
                        let host = g.shape(g.nodes[i].inputs[0]);
                        let s = if shape == host.per_head_scalar() { host } else { shape };
                        ciphertexts(s, if s.heads > 1 { Packing::MultiHeadSpatial } else { Packing::Spatial }, slots)
                    })
                    .max()
                    .unwrap_or(1);
                let (b, r) = cfg.to_he_bytes(preset, conv.level);
                c.to_he.count += 1;
                c.to_he.ciphertexts += cts;
                c.to_he.bytes += cts * b;
                c.to_he.rounds += r;
            }
            Direction::ToMpc => {
                let src = match conv.value {
                    Value::Node(i) if plan.blocks[conv.block].folded.contains(&i) => g.nodes[i].inputs[0],
                    v => v,
                };
                let pk = match src {
                    Value::Node(i) => plan.packing[i].unwrap_or(Packing::Spatial),
                    Value::Input(_) => Packing::Spatial,
                };
                let cts = ciphertexts(g.shape(src), pk, slots);
                let (b, r) = cfg.to_mpc_bytes(preset);
                c.to_mpc.count += 1;
                c.to_mpc.ciphertexts += cts;
                c.to_mpc.bytes += cts * b;
                c.to_mpc.rounds += r;
                if plan.truncate_outputs {
                    let (tb, tr) = cfg.dealer_bytes("trunc", l + cfg.headroom, shape.len());
                    c.truncations += 1;
                    c.truncation_bytes += tb;
                    c.total_rounds += tr;
                    let linear = |i: usize| g.nodes[i].category().is_linear();
                    let from_linear = matches!(conv.value, Value::Node(i) if linear(i));
                    if from_linear && g.consumers(conv.value).into_iter().any(linear) {
                        c.truncations_between_linear += 1;
                    }
                }
            }
        }
    }
    for (i, n) in g.nodes.iter().enumerate() {
        if plan.placement[i] != Placement::Mpc {
            let e = he_ops(g, plan, i, slots)?;
            c.he.rotations += e.rotations;
            c.he.ct_ct_mults += e.ct_ct_mults;
            c.he.ct_pt_mults += e.ct_pt_mults;
            continue;
        }
        let len = n.shape.len();
        let mut add = |kind: &str, elements: usize, times: u64| {
            let (b, r) = cfg.dealer_bytes(kind, l, elements);
            c.mpc_bytes += b;
            c.mpc_rounds += r * times;
        };
        match n.op {
            OpKind::Cmp if n.row_max => {
                let (elements, levels) = row_max_tree(g, n.inputs[0]);
                add("cmp", elements, levels);
                add("mux", elements, levels);
            }
            OpKind::Cmp => add("cmp", len, 1),
            OpKind::Mux => add("mux", len, 1),
            OpKind::Rec => add("rec", len, 1),
            OpKind::Rsqrt => add("rsqrt", len, 1),
            _ => {}
        }
    }
    c.total_bytes = c.to_he.bytes + c.to_mpc.bytes + c.mpc_bytes + c.truncation_bytes;
    c.total_rounds += c.to_he.rounds + c.to_mpc.rounds + c.mpc_rounds;
    Ok(c)
}

/// Conversion and truncation bytes charged to each block of `plan`.
pub fn block_bytes(g: &Graph, plan: &FusionPlan, cfg: &CostConfig) -> Result<Vec<u64>> {
    (0..plan.blocks.len())
        .map(|b| {
            let mut p = plan.clone();
            p.conversions.retain(|c| c.block == b);
            let c = estimate_plan_cost(g, &p, cfg)?;
            Ok(c.to_he.bytes + c.to_mpc.bytes + c.truncation_bytes)
        })
        .collect()
}

/// The fused plan against the per-operator plan of the same graph.
pub fn compare_estimates(g: &Graph, cfg: &CostConfig) -> Result<PlanComparison> {
    let fused = estimate_plan_cost(g, &plan_blocks(g, &cfg.presets)?, cfg)?;
    let unfused = estimate_plan_cost(g, &unfused_plan(g, &cfg.presets)?, cfg)?;
    let conv = |c: &PlanCost| (c.to_he.bytes + c.to_mpc.bytes) as f64;
    Ok(PlanComparison {
        byte_ratio: fused.total_bytes as f64 / unfused.total_bytes as f64,
        conversion_reduction: 1.0 - conv(&fused) / conv(&unfused),
        fused,
        unfused,
    })
}
