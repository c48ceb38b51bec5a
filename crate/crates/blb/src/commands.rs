//! The work behind each subcommand. Every function is deterministic in its
//! arguments and returns a serializable report.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blb_core::bridge::{mask_histogram, sample_mask, MaskHistogram, MaskMode};
use blb_core::fuser::{
    block_bytes, decompose_block, estimate_plan_cost, parse_graph, plan_blocks, unfused_plan, BlockDims, Category, Graph, OpKind,
    PlanCost,
};
use blb_core::matmul::{operand_shapes, predict_cost, reference_product, run_protocol, Dims, MatmulCost, MatmulPlan, Protocol};
use blb_core::matrix::Matrix;
use blb_core::packing::{HeBackend, PlainBackend};
use blb_core::ring_ckks::{desk_presets, setup_context, CkksContext, CkksParams, Encryptor, Evaluator, RingPoly};
use blb_core::rng::SeedTree;
use blb_core::runtime::{CompareReport, Engine, Latency, RunReport, Session, Weights};
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::{EngineKind, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Uniform coefficients over the field.
    Secure,
    /// An encoded uniform slot vector.
    Mp2ml,
}

#[derive(Debug, Clone)]
pub struct MaskArgs {
    pub n: usize,
    pub logq: u32,
    pub mode: MaskKind,
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskReport {
    #[serde(flatten)]
    pub histogram: MaskHistogram,
    pub samples: usize,
    pub q: u64,
    /// `q / (8√N)`.
    pub bound: f64,
    /// `1 / (4√N)`, the inside fraction of a uniform mask.
    pub uniform_inside: f64,
    pub uniform_sigma: f64,
    /// Chi-square goodness of fit of the bins against uniform.
    pub chi_square: f64,
    pub chi_square_p: f64,
}

pub fn demo_mask(a: &MaskArgs) -> Result<MaskReport> {
    if a.samples == 0 || a.bins < 2 {
        bail!("need at least one sample and two bins");
    }
    let params = CkksParams::from_widths(a.n, &[a.logq], a.logq.saturating_sub(20).max(1), 3.2)?;
    let ctx = CkksContext::new(params)?;
    let emb = ctx.embedding();
    let q = ctx.chain[0];
    let mode = match a.mode {
        MaskKind::Secure => MaskMode::SecureUniform,
        MaskKind::Mp2ml => MaskMode::Mp2mlEncoded,
    };
    let mut rng = SeedTree::new(a.seed).stream("demo-mask");
    let polys: Vec<RingPoly> = (0..a.samples).map(|_| sample_mask(&ctx, &emb, 0, mode, &mut rng)).collect();
    let mut h = mask_histogram(&polys, q, a.bins);
    h.mode = match a.mode {
        MaskKind::Secure => "secure",
        MaskKind::Mp2ml => "mp2ml",
    }
    .into();
    let total: u64 = h.bins.iter().map(|b| b.count).sum();
    let chi_square: f64 = h
        .bins
        .iter()
        .map(|b| {
            let e = total as f64 * (b.hi - b.lo) as f64 / q as f64;
            (b.count as f64 - e).powi(2) / e
        })
        .sum();
    let chi_square_p = 1.0 - ChiSquared::new((a.bins - 1) as f64)?.cdf(chi_square);
    let p = 1.0 / (4.0 * (a.n as f64).sqrt());
    Ok(MaskReport {
        samples: a.samples,
        q,
        bound: q as f64 / (8.0 * (a.n as f64).sqrt()),
        uniform_inside: p,
        uniform_sigma: (p * (1.0 - p) / total as f64).sqrt(),
        chi_square,
        chi_square_p,
        histogram: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolArg {
    Cc,
    Cp,
    Cpdiag,
    /// Per-head ct-ct baseline without preprocessing.
    BoltCc,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Cc => Protocol::Cc,
            ProtocolArg::Cp => Protocol::Cp,
            ProtocolArg::Cpdiag => Protocol::CpDiag,
            ProtocolArg::BoltCc => Protocol::BoltCc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub dims: Dims,
    pub poly_n: usize,
    pub protocol: Protocol,
    pub scale_bits: u32,
    pub engine: EngineKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub protocol: Protocol,
    pub dims: Dims,
    pub poly_n: usize,
    pub scale_bits: u32,
    pub engine: EngineKind,
    pub plan: MatmulPlan,
    pub predicted: MatmulCost,
    pub measured: MatmulCost,
    pub counts_match: bool,
    pub max_abs_error: f64,
}

const MATMUL_LEVEL: usize = 4;

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized to fit")
}

pub fn bench_matmul(a: &BenchArgs) -> Result<BenchReport> {
    let slots = a.poly_n / 2;
    let plan = MatmulPlan::default_for(a.protocol, a.dims, slots)?;
    let predicted = predict_cost(a.protocol, a.dims, slots, &plan)?;
    let tree = SeedTree::new(a.seed);
    let mut rng = tree.stream("operands");
    let (ls, rs) = operand_shapes(a.protocol, a.dims);
    let left = uniform(ls.0, ls.1, &mut rng);
    let right = uniform(rs.0, rs.1, &mut rng);

    let mut plain = PlainBackend::new(slots, MATMUL_LEVEL);
    let (plain_out, plain_cost) = run_protocol(&mut plain, a.protocol, a.dims.heads, &left, &right, &plan, MATMUL_LEVEL)?;
    let (out, measured) = match a.engine {
        EngineKind::Plain => (plain_out, plain_cost),
        EngineKind::Ckks => {
            let steps: Vec<i64> = plain.steps.iter().copied().collect();
            let mut widths = vec![60];
            widths.extend([a.scale_bits + 1; MATMUL_LEVEL]);
            let params = CkksParams::from_widths(a.poly_n, &widths, a.scale_bits, 3.2)?;
            let (ctx, sk, keys) = setup_context(params, tree.child("keys").seed(), &steps)?;
            let enc = Encryptor::new(ctx.clone(), sk, tree.stream("encrypt"));
            let mut be = HeBackend::new(Evaluator::new(ctx, Arc::new(keys)), Some(enc));
            run_protocol(&mut be, a.protocol, a.dims.heads, &left, &right, &plan, MATMUL_LEVEL)?
        }
    };
    let want = reference_product(a.protocol, a.dims.heads, &left, &right)?;
    Ok(BenchReport {
        protocol: a.protocol,
        dims: a.dims,
        poly_n: a.poly_n,
        scale_bits: a.scale_bits,
        engine: a.engine,
        plan,
        predicted,
        measured,
        counts_match: predicted == measured,
        max_abs_error: out.max_abs_diff(&want),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanNode {
    pub name: String,
    pub op: OpKind,
    pub category: Category,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanBlock {
    pub name: String,
    pub preset: String,
    pub depth: usize,
    pub preset_depth: usize,
    pub nodes: Vec<PlanNode>,
    /// Nodes that run after the rest of the graph and feed the next layer.
    pub carried: Vec<String>,
    pub est_bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub model: String,
    pub poly_n: usize,
    pub blocks: Vec<PlanBlock>,
    pub mpc_nodes: Vec<PlanNode>,
    pub conversions_to_he: usize,
    pub conversions_to_mpc: usize,
    pub estimate: PlanCost,
    pub unfused_estimate: PlanCost,
}

pub enum GraphSource {
    BertBlock(BlockDims),
    Text(String),
}

pub fn fusion_plan(src: &GraphSource, poly_n: usize) -> Result<PlanReport> {
    let (model, g): (String, Graph) = match src {
        GraphSource::BertBlock(d) => ("bert-block".into(), decompose_block(*d)?),
        GraphSource::Text(t) => ("text".into(), parse_graph(t)?),
    };
    let presets = desk_presets(poly_n, 40);
    let plan = plan_blocks(&g, &presets)?;
    let cost = blb_core::fuser::CostConfig::new(presets.clone());
    let bytes = block_bytes(&g, &plan, &cost)?;
    let node = |i: usize| PlanNode { name: g.nodes[i].name.clone(), op: g.nodes[i].op, category: g.nodes[i].category() };
    let blocks = plan
        .blocks
        .iter()
        .zip(bytes)
        .map(|(b, est_bytes)| PlanBlock {
            name: b.name.clone(),
            preset: b.preset.clone(),
            depth: b.depth,
            preset_depth: b.preset_depth,
            nodes: b.nodes.iter().map(|&i| node(i)).collect(),
            carried: b.carried.iter().map(|&i| g.nodes[i].name.clone()).collect(),
            est_bytes,
        })
        .collect();
    let mpc_nodes = (0..g.nodes.len()).filter(|&i| plan.block_of(i).is_none()).map(node).collect();
    Ok(PlanReport {
        model,
        poly_n,
        blocks,
        mpc_nodes,
        conversions_to_he: plan.conversions_to_he(),
        conversions_to_mpc: plan.conversions_to_mpc(),
        estimate: estimate_plan_cost(&g, &plan, &cost)?,
        unfused_estimate: estimate_plan_cost(&g, &unfused_plan(&g, &presets)?, &cost)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub m: usize,
    pub d: usize,
    pub heads: usize,
    pub poly_n: usize,
    pub ring_bits: u32,
    pub frac_bits: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub seed: u64,
    pub config: RunSummary,
    #[serde(flatten)]
    pub report: RunReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutput {
    pub seed: u64,
    pub config: RunSummary,
    #[serde(flatten)]
    pub report: CompareReport,
}

/// Input and weights of a run, drawn from the config's seed unless a
/// weight file is given.
fn inputs(cfg: &RunConfig) -> Result<(Matrix, Weights)> {
    let tree = SeedTree::new(cfg.seed);
    let b = &cfg.block;
    let g = b.graph()?;
    let w = match &cfg.weights {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading weights {}", path.display()))?;
            let mut w = Weights::from_bytes(&bytes)?;
            w.set_gelu(&b.gelu);
            w.check(&g)?;
            w
        }
        None => Weights::random(&g, &b.gelu, &mut tree.stream("weights"))?,
    };
    let x = uniform(b.m, b.d, &mut tree.stream("input"));
    Ok((x, w))
}

fn summary(cfg: &RunConfig) -> RunSummary {
    let b = &cfg.block;
    RunSummary { m: b.m, d: b.d, heads: b.heads, poly_n: b.slots() * 2, ring_bits: b.ring_bits, frac_bits: b.frac_bits }
}

fn relatency(r: &mut RunReport, cfg: &RunConfig) {
    r.est_latency = Latency::on(&cfg.networks, r.totals.bytes, r.totals.rounds);
}

fn block_in<E: Engine>(mut s: Session<E>, cfg: &RunConfig) -> Result<RunReport> {
    let (x, w) = inputs(cfg)?;
    let (_, mut r) = s.run_block(&x, &w)?;
    relatency(&mut r, cfg);
    Ok(r)
}

fn compare_in<E: Engine>(mut s: Session<E>, cfg: &RunConfig) -> Result<CompareReport> {
    let (x, w) = inputs(cfg)?;
    let mut r = s.compare_plans(&x, &w)?;
    relatency(&mut r.fused, cfg);
    relatency(&mut r.unfused, cfg);
    Ok(r)
}

pub fn run_block(cfg: &RunConfig) -> Result<RunOutput> {
    let report = match cfg.engine {
        EngineKind::Ckks => block_in(Session::he(cfg.block.clone())?, cfg)?,
        EngineKind::Plain => block_in(Session::plain(cfg.block.clone())?, cfg)?,
    };
    Ok(RunOutput { seed: cfg.seed, config: summary(cfg), report })
}

pub fn compare_plans(cfg: &RunConfig) -> Result<CompareOutput> {
    let report = match cfg.engine {
        EngineKind::Ckks => compare_in(Session::he(cfg.block.clone())?, cfg)?,
        EngineKind::Plain => compare_in(Session::plain(cfg.block.clone())?, cfg)?,
    };
    Ok(CompareOutput { seed: cfg.seed, config: summary(cfg), report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secure_masks_look_uniform_at_small_n() {
        let r = demo_mask(&MaskArgs { n: 1024, logq: 50, mode: MaskKind::Secure, samples: 8, bins: 32, seed: 1 }).unwrap();
        assert!(r.chi_square_p > 0.01, "{}", r.chi_square_p);
        assert!((r.histogram.inside_fraction - r.uniform_inside).abs() < 4.0 * r.uniform_sigma);
        assert_eq!(r.histogram.mode, "secure");
    }

    #[test]
    fn bert_block_plan_has_five_blocks_with_node_names() {
        let r = fusion_plan(&GraphSource::BertBlock(BlockDims { m: 16, d: 32, heads: 4 }), 8192).unwrap();
        assert_eq!(r.blocks.len(), 5);
        assert!(r.blocks.iter().all(|b| b.depth <= b.preset_depth && b.est_bytes > 0));
        assert!(r.mpc_nodes.iter().any(|n| n.op == OpKind::Rsqrt));
        assert!(r.estimate.total_bytes < r.unfused_estimate.total_bytes);
    }

    #[test]
    fn plain_bench_matches_prediction() {
        let a = BenchArgs {
            dims: Dims { l: 8, d: 4, heads: 2 },
            poly_n: 4096,
            protocol: Protocol::Cc,
            scale_bits: 38,
            engine: EngineKind::Plain,
            seed: 3,
        };
        let r = bench_matmul(&a).unwrap();
        assert!(r.counts_match, "{:?} vs {:?}", r.predicted, r.measured);
        assert!(r.max_abs_error < 1e-9);
    }
}
