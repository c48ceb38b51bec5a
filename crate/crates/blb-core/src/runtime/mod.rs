//! Two-party execution of a fusion plan: fused blocks under HE, nonlinear
//! layers on shares, conversions at every boundary, and the traffic and
//! accuracy report of a run.

mod engine;
mod exec;
mod reference;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use engine::{Ct, Engine, HeEngine, PlainEngine};
pub use exec::{execute, Execution};
pub use reference::{eval_graph, eval_node};

use crate::bridge::BridgeConfig;
use crate::fuser::{
    decompose_block_with, gelu_graph, layernorm_graph, operand_names, plan_blocks, softmax_graph, unfused_plan,
    compare_estimates, Approx, BlockDims, CostConfig, FusionPlan, Graph, OpKind, Operand, PlanComparison, Shape,
};
use crate::matrix::Matrix;
use crate::mpc::{reveal, Modulus, Mpc, Shared};
use crate::ring_ckks::{desk_presets, HePreset};
use crate::rng::SeedTree;
use crate::{Error, Result};

/// Quartic `a t⁴ + b t³ + c t² + d t + e` for `t(Φ(t) − ½)` on `[0, cutoff)`,
/// so that `GeLU(x) ≈ x/2 + E(|x|)` there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeluCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl GeluCoeffs {
    /// Least-squares fit on 10⁴ evenly spaced points of `[0, 2.7]`.
    pub const FIT: GeluCoeffs = GeluCoeffs {
        a: 0.02345289918560576,
        b: -0.19811815979193115,
        c: 0.5674866337440444,
        d: -0.054843074153695215,
        e: 0.004238235109929734,
    };

    pub fn even_part(&self, t: f64) -> f64 {
        (((self.a * t + self.b) * t + self.c) * t + self.d) * t + self.e
    }

    /// The piecewise approximation the decomposed graph computes.
    pub fn gelu(&self, x: f64, cutoff: f64) -> f64 {
        if x >= cutoff {
            x
        } else if x < -cutoff {
            0.0
        } else {
            0.5 * x + self.even_part(libm::fabs(x))
        }
    }

    /// Values of the graph's `gelu_*` scalars.
    pub fn params(&self) -> [(&'static str, f64); 6] {
        [
            ("gelu_a", self.a),
            ("gelu_b", self.b),
            ("gelu_c", self.c),
            ("gelu_pos", 0.5 + self.d),
            ("gelu_neg", 0.5 - self.d),
            ("gelu_e", self.e),
        ]
    }
}

impl Default for GeluCoeffs {
    fn default() -> Self {
        GeluCoeffs::FIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    /// Squarings in `exp(x) ≈ (1 + x/2^t)^(2^t)`.
    pub t: u32,
    /// Shifted scores below this give zero.
    pub t_exp: f64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig { t: 6, t_exp: -13.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub m: usize,
    pub d: usize,
    pub heads: usize,
    /// Share ring `Z_{2^l}`.
    pub ring_bits: u32,
    /// Fixed-point fraction bits of shares.
    pub frac_bits: u32,
    pub presets: Vec<HePreset>,
    pub gelu: GeluCoeffs,
    pub gelu_cutoff: f64,
    pub softmax: SoftmaxConfig,
    pub noise_stddev: f64,
    pub seed: u64,
}

impl BlockConfig {
    /// Desk presets at ring degree `n` with a 40-bit scale.
    pub fn desk(m: usize, d: usize, heads: usize, n: usize) -> Self {
        BlockConfig {
            m,
            d,
            heads,
            ring_bits: 43,
            frac_bits: 13,
            presets: desk_presets(n, 40),
            gelu: GeluCoeffs::FIT,
            gelu_cutoff: 2.7,
            softmax: SoftmaxConfig::default(),
            noise_stddev: 3.2,
            seed: 0,
        }
    }

    pub fn dims(&self) -> BlockDims {
        BlockDims { m: self.m, d: self.d, heads: self.heads }
    }

    pub fn approx(&self) -> Approx {
        Approx { exp_squarings: self.softmax.t, exp_clip: self.softmax.t_exp, gelu_cutoff: self.gelu_cutoff }
    }

    /// Added to the variance before `rsqrt`.
    pub fn eps(&self) -> f64 {
        libm::exp2(1.0 - self.frac_bits as f64)
    }

    pub fn modulus(&self) -> Result<Modulus> {
        Modulus::ring(self.ring_bits)
    }

    pub fn bridge(&self, frac_bits: u32) -> BridgeConfig {
        BridgeConfig { ring_bits: self.ring_bits, frac_bits }
    }

    pub fn graph(&self) -> Result<Graph> {
        decompose_block_with(self.dims(), &self.approx())
    }

    pub fn cost_config(&self) -> CostConfig {
        CostConfig { ring_bits: self.ring_bits, frac_bits: self.frac_bits, ..CostConfig::new(self.presets.clone()) }
    }

    pub fn slots(&self) -> usize {
        self.presets.first().map_or(0, |p| p.n / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Param(format!("block {}x{} with {} heads", self.m, self.d, self.heads)));
        }
        if self.presets.is_empty() || self.presets.iter().any(|p| p.n != self.presets[0].n) {
            return Err(Error::Param("presets must share one ring degree".into()));
        }
        if self.frac_bits * 2 + 3 > self.ring_bits || self.ring_bits > 64 {
            return Err(Error::Param(format!("l = {} cannot hold products at s = {}", self.ring_bits, self.frac_bits)));
        }
        Ok(())
    }
}

/// Plaintext weights and public scalars, by the names a graph uses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Weights {
    pub mats: BTreeMap<String, Matrix>,
    pub params: BTreeMap<String, f64>,
}

const MAGIC: &[u8; 4] = b"BLBW";

impl Weights {
    /// Gaussian weights for every operand of `g`: projections `N(0, 1/fan_in)`,
    /// multiplicative vectors `1 + N(0, 0.01)`, additive ones `N(0, 0.01)`.
    pub fn random<R: Rng>(g: &Graph, gelu: &GeluCoeffs, rng: &mut R) -> Result<Self> {
        let mut w = Weights::zeros(g, gelu)?;
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        for (name, m) in w.mats.iter_mut() {
            let (scale, offset) = match kind_of(g, name) {
                Some(OpKind::MatmulCp) => (1.0 / libm::sqrt(m.rows as f64), 0.0),
                Some(OpKind::EwmulCp | OpKind::SmulCp) => (0.1, 1.0),
                _ => (0.1, 0.0),
            };
            for v in m.data.iter_mut() {
                *v = offset + scale * unit.sample(rng);
            }
        }
        Ok(w)
    }

    /// Zero matrices of the right shapes and the GeLU scalars.
    pub fn zeros(g: &Graph, gelu: &GeluCoeffs) -> Result<Self> {
        let mut w = Weights::default();
        for (name, is_weight) in operand_names(g) {
            if is_weight {
                let (r, c) = weight_shape(g, &name)?;
                w.mats.insert(name, Matrix::zeros(r, c));
            }
        }
        w.set_gelu(gelu);
        Ok(w)
    }

    pub fn set_gelu(&mut self, gelu: &GeluCoeffs) {
        for (k, v) in gelu.params() {
            self.params.insert(k.to_string(), v);
        }
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params.get(name).copied().ok_or_else(|| Error::Param(format!("no value for scalar `{name}`")))
    }

    pub fn mat(&self, name: &str) -> Result<&Matrix> {
        self.mats.get(name).ok_or_else(|| Error::Param(format!("no weight `{name}`")))
    }

    /// The plaintext side of a node spread over `shape`.
    pub fn operand(&self, op: &Operand, shape: Shape) -> Result<Matrix> {
        let fill = |c: f64| Matrix::from_fn(shape.rows, shape.cols, |_, _| c);
        match op {
            Operand::Const(c) => Ok(fill(*c)),
            Operand::Param(p) => Ok(fill(self.param(p)?)),
            Operand::Weight(name) => {
                let m = self.mat(name)?;
                if m.cols != shape.cols || (m.rows != 1 && m.rows != shape.rows) {
                    return Err(Error::Shape(format!("weight `{name}` is {}x{}, node is {}x{}", m.rows, m.cols, shape.rows, shape.cols)));
                }
                Ok(Matrix::from_fn(shape.rows, shape.cols, |i, j| m.get(if m.rows == 1 { 0 } else { i }, j)))
            }
            Operand::None => Err(Error::Graph("node has no plaintext operand".into())),
        }
    }

    /// Flat little-endian form: `BLBW`, a count, then per matrix its name
    /// length, name, rows, cols (all `u32`) and `f64` entries row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend((self.mats.len() as u32).to_le_bytes());
        for (name, m) in &self.mats {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((m.rows as u32).to_le_bytes());
            out.extend((m.cols as u32).to_le_bytes());
            for v in &m.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    /// Matrices from [`Weights::to_bytes`]; scalars are left empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Param("not a weight file".into()));
        }
        let mut w = Weights::default();
        for _ in 0..r.u32()? {
            let len = r.u32()? as usize;
            let name = core::str::from_utf8(r.take(len)?).map_err(|_| Error::Param("weight name is not UTF-8".into()))?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            w.mats.insert(name.to_string(), Matrix::from_vec(rows, cols, data)?);
        }
        if r.at != bytes.len() {
            return Err(Error::Param(format!("{} trailing bytes in weight file", bytes.len() - r.at)));
        }
        Ok(w)
    }

    /// Check every operand of `g` is present with a usable shape.
    pub fn check(&self, g: &Graph) -> Result<()> {
        for (name, is_weight) in operand_names(g) {
            if !is_weight {
                self.param(&name)?;
                continue;
            }
            let (r, c) = weight_shape(g, &name)?;
            let m = self.mat(&name)?;
            let ok = m.cols == c && (m.rows == r || (r == 1 && m.rows == g.inputs.first().map_or(1, |i| i.1.rows)));
            if !ok {
                return Err(Error::Shape(format!("weight `{name}` is {}x{}, expected {r}x{c}", m.rows, m.cols)));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Param("weight file is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn kind_of(g: &Graph, name: &str) -> Option<OpKind> {
    g.nodes.iter().find(|n| matches!(&n.operand, Operand::Weight(w) if w == name)).map(|n| n.op)
}

/// Projections are `in × out`; everything else is one row over the node's columns.
fn weight_shape(g: &Graph, name: &str) -> Result<(usize, usize)> {
    let n = g
        .nodes
        .iter()
        .find(|n| matches!(&n.operand, Operand::Weight(w) if w == name))
        .ok_or_else(|| Error::Param(format!("graph has no weight `{name}`")))?;
    Ok(match n.op {
        OpKind::MatmulCp => (g.shape(n.inputs[0]).cols, n.shape.cols),
        _ => (1, n.shape.cols),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: &'static str,
    pub bandwidth_bps: f64,
    pub rtt_s: f64,
}

impl Network {
    pub fn latency(&self, bytes: u64, rounds: u64) -> f64 {
        8.0 * bytes as f64 / self.bandwidth_bps + rounds as f64 * self.rtt_s
    }
}

pub const NETWORKS: [Network; 4] = [
    Network { name: "lan", bandwidth_bps: 1e9, rtt_s: 0.3e-3 },
    Network { name: "wan1", bandwidth_bps: 400e6, rtt_s: 4e-3 },
    Network { name: "wan2", bandwidth_bps: 100e6, rtt_s: 4e-3 },
    Network { name: "wan3", bandwidth_bps: 100e6, rtt_s: 80e-3 },
];

/// Estimated wall time in seconds on each network preset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub lan: f64,
    pub wan1: f64,
    pub wan2: f64,
    pub wan3: f64,
}

impl Latency {
    pub fn of(bytes: u64, rounds: u64) -> Self {
        Self::on(&NETWORKS, bytes, rounds)
    }

    pub fn on(nets: &[Network; 4], bytes: u64, rounds: u64) -> Self {
        let t = nets.map(|n| n.latency(bytes, rounds));
        Latency { lan: t[0], wan1: t[1], wan2: t[2], wan3: t[3] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub preset: String,
    pub rotations: u64,
    pub mults: u64,
    pub ct_ct_mults: u64,
    pub ct_pt_mults: u64,
    /// Conversions in both directions, plus their truncations if any.
    pub bytes: u64,
    pub rounds: u64,
    pub to_he: u64,
    pub to_mpc: u64,
    /// Converted outputs against a float evaluation of the block on its
    /// own (revealed) inputs.
    pub mse: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub bytes: u64,
    pub rounds: u64,
    pub rotations: u64,
    pub mults: u64,
    pub conversions_to_he: u64,
    pub conversions_to_mpc: u64,
    pub truncations: u64,
    /// Bytes and rounds of nonlinear layers and additions on shares.
    pub mpc_bytes: u64,
    pub mpc_rounds: u64,
    /// Against the float reference of the whole graph.
    pub output_mse: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub plan: String,
    pub engine: String,
    pub blocks: Vec<BlockReport>,
    pub totals: Totals,
    pub est_latency: Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub fused: RunReport,
    pub unfused: RunReport,
    /// Fused bytes over unfused bytes, as measured.
    pub byte_ratio: f64,
    /// Conversion bytes saved by fusion, as a fraction of the unfused ones.
    pub conversion_reduction: f64,
    pub max_output_diff: f64,
    /// What the planner's cost model predicted for the same pair.
    pub estimate: PlanComparison,
}

/// A two-party session bound to one configuration.
pub struct Session<E: Engine> {
    pub cfg: BlockConfig,
    pub mpc: Mpc,
    pub engine: E,
    seeds: SeedTree,
}

impl Session<PlainEngine> {
    /// Slot arithmetic in the clear, with conversions booked on the channel.
    pub fn plain(cfg: BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let engine = PlainEngine::new(cfg.presets.clone(), &seeds.child("engine"));
        Ok(Session { mpc: Mpc::new(&seeds.child("mpc")), engine, seeds, cfg })
    }
}

impl Session<HeEngine> {
    /// Real CKKS for every fused block.
    pub fn he(cfg: BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let engine = HeEngine::new(cfg.presets.clone(), cfg.noise_stddev, &seeds.child("engine"))?;
        Ok(Session { mpc: Mpc::new(&seeds.child("mpc")), engine, seeds, cfg })
    }
}

impl<E: Engine> Session<E> {
    /// Client input, shared by party 0.
    pub fn share_input(&mut self, x: &Matrix) -> Result<Shared> {
        let m = self.cfg.modulus()?;
        self.mpc.input(0, &x.data, m, self.cfg.frac_bits)
    }

    pub fn weights<R: Rng>(&self, g: &Graph, rng: &mut R) -> Result<Weights> {
        Weights::random(g, &self.cfg.gelu, rng)
    }

    /// Execute `plan`, generating any rotation keys it needs first.
    pub fn run(&mut self, g: &Graph, plan: &FusionPlan, w: &Weights, inputs: &[Shared]) -> Result<Execution> {
        if self.engine.needs_keys() {
            let steps = self.discover_steps(g, plan, w, inputs)?;
            self.engine.prepare(&steps)?;
        }
        execute(&mut self.mpc, &mut self.engine, &self.cfg, g, plan, w, inputs)
    }

    /// Rotation amounts per preset, from a dry run on zero inputs.
    fn discover_steps(&self, g: &Graph, plan: &FusionPlan, w: &Weights, inputs: &[Shared]) -> Result<Vec<alloc::collections::BTreeSet<i64>>> {
        let dry_seeds = self.seeds.child("dry-run");
        let mut mpc = Mpc::new(&dry_seeds);
        mpc.test_mode = false;
        let mut plain = PlainEngine::new(self.cfg.presets.clone(), &dry_seeds);
        let zeros: Vec<Shared> = inputs
            .iter()
            .map(|x| mpc.constant_int(&vec![0; x.0.len()], x.0.modulus, x.0.scale))
            .collect();
        execute(&mut mpc, &mut plain, &self.cfg, g, plan, w, &zeros).map_err(|e| e.context("rotation-key dry run"))?;
        Ok(plain.steps())
    }

    fn run_single(&mut self, g: &Graph, w: &Weights, x: &Shared) -> Result<Shared> {
        let plan = plan_blocks(g, &self.cfg.presets)?;
        let mut out = self.run(g, &plan, w, core::slice::from_ref(x))?;
        Ok(out.outputs.remove(0))
    }

    /// LayerNorm over the rows of `x` (`rows × d`).
    pub fn eval_layernorm(&mut self, x: &Shared, rows: usize, d: usize, gamma: &[f64], beta: &[f64]) -> Result<Shared> {
        let g = layernorm_graph(rows, d)?;
        if gamma.len() != d || beta.len() != d || x.0.len() != rows * d {
            return Err(Error::Shape(format!("LayerNorm of {} values over {rows}x{d} with {} and {} weights", x.0.len(), gamma.len(), beta.len())));
        }
        let mut w = Weights::default();
        w.mats.insert("ln_gamma".into(), Matrix::from_vec(1, d, gamma.to_vec())?);
        w.mats.insert("ln_beta".into(), Matrix::from_vec(1, d, beta.to_vec())?);
        self.run_single(&g, &w, x)
    }

    pub fn eval_gelu(&mut self, x: &Shared, shape: Shape) -> Result<Shared> {
        let g = gelu_graph(shape, &self.cfg.approx())?;
        let mut w = Weights::default();
        w.set_gelu(&self.cfg.gelu);
        self.run_single(&g, &w, x)
    }

    /// Softmax over each row of each head.
    pub fn eval_softmax(&mut self, x: &Shared, shape: Shape) -> Result<Shared> {
        let g = softmax_graph(shape, &self.cfg.approx())?;
        self.run_single(&g, &Weights::default(), x)
    }

    /// One encoder layer under the fused plan.
    pub fn run_block(&mut self, x: &Matrix, w: &Weights) -> Result<(Shared, RunReport)> {
        self.run_block_with(x, w, true)
    }

    pub fn run_block_with(&mut self, x: &Matrix, w: &Weights, fused: bool) -> Result<(Shared, RunReport)> {
        let g = self.cfg.graph()?;
        let plan = if fused { plan_blocks(&g, &self.cfg.presets)? } else { unfused_plan(&g, &self.cfg.presets)? };
        if x.rows != self.cfg.m || x.cols != self.cfg.d {
            return Err(Error::Shape(format!("input is {}x{}, block takes {}x{}", x.rows, x.cols, self.cfg.m, self.cfg.d)));
        }
        w.check(&g)?;
        let input = self.share_input(x)?;
        let mut ex = self.run(&g, &plan, w, core::slice::from_ref(&input))?;
        let out = ex.outputs.remove(0);
        let want = eval_graph(&g, w, core::slice::from_ref(x), self.cfg.eps())?;
        let want = &want[&g.outputs[0]];
        let got = reveal(&out)?;
        let (mse, max) = errors(&got, &want.data);
        let mut report = ex.report(if fused { "fused" } else { "unfused" }, self.engine.name());
        report.totals.output_mse = mse;
        report.totals.max_abs_error = max;
        Ok((out, report))
    }

    /// The same layer under the fused and the per-operator plan.
    pub fn compare_plans(&mut self, x: &Matrix, w: &Weights) -> Result<CompareReport> {
        let (a, fused) = self.run_block_with(x, w, true)?;
        let (b, unfused) = self.run_block_with(x, w, false)?;
        let (a, b) = (reveal(&a)?, reveal(&b)?);
        let max_output_diff = a.iter().zip(&b).map(|(p, q)| libm::fabs(p - q)).fold(0.0, f64::max);
        let conv = |r: &RunReport| r.blocks.iter().map(|b| b.bytes).sum::<u64>() as f64;
        Ok(CompareReport {
            byte_ratio: fused.totals.bytes as f64 / unfused.totals.bytes as f64,
            conversion_reduction: 1.0 - conv(&fused) / conv(&unfused),
            max_output_diff,
            estimate: compare_estimates(&self.cfg.graph()?, &self.cfg.cost_config())?,
            fused,
            unfused,
        })
    }
}

/// Mean squared and largest absolute difference.
pub fn errors(got: &[f64], want: &[f64]) -> (f64, f64) {
    let n = got.len().max(1) as f64;
    let mut sq = 0.0;
    let mut max: f64 = 0.0;
    for (a, b) in got.iter().zip(want) {
        let d = a - b;
        sq += d * d;
        max = max.max(libm::fabs(d));
    }
    (sq / n, max)
}
