use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::engine::{Ct, Engine};
use super::reference::eval_node;
use super::{errors, BlockConfig, BlockReport, Latency, RunReport, Totals, Weights};
use crate::fuser::{Category, Direction, FusionPlan, Graph, OpKind, Operand, Placement, Shape, Value};
use crate::matmul::{
    cc_layouts, collapse_padding, matmul_cc, matmul_cp_diagonal, matmul_cp_spatial, BsgsPlan, BsgsTarget, Dims,
    MatmulPlan, Protocol,
};
use crate::matrix::Matrix;
use crate::mpc::{
    add_public_int, add_shared, mul_public_int, not, reveal, to_fixed, xor, ChannelStats, Mpc, ShareVec,
    Shared,
};
use crate::packing::{
    add_plain, ew_add, ew_mul, ew_sub, mul_const, mul_plain, reduce_sum, Layout, LayoutKind, PackedTensor, SlotBackend,
};
use crate::ring_ckks::OpCounters;
use crate::{Error, Result};

/// Outputs and measurements of one plan execution.
#[derive(Debug, Clone)]
pub struct Execution {
    pub outputs: Vec<Shared>,
    pub blocks: Vec<BlockReport>,
    /// Everything on the channel during the run.
    pub traffic: ChannelStats,
    pub mpc_bytes: u64,
    pub mpc_rounds: u64,
    pub truncations: u64,
    pub he: OpCounters,
}

impl Execution {
    pub fn report(&self, plan: &str, engine: &str) -> RunReport {
        let bytes = self.traffic.total_bytes();
        let totals = Totals {
            bytes,
            rounds: self.traffic.rounds,
            rotations: self.he.rotations,
            mults: self.he.ct_ct_mults + self.he.ct_pt_mults,
            conversions_to_he: self.blocks.iter().map(|b| b.to_he).sum(),
            conversions_to_mpc: self.blocks.iter().map(|b| b.to_mpc).sum(),
            truncations: self.truncations,
            mpc_bytes: self.mpc_bytes,
            mpc_rounds: self.mpc_rounds,
            output_mse: 0.0,
            max_abs_error: 0.0,
        };
        RunReport {
            plan: plan.to_string(),
            engine: engine.to_string(),
            blocks: self.blocks.clone(),
            est_latency: Latency::of(bytes, self.traffic.rounds),
            totals,
        }
    }
}

/// A value inside a block. With `pad = Some(p)` each head's columns are
/// zero-padded to `p` in the packed matrix.
struct HeVal<C> {
    t: PackedTensor<C>,
    pad: Option<usize>,
}

impl<C: Clone> Clone for HeVal<C> {
    fn clone(&self) -> Self {
        HeVal { t: self.t.clone(), pad: self.pad }
    }
}

/// How a logical value fills the matrix a layout packs.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Remap {
    Plain,
    Transpose,
    /// Head `h` of the columns moves to `h·pad`, zeros after.
    PadCols(usize),
    /// `(h·inner + k, c)` holds `(k, h·w + c)` for `c < w`: a per-head
    /// right operand stacked by head with its columns padded.
    StackHeads { inner: usize },
}

fn natural(s: Shape, slots: usize) -> Result<Layout> {
    let lanes = s.rows.next_power_of_two();
    if s.heads > 1 {
        Layout::multi_head_spatial(s.rows, s.cols, s.heads, lanes, s.head_width().next_power_of_two(), slots)
    } else {
        Layout::spatial(s.rows, s.cols, lanes, slots)
    }
}

/// Layout of a per-row (per-head) scalar that broadcasts against `t`.
fn scalar_layout(t: &Layout) -> Result<Layout> {
    if t.heads > 1 {
        Layout::new(LayoutKind::MultiHeadSpatialFirst, t.rows, t.heads, t.heads, t.lanes, 1, t.slots)
    } else {
        Layout::broadcast(t.rows, t.lanes, t.slots)
    }
}

/// Packed column of logical column `j` under per-head padding.
fn packed_col(s: Shape, pad: Option<usize>, j: usize) -> usize {
    match pad {
        Some(p) => (j / s.head_width()) * p + j % s.head_width(),
        None => j,
    }
}

fn gather(x: &Shared, idx: &[Option<usize>]) -> Shared {
    let pick = |s: &ShareVec| s.with_values(idx.iter().map(|i| i.map_or(0, |i| s.values[i])).collect());
    (pick(&x.0), pick(&x.1))
}

fn concat(parts: &[Shared]) -> Shared {
    let join = |f: fn(&Shared) -> &ShareVec| {
        let first = f(&parts[0]);
        first.with_values(parts.iter().flat_map(|p| f(p).values.iter().copied()).collect())
    };
    (join(|p| &p.0), join(|p| &p.1))
}

fn select(x: &Shared, idx: &[usize]) -> Shared {
    (x.0.select(idx), x.1.select(idx))
}

struct Exec<'a, E: Engine> {
    mpc: &'a mut Mpc,
    engine: &'a mut E,
    cfg: &'a BlockConfig,
    g: &'a Graph,
    plan: &'a FusionPlan,
    w: &'a Weights,
    /// Preset index of each block.
    presets: Vec<usize>,
    shares: BTreeMap<Value, Shared>,
    vals: BTreeMap<usize, HeVal<Ct<E>>>,
    entries: Vec<(usize, Value, Layout, Remap, HeVal<Ct<E>>)>,
    /// Revealed inputs and outputs of each block, for its error report.
    seen: Vec<BTreeMap<Value, Matrix>>,
    exits: Vec<Vec<(usize, Vec<f64>)>>,
    reports: Vec<BlockReport>,
    mpc_traffic: (u64, u64),
    he: OpCounters,
}

/// Run `plan` over `g` on shared inputs.
pub fn execute<E: Engine>(
    mpc: &mut Mpc,
    engine: &mut E,
    cfg: &BlockConfig,
    g: &Graph,
    plan: &FusionPlan,
    w: &Weights,
    inputs: &[Shared],
) -> Result<Execution> {
    if inputs.len() != g.inputs.len() {
        return Err(Error::Graph(format!("{} inputs for a graph taking {}", inputs.len(), g.inputs.len())));
    }
    let mut presets = Vec::with_capacity(plan.blocks.len());
    for b in &plan.blocks {
        let p = engine.presets().iter().position(|p| p.name == b.preset);
        presets.push(p.ok_or_else(|| Error::Planning(format!("{} uses unknown preset {}", b.name, b.preset)))?);
    }
    let mut shares = BTreeMap::new();
    for (k, x) in inputs.iter().enumerate() {
        if x.0.len() != g.inputs[k].1.len() {
            return Err(Error::Shape(format!("input `{}` has {} values, expected {}", g.inputs[k].0, x.0.len(), g.inputs[k].1.len())));
        }
        shares.insert(Value::Input(k), x.clone());
    }
    let nb = plan.blocks.len();
    let reports = plan
        .blocks
        .iter()
        .map(|b| BlockReport { name: b.name.clone(), preset: b.preset.clone(), ..Default::default() })
        .collect();
    let start = mpc.channel.stats();
    let trunc0 = mpc.dealer.calls("trunc");
    let mut ex = Exec {
        mpc,
        engine,
        cfg,
        g,
        plan,
        w,
        presets,
        shares,
        vals: BTreeMap::new(),
        entries: Vec::new(),
        seen: vec![BTreeMap::new(); nb],
        exits: vec![Vec::new(); nb],
        reports,
        mpc_traffic: (0, 0),
        he: OpCounters::default(),
    };
    for i in 0..g.nodes.len() {
        let n = &g.nodes[i];
        let ctx = |e: Error| e.context(format!("`{}` ({})", n.name, n.op));
        match plan.placement[i] {
            Placement::Mpc => {
                let before = ex.mpc.channel.stats();
                let out = ex.mpc_node(i).map_err(ctx)?;
                let d = ex.mpc.channel.since(&before);
                ex.mpc_traffic.0 += d.total_bytes();
                ex.mpc_traffic.1 += d.rounds;
                ex.shares.insert(Value::Node(i), out);
            }
            Placement::Block(b) => {
                let name = &plan.blocks[b].name;
                let ctx = |e: Error| ctx(e).context(name.clone());
                let before = ex.mpc.channel.stats();
                let ops = ex.engine.backend(ex.presets[b]).counters();
                let v = ex.he_node(i, b).map_err(ctx)?;
                ex.vals.insert(i, v);
                ex.exit(i, b).map_err(ctx)?;
                let d = ex.mpc.channel.since(&before);
                let ops = ex.engine.backend(ex.presets[b]).counters().since(&ops);
                let r = &mut ex.reports[b];
                r.bytes += d.total_bytes();
                r.rounds += d.rounds;
                r.rotations += ops.rotations;
                r.ct_ct_mults += ops.ct_ct_mults;
                r.ct_pt_mults += ops.ct_pt_mults;
                r.mults = r.ct_ct_mults + r.ct_pt_mults;
                ex.he.merge(&ops);
            }
        }
    }
    ex.block_errors()?;
    let outputs = g
        .outputs
        .iter()
        .map(|v| ex.shares.get(v).cloned().ok_or_else(|| Error::Graph(format!("output `{}` never reached the shares", g.value_name(*v)))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Execution {
        outputs,
        blocks: ex.reports,
        traffic: ex.mpc.channel.since(&start),
        mpc_bytes: ex.mpc_traffic.0,
        mpc_rounds: ex.mpc_traffic.1,
        truncations: ex.mpc.dealer.calls("trunc") - trunc0,
        he: ex.he,
    })
}

impl<E: Engine> Exec<'_, E> {
    fn share(&self, v: Value) -> Result<&Shared> {
        self.shares.get(&v).ok_or_else(|| Error::Graph(format!("`{}` is not available on shares", self.g.value_name(v))))
    }

    fn local(&self, v: Value, b: usize) -> Option<&HeVal<Ct<E>>> {
        match v {
            Value::Node(j) if self.plan.placement[j] == Placement::Block(b) => self.vals.get(&j),
            _ => None,
        }
    }

    fn slots(&mut self, b: usize) -> usize {
        self.engine.backend(self.presets[b]).slots()
    }

    // ---- shares ----

    fn mpc_node(&mut self, i: usize) -> Result<Shared> {
        let g = self.g;
        let n = &g.nodes[i];
        let s = self.cfg.frac_bits;
        let x = self.share(n.inputs[0])?.clone();
        let len = x.0.len();
        match n.op {
            OpKind::EwaddCc | OpKind::SaddCc => {
                let c = n.constant().unwrap_or(1.0);
                if c != libm::rint(c) {
                    return Err(Error::Domain(format!("coefficient {c} of an addition on shares must be an integer")));
                }
                let mut y = self.share(n.inputs[1])?.clone();
                if n.op == OpKind::SaddCc {
                    y = expand(&y, g.shape(n.inputs[0]));
                }
                let y = (mul_public_int(&y.0, c as i128), mul_public_int(&y.1, c as i128));
                add_shared(&x, &y)
            }
            OpKind::EwaddCp | OpKind::SaddCp => {
                let m = self.w.operand(&n.operand, n.shape)?;
                let c: Vec<i128> = m.data.iter().map(|&v| to_fixed(v, s)).collect();
                Ok((add_public_int(&x.0, &c), add_public_int(&x.1, &c)))
            }
            OpKind::Sum => {
                let sh = g.shape(n.inputs[0]);
                let w = sh.head_width();
                let mut acc: Option<Shared> = None;
                for c in 0..w {
                    let idx: Vec<usize> =
                        (0..sh.rows).flat_map(|r| (0..sh.heads).map(move |h| r * sh.cols + h * w + c)).collect();
                    let part = select(&x, &idx);
                    acc = Some(match acc {
                        Some(a) => add_shared(&a, &part)?,
                        None => part,
                    });
                }
                acc.ok_or_else(|| Error::Shape("sum over zero columns".into()))
            }
            OpKind::Cmp if n.row_max => self.row_max(&x, g.shape(n.inputs[0])),
            OpKind::Cmp => {
                let y = match n.inputs.get(1) {
                    Some(&v) => self.share(v)?.clone(),
                    None => {
                        let c = n.constant().ok_or_else(|| Error::Graph("comparison without a threshold".into()))?;
                        self.mpc.constant(&vec![c; len], x.0.modulus, x.0.scale)
                    }
                };
                self.mpc.cmp(&x, &y)
            }
            OpKind::Mux => {
                let mut sel = self.share(n.inputs[1])?.clone();
                for &v in &n.inputs[2..] {
                    sel = xor(&sel, self.share(v)?)?;
                }
                if n.constant().is_some_and(|c| c != 0.0) {
                    sel = not(&sel);
                }
                self.mpc.mux(&sel, &x)
            }
            OpKind::Rec => self.mpc.rec(&x),
            OpKind::Rsqrt => {
                let e = vec![to_fixed(self.cfg.eps(), s); len];
                self.mpc.rsqrt(&(add_public_int(&x.0, &e), add_public_int(&x.1, &e)))
            }
            op => Err(Error::Planning(format!("{op} multiplies and must run in a fused block"))),
        }
    }

    /// Per-head row maxima by a balanced tree of `max` calls, one level at a time.
    fn row_max(&mut self, x: &Shared, s: Shape) -> Result<Shared> {
        let w = s.head_width();
        let groups = s.rows * s.heads;
        let idx: Vec<usize> =
            (0..s.rows).flat_map(|r| (0..s.heads).flat_map(move |h| (0..w).map(move |c| r * s.cols + h * w + c))).collect();
        let mut cur = select(x, &idx);
        let mut width = w;
        while width > 1 {
            let half = width / 2;
            let lo: Vec<usize> = (0..groups).flat_map(|g| (0..half).map(move |k| g * width + k)).collect();
            let hi: Vec<usize> = (0..groups).flat_map(|g| (0..half).map(move |k| g * width + half + k)).collect();
            let m = self.mpc.max(&select(&cur, &lo), &select(&cur, &hi))?;
            let next = half + width % 2;
            if width % 2 == 0 {
                cur = m;
            } else {
                let both = concat(&[m, cur.clone()]);
                let tail = groups * half;
                let idx: Vec<usize> = (0..groups)
                    .flat_map(|g| (0..next).map(move |k| if k < half { g * half + k } else { tail + g * width + width - 1 }))
                    .collect();
                cur = select(&both, &idx);
            }
            width = next;
        }
        Ok(cur)
    }

    // ---- crossings ----

    fn conversion(&self, v: Value, b: usize, dir: Direction) -> Option<&crate::fuser::Conversion> {
        self.plan.conversions.iter().find(|c| c.value == v && c.block == b && c.direction == dir)
    }

    /// A value entering block `b`, packed as `lay`; cached per packing.
    fn enter(&mut self, b: usize, v: Value, lay: Layout, remap: Remap) -> Result<HeVal<Ct<E>>> {
        if let Some(e) = self.entries.iter().find(|e| e.0 == b && e.1 == v && e.2 == lay && e.3 == remap) {
            return Ok(e.4.clone());
        }
        let name = self.g.value_name(v);
        let level = self
            .conversion(v, b, Direction::ToHe)
            .ok_or_else(|| Error::Planning(format!("no conversion brings `{name}` into block {}", b + 1)))?
            .level;
        let s = self.g.shape(v);
        let x = self.share(v)?.clone();
        self.seen[b].insert(v, Matrix::from_vec(s.rows, s.cols, reveal(&x)?)?);
        let src = |i: usize, j: usize| -> Option<usize> {
            let (r, c) = match remap {
                Remap::Plain => (i, j),
                Remap::Transpose => (j, i),
                Remap::PadCols(p) => {
                    let (h, c) = (j / p, j % p);
                    if c >= s.head_width() {
                        return None;
                    }
                    (i, h * s.head_width() + c)
                }
                Remap::StackHeads { inner } => {
                    let (h, k) = (i / inner, i % inner);
                    if j >= s.head_width() {
                        return None;
                    }
                    (k, h * s.head_width() + j)
                }
            };
            Some(r * s.cols + c)
        };
        let mut idx = vec![vec![None; lay.slots]; lay.num_cts()];
        let per = lay.ct_period();
        for i in 0..lay.rows {
            for j in 0..lay.cols {
                let Some(k) = src(i, j) else { continue };
                let (ct, slot) = lay.locate(i, j);
                let mut at = slot;
                while at < lay.slots {
                    idx[ct][at] = Some(k);
                    at += per;
                }
            }
        }
        let p = self.presets[b];
        let mut cts = Vec::with_capacity(idx.len());
        for m in &idx {
            cts.push(self.engine.to_he(self.mpc, p, &gather(&x, m), level)?);
        }
        self.reports[b].to_he += 1;
        let pad = match remap {
            Remap::PadCols(p) => Some(p),
            _ => None,
        };
        let val = HeVal { t: PackedTensor::new(lay, cts)?, pad };
        self.entries.push((b, v, lay, remap, val.clone()));
        Ok(val)
    }

    /// Input `v` of a node in block `b`, packed as `lay` unless already inside.
    fn get(&mut self, b: usize, v: Value, lay: Layout, pad: Option<usize>) -> Result<HeVal<Ct<E>>> {
        if let Some(h) = self.local(v, b) {
            if h.t.layout != lay || h.pad != pad {
                return Err(Error::Layout(format!("`{}` is packed as {:?}, needed {lay:?}", self.g.value_name(v), h.t.layout)));
            }
            return Ok(h.clone());
        }
        self.enter(b, v, lay, pad.map_or(Remap::Plain, Remap::PadCols))
    }

    /// Layout of the first in-block input, else the natural one of `fallback`.
    fn reference(&mut self, b: usize, inputs: &[Value], fallback: Shape) -> Result<(Layout, Option<usize>)> {
        for &v in inputs {
            if let Some(h) = self.local(v, b) {
                return Ok((h.t.layout, h.pad));
            }
        }
        let slots = self.slots(b);
        Ok((natural(fallback, slots)?, None))
    }

    /// Send node `i`'s value to the shares if anything outside block `b` reads it.
    fn exit(&mut self, i: usize, b: usize) -> Result<()> {
        let Some(conv) = self.conversion(Value::Node(i), b, Direction::ToMpc) else { return Ok(()) };
        let fold = conv.fold;
        let hv = self.vals[&i].clone();
        let s = self.cfg.frac_bits;
        let frac = if self.plan.truncate_outputs { 2 * s } else { s };
        let bridge = self.cfg.bridge(frac);
        let p = self.presets[b];
        let mut parts = Vec::with_capacity(hv.t.cts.len());
        for ct in &hv.t.cts {
            parts.push(self.engine.to_mpc(self.mpc, p, ct, fold, &bridge)?);
        }
        self.reports[b].to_mpc += 1;
        let shape = self.g.nodes[i].shape;
        let lay = hv.t.layout;
        let idx: Vec<usize> = (0..shape.rows)
            .flat_map(|r| (0..shape.cols).map(move |j| (r, j)))
            .map(|(r, j)| {
                let (ct, slot) = lay.locate(r, packed_col(shape, hv.pad, j));
                ct * lay.slots + slot
            })
            .collect();
        let mut x = select(&concat(&parts), &idx);
        if self.plan.truncate_outputs {
            x = self.mpc.trunc_pr(&x, s)?;
        }
        self.exits[b].push((i, reveal(&x)?));
        self.shares.insert(Value::Node(i), x);
        Ok(())
    }

    // ---- fused blocks ----

    fn he_node(&mut self, i: usize, b: usize) -> Result<HeVal<Ct<E>>> {
        let g = self.g;
        let n = &g.nodes[i];
        let p = self.presets[b];
        let s0 = g.shape(n.inputs[0]);
        match n.op {
            OpKind::EwaddCc | OpKind::EwmulCc => {
                let (lay, pad) = self.reference(b, &n.inputs, s0)?;
                let x = self.get(b, n.inputs[0], lay, pad)?;
                let y = self.get(b, n.inputs[1], lay, pad)?;
                let be = self.engine.backend(p);
                let t = match (n.op, n.constant().unwrap_or(1.0)) {
                    (OpKind::EwmulCc, _) => ew_mul(be, &x.t, &y.t)?,
                    (_, c) if c == 1.0 => ew_add(be, &x.t, &y.t)?,
                    (_, c) if c == -1.0 => ew_sub(be, &x.t, &y.t)?,
                    (_, c) => return Err(Error::Planning(format!("coefficient {c} needs a multiplication"))),
                };
                Ok(HeVal { t, pad })
            }
            OpKind::SaddCc | OpKind::SmulCc => {
                let (lay, pad) = self.reference(b, &n.inputs[..1], s0)?;
                let x = self.get(b, n.inputs[0], lay, pad)?;
                let y = match self.local(n.inputs[1], b) {
                    Some(h) => h.clone(),
                    None => self.enter(b, n.inputs[1], scalar_layout(&lay)?, Remap::Plain)?,
                };
                let be = self.engine.backend(p);
                let t = match (n.op, n.constant().unwrap_or(1.0)) {
                    (OpKind::SmulCc, _) => ew_mul(be, &x.t, &y.t)?,
                    (_, c) if c == 1.0 => ew_add(be, &x.t, &y.t)?,
                    (_, c) if c == -1.0 => ew_sub(be, &x.t, &y.t)?,
                    (_, c) => return Err(Error::Planning(format!("coefficient {c} needs a multiplication"))),
                };
                Ok(HeVal { t, pad })
            }
            OpKind::EwaddCp | OpKind::SaddCp | OpKind::EwmulCp | OpKind::SmulCp => {
                let (lay, pad) = self.reference(b, &n.inputs, s0)?;
                let x = self.get(b, n.inputs[0], lay, pad)?;
                let folded = self.plan.blocks[b].folded.contains(&i);
                let packed = |m: &Matrix| -> Matrix {
                    match pad {
                        None => m.clone(),
                        Some(_) => {
                            let mut out = Matrix::zeros(lay.rows, lay.cols);
                            for r in 0..m.rows {
                                for j in 0..m.cols {
                                    out.set(r, packed_col(n.shape, pad, j), m.get(r, j));
                                }
                            }
                            out
                        }
                    }
                };
                let t = match (n.op.is_additive(), &n.operand) {
                    (true, op) => {
                        let m = packed(&self.w.operand(op, n.shape)?);
                        add_plain(self.engine.backend(p), &x.t, &m)?
                    }
                    (false, Operand::Const(_)) if folded => x.t,
                    (false, Operand::Const(c)) => mul_const(self.engine.backend(p), &x.t, *c)?,
                    (false, Operand::Param(name)) => {
                        let c = self.w.param(name)?;
                        mul_const(self.engine.backend(p), &x.t, c)?
                    }
                    (false, op) => {
                        let m = packed(&self.w.operand(op, n.shape)?);
                        mul_plain(self.engine.backend(p), &x.t, &m)?
                    }
                };
                Ok(HeVal { t, pad })
            }
            OpKind::Sum => {
                let (lay, pad) = self.reference(b, &n.inputs, s0)?;
                if pad.is_some() {
                    return Err(Error::Layout("row sums of a padded tensor".into()));
                }
                let x = self.get(b, n.inputs[0], lay, None)?;
                let after_matmul = matches!(n.inputs[0], Value::Node(j)
                    if self.local(Value::Node(j), b).is_some() && g.nodes[j].category() == Category::Transformation);
                let be = self.engine.backend(p);
                let t = if after_matmul {
                    mul_plain(be, &x.t, &Matrix::from_fn(lay.rows, lay.cols, |_, _| 1.0))?
                } else {
                    x.t
                };
                Ok(HeVal { t: reduce_sum(be, &t, true)?, pad: None })
            }
            OpKind::MatmulCp => self.matmul_cp(i, b),
            OpKind::MatmulCc => self.matmul_cc(i, b),
            op => Err(Error::Planning(format!("{op} cannot run under HE"))),
        }
    }

    fn matmul_cp(&mut self, i: usize, b: usize) -> Result<HeVal<Ct<E>>> {
        let g = self.g;
        let n = &g.nodes[i];
        let p = self.presets[b];
        let Operand::Weight(name) = &n.operand else {
            return Err(Error::Graph("matmul_cp without a weight".into()));
        };
        let w = self.w.mat(name)?;
        let reorder = (n.shape.heads > 1).then_some(n.shape.heads);
        let x = match self.local(n.inputs[0], b) {
            Some(h) => h.clone(),
            None => {
                let s = g.shape(n.inputs[0]);
                let lay = Layout::spatial(s.rows, s.cols, s.rows.next_power_of_two(), self.slots(b))?;
                self.enter(b, n.inputs[0], lay, Remap::Plain)?
            }
        };
        let plan = BsgsPlan::square(x.t.layout.groups_per_ct(), BsgsTarget::Cp);
        let be = self.engine.backend(p);
        let t = if x.t.layout.is_diagonal() {
            if reorder.is_some() {
                return Err(Error::Layout("a diagonal input gives a spatial output".into()));
            }
            let w = match x.pad {
                None => w.clone(),
                Some(pw) => {
                    let s = g.shape(n.inputs[0]);
                    let dh = s.head_width();
                    Matrix::from_fn(s.heads * pw, w.cols, |r, c| if r % pw < dh { w.get((r / pw) * dh + r % pw, c) } else { 0.0 })
                }
            };
            matmul_cp_diagonal(be, &x.t, &w, &plan)?
        } else {
            if x.pad.is_some() {
                return Err(Error::Layout("padded spatial input".into()));
            }
            matmul_cp_spatial(be, &x.t, w, reorder, &plan)?
        };
        Ok(HeVal { t, pad: None })
    }

    fn matmul_cc(&mut self, i: usize, b: usize) -> Result<HeVal<Ct<E>>> {
        let g = self.g;
        let n = &g.nodes[i];
        let p = self.presets[b];
        let (av, bv) = (n.inputs[0], n.inputs[1]);
        let sa = g.shape(av);
        let sb = g.shape(bv);
        let l = sa.rows;
        if !l.is_power_of_two() {
            return Err(Error::Shape(format!("sequence length {l} must be a power of two under HE")));
        }
        let slots = self.slots(b);
        let dims = Dims { l, d: sa.cols, heads: sa.heads };
        let (la, lb, _) = cc_layouts(dims, slots)?;
        let a = self.get(b, av, la, None)?;
        let bt = if n.transpose {
            match self.local(bv, b) {
                Some(h) if h.t.layout == la && h.pad.is_none() => HeVal { t: PackedTensor::new(lb, h.t.cts.clone())?, pad: None },
                Some(h) => return Err(Error::Layout(format!("cannot read {:?} as a transposed operand", h.t.layout))),
                None => self.enter(b, bv, lb, Remap::Transpose)?,
            }
        } else {
            if sb.rows != l || sb.head_width() > l {
                return Err(Error::Shape(format!("right operand {}x{} does not fit {l} lanes", sb.rows, sb.cols)));
            }
            if self.local(bv, b).is_some() {
                return Err(Error::Layout("the right operand of an untransposed product must enter from shares".into()));
            }
            self.enter(b, bv, lb, Remap::StackHeads { inner: l })?
        };
        let plan = MatmulPlan::default_for(Protocol::Cc, dims, slots)?;
        let be = self.engine.backend(p);
        let out = matmul_cc(be, &a.t, &bt.t, &plan)?;
        if n.transpose {
            return Ok(HeVal { t: out, pad: None });
        }
        let dh = sb.head_width();
        if dh == l {
            Ok(HeVal { t: out, pad: None })
        } else if 2 * dh == l {
            Ok(HeVal { t: collapse_padding(be, &out, dh)?, pad: None })
        } else {
            Ok(HeVal { t: out, pad: Some(l) })
        }
    }

    // ---- accounting ----

    /// Each block's converted outputs against a float run of the block on
    /// the values that actually entered it.
    fn block_errors(&mut self) -> Result<()> {
        for (b, blk) in self.plan.blocks.iter().enumerate() {
            let mut vals = core::mem::take(&mut self.seen[b]);
            for &i in &blk.nodes {
                let v = eval_node(self.g, i, &vals, self.w, self.cfg.eps())?;
                vals.insert(Value::Node(i), v);
            }
            let (mut got, mut want) = (Vec::new(), Vec::new());
            for (i, x) in &self.exits[b] {
                got.extend_from_slice(x);
                want.extend_from_slice(&vals[&Value::Node(*i)].data);
            }
            let (mse, max) = errors(&got, &want);
            self.reports[b].mse = mse;
            self.reports[b].max_abs_error = max;
        }
        Ok(())
    }
}

/// A per-head scalar spread over the columns of `s`.
fn expand(y: &Shared, s: Shape) -> Shared {
    let w = s.head_width();
    let idx: Vec<usize> = (0..s.rows).flat_map(|r| (0..s.cols).map(move |j| r * s.heads + j / w)).collect();
    select(y, &idx)
}
