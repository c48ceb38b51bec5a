use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Operand, Value};
use super::{fuse_legality, Category, OpKind};
use crate::ring_ckks::HePreset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Mpc,
    /// Index into [`FusionPlan::blocks`].
    Block(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToMpc,
    ToHe,
}

/// One value crossing a block boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub value: Value,
    pub block: usize,
    pub direction: Direction,
    /// `ToHe`: level the value is encrypted at.
    pub level: usize,
    /// `ToMpc`: public factor applied through the decoding scale instead of
    /// a ciphertext multiplication (the node's input ciphertext is converted).
    pub fold: f64,
}

/// Slot order of a value inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Packing {
    Spatial,
    MultiHeadSpatial,
    MultiHeadDiagonal,
    /// A per-row scalar replicated over every column group.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedBlock {
    pub name: String,
    /// Graph order; includes `carried`.
    pub nodes: Vec<usize>,
    /// Trailing nodes of the layer evaluated ahead of this block's own
    /// nodes in the next layer, so the layer output never leaves HE.
    pub carried: Vec<usize>,
    /// Public scalings applied at the exit conversion.
    pub folded: Vec<usize>,
    pub depth: usize,
    pub preset: String,
    pub preset_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSegment {
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Fused(usize),
    Mpc(MpcSegment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub blocks: Vec<FusedBlock>,
    /// Blocks and MPC runs in the order their first node appears.
    pub segments: Vec<Segment>,
    pub placement: Vec<Placement>,
    /// Levels consumed from the block's entry up to each node's output.
    pub depths: Vec<usize>,
    pub packing: Vec<Option<Packing>>,
    pub conversions: Vec<Conversion>,
    /// Every HE output is truncated back to the share scale after conversion.
    pub truncate_outputs: bool,
}

impl FusionPlan {
    pub fn conversions_to_mpc(&self) -> usize {
        self.conversions.iter().filter(|c| c.direction == Direction::ToMpc).count()
    }

    pub fn conversions_to_he(&self) -> usize {
        self.conversions.iter().filter(|c| c.direction == Direction::ToHe).count()
    }

    pub fn block_of(&self, node: usize) -> Option<usize> {
        match self.placement[node] {
            Placement::Block(b) => Some(b),
            Placement::Mpc => None,
        }
    }

    /// Pairwise legality, preset coverage and the absence of nonlinear
    /// nodes inside blocks.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.depth > blk.preset_depth {
                return Err(Error::Planning(format!("{} has depth {} over its preset's {}", blk.name, blk.depth, blk.preset_depth)));
            }
            for &i in &blk.nodes {
                let n = &g.nodes[i];
                if !n.category().is_linear() {
                    return Err(Error::Planning(format!("nonlinear `{}` inside {}", n.name, blk.name)));
                }
                for &v in &n.inputs {
                    if let Value::Node(j) = v {
                        if self.placement[j] == Placement::Block(b)
                            && !fuse_legality(g.nodes[j].category(), n.category())?.is_legal()
                        {
                            return Err(Error::Planning(format!("`{}` → `{}` may not fuse", g.nodes[j].name, n.name)));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

struct State<'g> {
    g: &'g Graph,
    placement: Vec<Option<Placement>>,
    depth: Vec<usize>,
    pending: Vec<bool>,
    /// Entry depth of values that start a block part-way down its chain.
    seeded: Vec<BTreeMap<Value, usize>>,
    allow_fold: bool,
}

impl<'g> State<'g> {
    fn new(g: &'g Graph, allow_fold: bool) -> Self {
        let n = g.nodes.len();
        State { g, placement: vec![None; n], depth: vec![0; n], pending: vec![false; n], seeded: Vec::new(), allow_fold }
    }

    fn in_block(&self, v: Value, b: usize) -> Option<usize> {
        match v {
            Value::Node(j) if self.placement[j] == Some(Placement::Block(b)) => Some(j),
            _ => None,
        }
    }

    fn input_depth(&self, v: Value, b: usize) -> usize {
        match self.in_block(v, b) {
            Some(j) => self.depth[j] + self.pending[j] as usize,
            None => self.seeded[b].get(&v).copied().unwrap_or(0),
        }
    }

    /// Output depth of node `i` placed in block `b`, and whether it is a
    /// public scaling not yet applied.
    fn eval(&self, i: usize, b: usize) -> (usize, bool) {
        let n = &self.g.nodes[i];
        let d: Vec<usize> = n.inputs.iter().map(|&v| self.input_depth(v, b)).collect();
        let max = d.iter().copied().max().unwrap_or(0);
        match n.op {
            OpKind::Sum => {
                let after_matmul = n
                    .inputs
                    .iter()
                    .any(|&v| self.in_block(v, b).is_some_and(|j| self.g.nodes[j].category() == Category::Transformation));
                (max + after_matmul as usize, false)
            }
            op if op.is_additive() => (max, false),
            OpKind::EwmulCp | OpKind::SmulCp => match n.operand {
                Operand::Const(c) if self.allow_fold && c > 0.0 => (max, true),
                _ => (max + 1, false),
            },
            OpKind::MatmulCc => ((d[0] + 3).max(d[1] + 4), false),
            _ => (max + 1, false),
        }
    }

    fn legal_in(&self, i: usize, b: usize) -> Result<bool> {
        let n = &self.g.nodes[i];
        for &v in &n.inputs {
            if let Some(j) = self.in_block(v, b) {
                if !fuse_legality(self.g.nodes[j].category(), n.category())?.is_legal() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    fn mpc_resident(&self, v: Value, cur: Option<usize>) -> bool {
        match v {
            Value::Input(_) => true,
            Value::Node(j) => match self.placement[j] {
                Some(Placement::Block(b)) => Some(b) != cur,
                _ => true,
            },
        }
    }

    fn place(&mut self, i: usize, b: usize) {
        self.placement[i] = Some(Placement::Block(b));
        let (d, p) = self.eval(i, b);
        self.depth[i] = d;
        self.pending[i] = p;
    }

    fn new_block(&mut self, blocks: &mut Vec<Vec<usize>>) -> usize {
        blocks.push(Vec::new());
        self.seeded.push(BTreeMap::new());
        blocks.len() - 1
    }

    fn recompute(&mut self, order: &[usize], b: usize) {
        for &i in order {
            self.place(i, b);
        }
    }
}

fn budget(presets: &[HePreset]) -> Result<usize> {
    presets.iter().map(|p| p.depth).max().ok_or_else(|| Error::Planning("no HE presets".into()))
}

/// Greedy fusion in graph order: linear nodes join the open block while
/// every in-block producer may fuse with them and the chain fits the
/// deepest preset; nonlinear nodes close it. Additions whose inputs already
/// live on the MPC side stay there. When the graph maps one input to one
/// output of the same shape, the linear tail after the last nonlinear node
/// moves to the front of the first block if that block still fits.
pub fn plan_blocks(g: &Graph, presets: &[HePreset]) -> Result<FusionPlan> {
    let max_depth = budget(presets)?;
    let mut st = State::new(g, true);
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut cur: Option<usize> = None;
    for i in 0..g.nodes.len() {
        let n = &g.nodes[i];
        if !n.category().is_linear() {
            st.placement[i] = Some(Placement::Mpc);
            cur = None;
            continue;
        }
        if n.op.is_additive() && n.inputs.iter().all(|&v| st.mpc_resident(v, cur)) {
            st.placement[i] = Some(Placement::Mpc);
            continue;
        }
        if let Some(b) = cur {
            if st.legal_in(i, b)? && st.eval(i, b).0 <= max_depth {
                st.place(i, b);
                blocks[b].push(i);
                continue;
            }
        }
        let b = st.new_block(&mut blocks);
        st.place(i, b);
        if st.depth[i] > max_depth {
            return Err(Error::Planning(format!("`{}` alone needs depth {}", n.name, st.depth[i])));
        }
        blocks[b].push(i);
        cur = Some(b);
    }

    let mut carried = Vec::new();
    if let Some(tail) = wrap_candidate(g, &st, &blocks) {
        if let Some(moved) = try_wrap(g, &mut st, &mut blocks, tail, max_depth)? {
            carried = moved;
        }
    }
    finish(g, st, blocks, carried, presets, false)
}

/// The last block, if it holds the layer output and nothing nonlinear follows its first node.
fn wrap_candidate(g: &Graph, st: &State<'_>, blocks: &[Vec<usize>]) -> Option<usize> {
    if blocks.len() < 2 || g.inputs.len() != 1 || g.outputs.len() != 1 || g.shape(g.outputs[0]) != g.inputs[0].1 {
        return None;
    }
    let tail = blocks.len() - 1;
    let Value::Node(out) = g.outputs[0] else { return None };
    if st.placement[out] != Some(Placement::Block(tail)) {
        return None;
    }
    let first = blocks[tail][0];
    let later_mpc = (first..g.nodes.len()).any(|i| st.placement[i] == Some(Placement::Mpc));
    (!later_mpc).then_some(tail)
}

fn try_wrap(
    g: &Graph,
    st: &mut State<'_>,
    blocks: &mut Vec<Vec<usize>>,
    tail: usize,
    max_depth: usize,
) -> Result<Option<Vec<usize>>> {
    let Value::Node(out) = g.outputs[0] else { return Ok(None) };
    let x = Value::Input(0);
    let out_depth = st.depth[out] + st.pending[out] as usize;
    let head = blocks[0].clone();
    let out_cat = g.nodes[out].category();
    for &i in &head {
        if g.nodes[i].inputs.contains(&x) && !fuse_legality(out_cat, g.nodes[i].category())?.is_legal() {
            return Ok(None);
        }
    }
    let saved = (st.depth.clone(), st.pending.clone(), st.seeded[0].clone());
    st.seeded[0].insert(x, out_depth);
    st.recompute(&head, 0);
    if head.iter().any(|&i| st.depth[i] > max_depth) {
        (st.depth, st.pending, st.seeded[0]) = saved;
        st.recompute(&head, 0);
        return Ok(None);
    }
    let moved = blocks.remove(tail);
    st.seeded.remove(tail);
    for &i in &moved {
        st.placement[i] = Some(Placement::Block(0));
    }
    blocks[0].extend(&moved);
    Ok(Some(moved))
}

/// Every linear node that multiplies runs alone under HE with conversions
/// on both sides; additions and nonlinear nodes run on shares.
pub fn unfused_plan(g: &Graph, presets: &[HePreset]) -> Result<FusionPlan> {
    let max_depth = budget(presets)?;
    let mut st = State::new(g, false);
    let mut blocks = Vec::new();
    for i in 0..g.nodes.len() {
        let op = g.nodes[i].op;
        if !op.category().is_linear() || op.is_additive() {
            st.placement[i] = Some(Placement::Mpc);
            continue;
        }
        let b = st.new_block(&mut blocks);
        st.place(i, b);
        if st.depth[i] > max_depth {
            return Err(Error::Planning(format!("`{}` needs depth {}", g.nodes[i].name, st.depth[i])));
        }
        blocks[b].push(i);
    }
    finish(g, st, blocks, Vec::new(), presets, true)
}

/// Deepest input depth a value entering block `b` may have at consumer `c`.
fn slack(st: &State<'_>, c: usize, v: Value) -> usize {
    let n = &st.g.nodes[c];
    let d = st.depth[c];
    match n.op {
        OpKind::MatmulCc if n.inputs[0] == v => d.saturating_sub(3),
        OpKind::MatmulCc => d.saturating_sub(4),
        _ if st.pending[c] || n.op.is_additive() => d,
        _ => d.saturating_sub(1),
    }
}

fn finish(
    g: &Graph,
    st: State<'_>,
    blocks: Vec<Vec<usize>>,
    carried: Vec<usize>,
    presets: &[HePreset],
    truncate_outputs: bool,
) -> Result<FusionPlan> {
    let placement: Vec<Placement> = st.placement.iter().map(|p| p.unwrap_or(Placement::Mpc)).collect();
    let mut out_blocks = Vec::with_capacity(blocks.len());
    let mut conversions = Vec::new();
    let mut packing = vec![None; g.nodes.len()];
    for (b, mut nodes) in blocks.into_iter().enumerate() {
        nodes.sort_unstable();
        let here = Placement::Block(b);
        let mut folded = Vec::new();
        let mut depth = 0;
        for &i in &nodes {
            depth = depth.max(st.depth[i]);
            let consumers = g.consumers(Value::Node(i));
            let inside = consumers.iter().any(|&c| placement[c] == here);
            if st.pending[i] && !inside {
                folded.push(i);
            }
        }
        let preset = presets
            .iter()
            .filter(|p| p.depth >= depth)
            .min_by_key(|p| p.depth)
            .ok_or_else(|| Error::Planning(format!("block{} needs depth {depth}, no preset is that deep", b + 1)))?;

        // entries, one per value at the shallowest depth any consumer needs
        let mut entries: BTreeMap<Value, usize> = BTreeMap::new();
        for &i in &nodes {
            for &v in &g.nodes[i].inputs {
                if st.in_block(v, b).is_none() {
                    let s = slack(&st, i, v);
                    entries.entry(v).and_modify(|e| *e = (*e).min(s)).or_insert(s);
                }
            }
        }
        for (v, s) in entries {
            conversions.push(Conversion { value: v, block: b, direction: Direction::ToHe, level: preset.depth - s, fold: 1.0 });
        }
        for &i in &nodes {
            let v = Value::Node(i);
            let leaves = g.outputs.contains(&v) || g.consumers(v).iter().any(|&c| placement[c] != here);
            if leaves {
                let fold = if folded.contains(&i) { g.nodes[i].constant().unwrap_or(1.0) } else { 1.0 };
                conversions.push(Conversion { value: v, block: b, direction: Direction::ToMpc, level: 0, fold });
            }
            packing[i] = Some(packing_of(g, &st, &packing, i, b));
        }
        let carried_here: Vec<usize> = if b == 0 { carried.clone() } else { Vec::new() };
        out_blocks.push(FusedBlock {
            name: format!("block{}", b + 1),
            nodes,
            carried: carried_here,
            folded,
            depth,
            preset: preset.name.clone(),
            preset_depth: preset.depth,
        });
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut seen = vec![false; out_blocks.len()];
    for (i, p) in placement.iter().enumerate() {
        match *p {
            Placement::Block(b) => {
                if !seen[b] {
                    seen[b] = true;
                    segments.push(Segment::Fused(b));
                }
            }
            Placement::Mpc => match segments.last_mut() {
                Some(Segment::Mpc(m)) => m.nodes.push(i),
                _ => segments.push(Segment::Mpc(MpcSegment { nodes: vec![i] })),
            },
        }
    }
    Ok(FusionPlan {
        blocks: out_blocks,
        segments,
        placement,
        depths: st.depth,
        packing,
        conversions,
        truncate_outputs,
    })
}

fn packing_of(g: &Graph, st: &State<'_>, done: &[Option<Packing>], i: usize, b: usize) -> Packing {
    let n = &g.nodes[i];
    match n.op {
        OpKind::MatmulCc => Packing::MultiHeadDiagonal,
        OpKind::MatmulCp if n.shape.heads > 1 => Packing::MultiHeadSpatial,
        OpKind::MatmulCp => Packing::Spatial,
        OpKind::Sum => Packing::Broadcast,
        _ => n
            .inputs
            .iter()
            .find_map(|&v| st.in_block(v, b).and_then(|j| done[j]))
            .unwrap_or(Packing::Spatial),
    }
}
