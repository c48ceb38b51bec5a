use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Category, OpKind};
use crate::{Error, Result};

/// Logical shape `rows × cols`, the columns split into `heads` equal blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
    pub heads: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols, heads: 1 }
    }

    pub fn with_heads(rows: usize, cols: usize, heads: usize) -> Self {
        Shape { rows, cols, heads }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_width(&self) -> usize {
        self.cols / self.heads
    }

    /// One column per head: the shape of a per-row, per-head scalar.
    pub fn per_head_scalar(&self) -> Shape {
        Shape { rows: self.rows, cols: self.heads, heads: self.heads }
    }

    fn parse(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.parse::<usize>().map_err(|_| Error::Graph(format!("bad shape `{s}`"))))
            .collect::<Result<_>>()?;
        match parts[..] {
            [r, c] => Ok(Shape::new(r, c)),
            [r, c, h] => Ok(Shape::with_heads(r, c, h)),
            _ => Err(Error::Graph(format!("bad shape `{s}`"))),
        }
    }

    fn text(&self) -> String {
        if self.heads == 1 {
            format!("{}x{}", self.rows, self.cols)
        } else {
            format!("{}x{}x{}", self.rows, self.cols, self.heads)
        }
    }
}

/// The plaintext side of a `_cp` operator.
///
/// On `ewadd_cc` and `sadd_cc` a constant is the coefficient of the second
/// input; on `cmp` it is the threshold; on `mux` it is XORed into the selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    None,
    Const(f64),
    /// A weight matrix, or a row vector repeated over the rows.
    Weight(String),
    /// A named public scalar resolved at execution time.
    Param(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Input(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub name: String,
    pub op: OpKind,
    pub inputs: Vec<Value>,
    pub shape: Shape,
    pub operand: Operand,
    /// `matmul_cc` only: multiply by the per-head transpose of the second input.
    pub transpose: bool,
    /// `cmp` only: per-head row maximum by a comparison tree.
    pub row_max: bool,
    /// Layer the node belongs to (attention, softmax, layernorm1, ...).
    pub group: String,
}

impl OpNode {
    pub fn category(&self) -> Category {
        self.op.category()
    }

    pub fn constant(&self) -> Option<f64> {
        match self.operand {
            Operand::Const(c) => Some(c),
            _ => None,
        }
    }
}

/// Shapes of a BERT-style block: sequence length, hidden size, heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub m: usize,
    pub d: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Graph {
    pub inputs: Vec<(String, Shape)>,
    pub nodes: Vec<OpNode>,
    pub outputs: Vec<Value>,
}

impl Graph {
    pub fn shape(&self, v: Value) -> Shape {
        match v {
            Value::Input(i) => self.inputs[i].1,
            Value::Node(i) => self.nodes[i].shape,
        }
    }

    pub fn value_name(&self, v: Value) -> &str {
        match v {
            Value::Input(i) => &self.inputs[i].0,
            Value::Node(i) => &self.nodes[i].name,
        }
    }

    pub fn lookup(&self, name: &str) -> Option<Value> {
        if let Some(i) = self.nodes.iter().position(|n| n.name == name) {
            return Some(Value::Node(i));
        }
        self.inputs.iter().position(|(n, _)| n == name).map(Value::Input)
    }

    /// Nodes reading `v`, in graph order.
    pub fn consumers(&self, v: Value) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].inputs.contains(&v)).collect()
    }

    pub fn count(&self, op: OpKind, group: &str) -> usize {
        self.nodes.iter().filter(|n| n.op == op && n.group == group).count()
    }

    /// Append a node, inferring its shape unless one is given.
    pub fn push(&mut self, mut node: OpNode, shape: Option<Shape>) -> Result<Value> {
        if self.lookup(&node.name).is_some() {
            return Err(Error::Graph(format!("duplicate name `{}`", node.name)));
        }
        for &v in &node.inputs {
            if let Value::Node(i) = v {
                if i >= self.nodes.len() {
                    return Err(Error::Graph(format!("`{}` reads a later node", node.name)));
                }
            }
        }
        node.shape = match shape {
            Some(s) => s,
            None => self.infer(&node)?,
        };
        self.check(&node)?;
        self.nodes.push(node);
        Ok(Value::Node(self.nodes.len() - 1))
    }

    fn infer(&self, n: &OpNode) -> Result<Shape> {
        let first = n.inputs.first().map(|&v| self.shape(v));
        let first = first.ok_or_else(|| Error::Graph(format!("`{}` has no inputs", n.name)))?;
        Ok(match n.op {
            OpKind::Sum => first.per_head_scalar(),
            OpKind::Cmp if n.row_max => first.per_head_scalar(),
            OpKind::MatmulCc => {
                let b = self.shape(*n.inputs.get(1).ok_or_else(|| Error::Graph(format!("`{}` needs two inputs", n.name)))?);
                if n.transpose {
                    Shape::with_heads(first.rows, first.heads * b.rows, first.heads)
                } else {
                    Shape::with_heads(first.rows, b.cols, first.heads)
                }
            }
            OpKind::MatmulCp => return Err(Error::Graph(format!("`{}`: matmul_cp needs an explicit shape", n.name))),
            _ => first,
        })
    }

    fn check(&self, n: &OpNode) -> Result<()> {
        let bad = |why: &str| Err(Error::Graph(format!("`{}` ({}): {why}", n.name, n.op)));
        let shapes: Vec<Shape> = n.inputs.iter().map(|&v| self.shape(v)).collect();
        let has_operand = !matches!(n.operand, Operand::None);
        if n.shape.heads == 0 || n.shape.cols % n.shape.heads != 0 {
            return bad("heads must divide the columns");
        }
        match n.op {
            OpKind::EwaddCc | OpKind::EwmulCc => {
                if shapes.len() != 2 || shapes[0] != shapes[1] {
                    return bad("needs two inputs of equal shape");
                }
            }
            OpKind::SaddCc | OpKind::SmulCc => {
                if shapes.len() != 2 || shapes[1] != shapes[0].per_head_scalar() {
                    return bad("needs a tensor and one scalar per row and head");
                }
            }
            OpKind::EwaddCp | OpKind::EwmulCp | OpKind::SaddCp | OpKind::SmulCp => {
                if shapes.len() != 1 || !has_operand {
                    return bad("needs one input and a plaintext operand");
                }
            }
            OpKind::Sum | OpKind::Rec | OpKind::Rsqrt => {
                if shapes.len() != 1 {
                    return bad("needs one input");
                }
            }
            OpKind::MatmulCp => {
                if shapes.len() != 1 || !matches!(n.operand, Operand::Weight(_)) || shapes[0].rows != n.shape.rows {
                    return bad("needs one input and a weight");
                }
            }
            OpKind::MatmulCc => {
                if shapes.len() != 2 || shapes[0].heads != shapes[1].heads {
                    return bad("needs two inputs with the same heads");
                }
                let (a, b) = (shapes[0], shapes[1]);
                let ok = if n.transpose { a.cols == b.cols } else { a.head_width() == b.rows };
                if !ok {
                    return bad("inner dimensions differ");
                }
            }
            OpKind::Cmp => {
                let ok = match shapes.len() {
                    1 => n.row_max || n.constant().is_some(),
                    2 => shapes[0] == shapes[1],
                    _ => false,
                };
                if !ok {
                    return bad("compares a tensor with a constant, another tensor, or takes a row maximum");
                }
            }
            OpKind::Mux => {
                if shapes.len() < 2 || shapes[1..].iter().any(|s| *s != shapes[0]) {
                    return bad("needs a value and at least one selector of its shape");
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, shape) in &self.inputs {
            out.push_str(&format!("input {name} {}\n", shape.text()));
        }
        for n in &self.nodes {
            out.push_str(&format!("{} {}", n.name, n.op));
            for &v in &n.inputs {
                out.push(' ');
                out.push_str(self.value_name(v));
            }
            out.push_str(&format!(" shape={}", n.shape.text()));
            match &n.operand {
                Operand::None => {}
                Operand::Const(c) => out.push_str(&format!(" const={c}")),
                Operand::Weight(w) => out.push_str(&format!(" weight={w}")),
                Operand::Param(p) => out.push_str(&format!(" param={p}")),
            }
            if n.transpose {
                out.push_str(" transpose=1");
            }
            if n.row_max {
                out.push_str(" reduce=max");
            }
            if !n.group.is_empty() {
                out.push_str(&format!(" group={}", n.group));
            }
            out.push('\n');
        }
        for &v in &self.outputs {
            out.push_str(&format!("output {}\n", self.value_name(v)));
        }
        out
    }
}

/// Parse the text form: `input NAME RxC[xH]`, `output NAME`, and one node per
/// line as `NAME OP INPUT... [key=value]...` with keys `shape`, `const`,
/// `weight`, `param`, `transpose`, `reduce=max` and `group`. `#` starts a
/// comment. Without `output` lines every unread node is an output.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut g = Graph::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |e: Error| e.context(format!("line {}", ln + 1));
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "input" => {
                let [_, name, shape] = toks[..] else {
                    return Err(at(Error::Graph("expected `input NAME SHAPE`".into())));
                };
                if g.lookup(name).is_some() {
                    return Err(at(Error::Graph(format!("duplicate name `{name}`"))));
                }
                g.inputs.push((name.to_string(), Shape::parse(shape).map_err(at)?));
            }
            "output" => {
                for name in &toks[1..] {
                    let v = g.lookup(name).ok_or_else(|| at(Error::Graph(format!("unknown value `{name}`"))))?;
                    g.outputs.push(v);
                }
            }
            name => {
                let op = toks.get(1).ok_or_else(|| at(Error::Graph("missing operator".into())))?;
                let op = OpKind::parse(op).map_err(at)?;
                let mut node = OpNode {
                    name: name.to_string(),
                    op,
                    inputs: Vec::new(),
                    shape: Shape::new(0, 0),
                    operand: Operand::None,
                    transpose: false,
                    row_max: false,
                    group: String::new(),
                };
                let mut shape = None;
                for tok in &toks[2..] {
                    if let Some((k, v)) = tok.split_once('=') {
                        match k {
                            "shape" => shape = Some(Shape::parse(v).map_err(at)?),
                            "const" => {
                                let c = v.parse().map_err(|_| at(Error::Graph(format!("bad constant `{v}`"))))?;
                                node.operand = Operand::Const(c);
                            }
                            "weight" => node.operand = Operand::Weight(v.to_string()),
                            "param" => node.operand = Operand::Param(v.to_string()),
                            "transpose" => node.transpose = v == "1" || v == "true",
                            "reduce" if v == "max" => node.row_max = true,
                            "group" => node.group = v.to_string(),
                            _ => return Err(at(Error::Graph(format!("unknown attribute `{tok}`")))),
                        }
                    } else {
                        let v = g.lookup(tok).ok_or_else(|| at(Error::Graph(format!("unknown value `{tok}`"))))?;
                        node.inputs.push(v);
                    }
                }
                g.push(node, shape).map_err(at)?;
            }
        }
    }
    if g.outputs.is_empty() {
        g.outputs = (0..g.nodes.len()).map(Value::Node).filter(|&v| g.consumers(v).is_empty()).collect();
    }
    Ok(g)
}

struct Builder {
    g: Graph,
    group: &'static str,
}

impl Builder {
    fn make(&self, name: &str, op: OpKind, inputs: &[Value], operand: Operand) -> OpNode {
        OpNode {
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
            shape: Shape::new(0, 0),
            operand,
            transpose: false,
            row_max: false,
            group: self.group.to_string(),
        }
    }

    fn node(&mut self, name: &str, op: OpKind, inputs: &[Value], operand: Operand, shape: Option<Shape>) -> Result<Value> {
        let node = self.make(name, op, inputs, operand);
        self.g.push(node, shape)
    }

    fn op(&mut self, name: &str, op: OpKind, inputs: &[Value]) -> Result<Value> {
        self.node(name, op, inputs, Operand::None, None)
    }

    fn with(&mut self, name: &str, op: OpKind, inputs: &[Value], operand: Operand) -> Result<Value> {
        self.node(name, op, inputs, operand, None)
    }

    fn weight(name: &str) -> Operand {
        Operand::Weight(name.to_string())
    }

    /// LayerNorm on `x`; the last node's name is `{p}_out`.
    fn layernorm(&mut self, p: &str, x: Value, d: usize) -> Result<Value> {
        use OpKind::*;
        let inv_d = 1.0 / d as f64;
        let s = self.op(&format!("{p}_sum"), Sum, &[x])?;
        let mu = self.with(&format!("{p}_negmean"), EwmulCp, &[s], Operand::Const(-inv_d))?;
        let xc = self.op(&format!("{p}_center"), SaddCc, &[x, mu])?;
        let sq = self.op(&format!("{p}_sq"), EwmulCc, &[xc, xc])?;
        let ss = self.op(&format!("{p}_sqsum"), Sum, &[sq])?;
        let var = self.with(&format!("{p}_var"), EwmulCp, &[ss], Operand::Const(inv_d))?;
        let rs = self.op(&format!("{p}_rsqrt"), Rsqrt, &[var])?;
        let nrm = self.op(&format!("{p}_norm"), SmulCc, &[xc, rs])?;
        let g = self.with(&format!("{p}_gamma"), EwmulCp, &[nrm], Self::weight(&format!("{p}_gamma")))?;
        self.with(&format!("{p}_out"), EwaddCp, &[g], Self::weight(&format!("{p}_beta")))
    }
}

/// Constants of the nonlinear approximations baked into the graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Approx {
    /// `exp(x) ≈ (1 + x/2^t)^(2^t)`.
    pub exp_squarings: u32,
    /// Exponent inputs below this are clipped to zero.
    pub exp_clip: f64,
    /// GeLU is the identity above the cutoff and zero below its negation.
    pub gelu_cutoff: f64,
}

impl Default for Approx {
    fn default() -> Self {
        Approx { exp_squarings: 6, exp_clip: -13.0, gelu_cutoff: 2.7 }
    }
}

impl Builder {
    /// Row-wise (per head) softmax of `sc`; the last node is `probs`.
    fn softmax(&mut self, sc: Value, ap: &Approx) -> Result<Value> {
        use OpKind::*;
        let mut node = self.make("row_max", Cmp, &[sc], Operand::None);
        node.row_max = true;
        let mx = self.g.push(node, None)?;
        let t = self.with("shifted", SaddCc, &[sc, mx], Operand::Const(-1.0))?;
        let t1 = self.with("exp_in", EwmulCp, &[t], Operand::Const(libm::exp2(-(ap.exp_squarings as f64))))?;
        let mut e = self.with("exp_base", EwaddCp, &[t1], Operand::Const(1.0))?;
        for i in 1..=ap.exp_squarings {
            e = self.op(&format!("exp_sq{i}"), EwmulCc, &[e, e])?;
        }
        let clip = self.with("clip", Cmp, &[t], Operand::Const(ap.exp_clip))?;
        let pe = self.with("exp", Mux, &[e, clip], Operand::Const(1.0))?;
        let den = self.op("denom", Sum, &[pe])?;
        let inv = self.op("inv_denom", Rec, &[den])?;
        self.op("probs", SmulCc, &[pe, inv])
    }

    /// Piecewise GeLU of `h`; the last node is `gelu_out`.
    fn gelu(&mut self, h: Value, ap: &Approx) -> Result<Value> {
        use OpKind::*;
        let p_ = |n: &str| Operand::Param(n.to_string());
        let x2 = self.op("gelu_x2", EwmulCc, &[h, h])?;
        let x3 = self.op("gelu_x3", EwmulCc, &[x2, h])?;
        let x4 = self.op("gelu_x4", EwmulCc, &[x2, x2])?;
        let t4 = self.with("gelu_t4", EwmulCp, &[x4], p_("gelu_a"))?;
        let t3 = self.with("gelu_t3", EwmulCp, &[x3], p_("gelu_b"))?;
        let t2 = self.with("gelu_t2", EwmulCp, &[x2], p_("gelu_c"))?;
        let tp = self.with("gelu_t1_pos", EwmulCp, &[h], p_("gelu_pos"))?;
        let tn = self.with("gelu_t1_neg", EwmulCp, &[h], p_("gelu_neg"))?;
        let even = self.op("gelu_even", EwaddCc, &[t4, t2])?;
        let even = self.with("gelu_even_e", EwaddCp, &[even], p_("gelu_e"))?;
        let a0 = self.op("gelu_f0_odd", EwaddCc, &[even, t3])?;
        let f0 = self.op("gelu_f0", EwaddCc, &[a0, tp])?;
        let a1 = self.with("gelu_f1_odd", EwaddCc, &[even, t3], Operand::Const(-1.0))?;
        let f1 = self.op("gelu_f1", EwaddCc, &[a1, tn])?;
        let b_lo = self.with("gelu_below_neg", Cmp, &[h], Operand::Const(-ap.gelu_cutoff))?;
        let b_0 = self.with("gelu_below_zero", Cmp, &[h], Operand::Const(0.0))?;
        let b_hi = self.with("gelu_below_pos", Cmp, &[h], Operand::Const(ap.gelu_cutoff))?;
        let m_hi = self.with("gelu_sel_id", Mux, &[h, b_hi], Operand::Const(1.0))?;
        let m_pos = self.op("gelu_sel_f0", Mux, &[f0, b_0, b_hi])?;
        let m_neg = self.op("gelu_sel_f1", Mux, &[f1, b_lo, b_0])?;
        let g1 = self.op("gelu_join", EwaddCc, &[m_hi, m_pos])?;
        self.op("gelu_out", EwaddCc, &[g1, m_neg])
    }
}

fn single(group: &'static str, shape: Shape, f: impl FnOnce(&mut Builder, Value) -> Result<Value>) -> Result<Graph> {
    if shape.is_empty() || shape.heads == 0 || shape.cols % shape.heads != 0 {
        return Err(Error::Graph(format!("invalid input shape {shape:?}")));
    }
    let mut b = Builder { g: Graph::default(), group };
    b.g.inputs.push(("x".into(), shape));
    let out = f(&mut b, Value::Input(0))?;
    b.g.outputs = vec![out];
    Ok(b.g)
}

/// Softmax over each row of each head of `x`.
pub fn softmax_graph(shape: Shape, ap: &Approx) -> Result<Graph> {
    single("softmax", shape, |b, x| b.softmax(x, ap))
}

pub fn gelu_graph(shape: Shape, ap: &Approx) -> Result<Graph> {
    single("gelu", shape, |b, x| b.gelu(x, ap))
}

/// LayerNorm over the rows of an `rows × d` input, weights `ln_gamma` and `ln_beta`.
pub fn layernorm_graph(rows: usize, d: usize) -> Result<Graph> {
    if d < 2 {
        return Err(Error::Graph(format!("LayerNorm over {d} columns")));
    }
    single("layernorm", Shape::new(rows, d), |b, x| b.layernorm("ln", x, d))
}

/// Operator graph of one encoder layer: attention with a decomposed
/// Softmax, residual and LayerNorm, then FC, decomposed GeLU, FC, residual
/// and the final LayerNorm. The single input is `X`, the output `ln2_out`.
///
/// Weights: `w_q w_k w_v w_o w_1 w_2` with biases `b_*`, `ln{1,2}_{gamma,beta}`.
/// Scalars: `gelu_a gelu_b gelu_c gelu_pos gelu_neg gelu_e`, where `gelu_pos`
/// and `gelu_neg` are `0.5 ± d` for the quartic `a t⁴ + b t³ + c t² + d t + e`.
pub fn decompose_block(dims: BlockDims) -> Result<Graph> {
    decompose_block_with(dims, &Approx::default())
}

pub fn decompose_block_with(dims: BlockDims, ap: &Approx) -> Result<Graph> {
    use OpKind::*;
    let BlockDims { m, d, heads } = dims;
    if m == 0 || d == 0 || heads == 0 || d % heads != 0 {
        return Err(Error::Graph(format!("invalid block dims {dims:?}")));
    }
    let dh = d / heads;
    let f = 4 * d;
    let mut b = Builder { g: Graph::default(), group: "attention" };
    b.g.inputs.push(("X".into(), Shape::new(m, d)));
    let x = Value::Input(0);
    let w = Builder::weight;
    let mh = Some(Shape::with_heads(m, d, heads));

    let q0 = b.node("q_proj", MatmulCp, &[x], w("w_q"), mh)?;
    let q = b.with("q", EwaddCp, &[q0], w("b_q"))?;
    let k0 = b.node("k_proj", MatmulCp, &[x], w("w_k"), mh)?;
    let k = b.with("k", EwaddCp, &[k0], w("b_k"))?;
    let v0 = b.node("v_proj", MatmulCp, &[x], w("w_v"), mh)?;
    let v = b.with("v", EwaddCp, &[v0], w("b_v"))?;
    let mut node = b.make("scores", MatmulCc, &[q, k], Operand::None);
    node.transpose = true;
    let s = b.g.push(node, None)?;
    let sc = b.with("scaled", EwmulCp, &[s], Operand::Const(1.0 / libm::sqrt(dh as f64)))?;

    b.group = "softmax";
    let p = b.softmax(sc, ap)?;

    b.group = "attention";
    let ctx = b.op("context", MatmulCc, &[p, v])?;
    let o = b.node("o_proj", MatmulCp, &[ctx], w("w_o"), Some(Shape::new(m, d)))?;
    let ob = b.with("o", EwaddCp, &[o], w("b_o"))?;
    let h1 = b.op("residual1", EwaddCc, &[ob, x])?;

    b.group = "layernorm1";
    let y1 = b.layernorm("ln1", h1, d)?;

    b.group = "ffn";
    let f0 = b.node("fc1", MatmulCp, &[y1], w("w_1"), Some(Shape::new(m, f)))?;
    let h = b.with("fc1_out", EwaddCp, &[f0], w("b_1"))?;

    b.group = "gelu";
    let g = b.gelu(h, ap)?;

    b.group = "ffn";
    let f2 = b.node("fc2", MatmulCp, &[g], w("w_2"), Some(Shape::new(m, d)))?;
    let f2b = b.with("fc2_out", EwaddCp, &[f2], w("b_2"))?;
    let h2 = b.op("residual2", EwaddCc, &[f2b, y1])?;

    b.group = "layernorm2";
    let out = b.layernorm("ln2", h2, d)?;
    b.g.outputs = vec![out];
    Ok(b.g)
}

/// Names of the weights (`true`) and scalars (`false`) a graph reads.
pub fn operand_names(g: &Graph) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    for n in &g.nodes {
        match &n.operand {
            Operand::Weight(w) => {
                out.insert(w.clone(), true);
            }
            Operand::Param(p) => {
                out.insert(p.clone(), false);
            }
            _ => {}
        }
    }
    out
}
