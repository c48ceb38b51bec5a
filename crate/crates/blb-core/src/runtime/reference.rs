use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::Weights;
use crate::fuser::{Graph, OpKind, Shape, Value};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Column `j` of a per-head scalar that applies to column `j` of `s`.
fn head_col(s: Shape, j: usize) -> usize {
    j / s.head_width()
}

fn per_head(x: &Matrix, s: Shape, f: impl Fn(&[f64]) -> f64) -> Matrix {
    let w = s.head_width();
    Matrix::from_fn(s.rows, s.heads, |i, h| {
        let row: Vec<f64> = (0..w).map(|c| x.get(i, h * w + c)).collect();
        f(&row)
    })
}

/// Float value of node `i` given the values of its inputs.
pub fn eval_node(g: &Graph, i: usize, vals: &BTreeMap<Value, Matrix>, w: &Weights, eps: f64) -> Result<Matrix> {
    let n = &g.nodes[i];
    let arg = |k: usize| {
        vals.get(&n.inputs[k]).ok_or_else(|| Error::Graph(format!("`{}` reads `{}` before it exists", n.name, g.value_name(n.inputs[k]))))
    };
    let s0 = g.shape(n.inputs[0]);
    let x = arg(0)?;
    Ok(match n.op {
        OpKind::EwaddCc => {
            let c = n.constant().unwrap_or(1.0);
            x.zip(arg(1)?, |a, b| a + c * b)?
        }
        OpKind::EwmulCc => x.zip(arg(1)?, |a, b| a * b)?,
        OpKind::SaddCc | OpKind::SmulCc => {
            let c = n.constant().unwrap_or(1.0);
            let y = arg(1)?;
            let add = n.op == OpKind::SaddCc;
            Matrix::from_fn(s0.rows, s0.cols, |r, j| {
                let v = y.get(r, head_col(s0, j));
                if add {
                    x.get(r, j) + c * v
                } else {
                    x.get(r, j) * v
                }
            })
        }
        OpKind::EwaddCp | OpKind::SaddCp => x.zip(&w.operand(&n.operand, n.shape)?, |a, b| a + b)?,
        OpKind::EwmulCp | OpKind::SmulCp => x.zip(&w.operand(&n.operand, n.shape)?, |a, b| a * b)?,
        OpKind::Sum => per_head(x, s0, |r| r.iter().sum()),
        OpKind::MatmulCp => {
            let Some(name) = (match &n.operand {
                crate::fuser::Operand::Weight(name) => Some(name),
                _ => None,
            }) else {
                return Err(Error::Graph(format!("`{}` has no weight", n.name)));
            };
            x.matmul(w.mat(name)?)?
        }
        OpKind::MatmulCc => {
            let y = arg(1)?;
            let sb = g.shape(n.inputs[1]);
            let h = s0.heads;
            let (wa, wb) = (s0.head_width(), sb.head_width());
            let mut out = Matrix::zeros(n.shape.rows, n.shape.cols);
            let wo = n.shape.head_width();
            for hh in 0..h {
                for r in 0..n.shape.rows {
                    for c in 0..wo {
                        let mut acc = 0.0;
                        for k in 0..wa {
                            let b = if n.transpose { y.get(c, hh * wb + k) } else { y.get(k, hh * wb + c) };
                            acc += x.get(r, hh * wa + k) * b;
                        }
                        out.set(r, hh * wo + c, acc);
                    }
                }
            }
            out
        }
        OpKind::Cmp if n.row_max => per_head(x, s0, |r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        OpKind::Cmp => {
            if n.inputs.len() == 2 {
                x.zip(arg(1)?, |a, b| f64::from(u8::from(a < b)))?
            } else {
                let c = n.constant().unwrap_or(0.0);
                x.map(|a| f64::from(u8::from(a < c)))
            }
        }
        OpKind::Mux => {
            let flip = n.constant().is_some_and(|c| c != 0.0);
            let mut sel = Vec::with_capacity(x.data.len());
            for e in 0..x.data.len() {
                let mut b = flip;
                for k in 1..n.inputs.len() {
                    b ^= arg(k)?.data[e] != 0.0;
                }
                sel.push(b);
            }
            Matrix::from_vec(x.rows, x.cols, x.data.iter().zip(&sel).map(|(&v, &b)| if b { v } else { 0.0 }).collect())?
        }
        OpKind::Rec => x.map(|a| 1.0 / a),
        OpKind::Rsqrt => x.map(|a| 1.0 / libm::sqrt(a + eps)),
    })
}

/// Every node value of `g` in floating point.
pub fn eval_graph(g: &Graph, w: &Weights, inputs: &[Matrix], eps: f64) -> Result<BTreeMap<Value, Matrix>> {
    if inputs.len() != g.inputs.len() {
        return Err(Error::Graph(format!("{} inputs for a graph taking {}", inputs.len(), g.inputs.len())));
    }
    let mut vals = BTreeMap::new();
    for (k, (m, (name, s))) in inputs.iter().zip(&g.inputs).enumerate() {
        if m.rows != s.rows || m.cols != s.cols {
            return Err(Error::Shape(format!("input `{name}` is {}x{}, expected {}x{}", m.rows, m.cols, s.rows, s.cols)));
        }
        vals.insert(Value::Input(k), m.clone());
    }
    for i in 0..g.nodes.len() {
        let v = eval_node(g, i, &vals, w, eps)?;
        vals.insert(Value::Node(i), v);
    }
    Ok(vals)
}
