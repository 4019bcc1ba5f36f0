//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`]. Nodes are
//! only ever appended, so node order is a topological order and the backward
//! pass simply walks the tape from the loss towards the front.
//!
//! Leaves created with [`Tape::param`] keep a gradient buffer that
//! accumulates across [`Tape::backward`] calls until [`Tape::zero_grad`].
//! [`Var::detach`] copies a value into a fresh constant node, so nothing
//! upstream of a detached value receives gradient through it.

use std::cell::RefCell;

use super::tensor::{kernels, matmul_dims, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRowVec(usize, usize),
    MulRowVec(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Softplus(usize),
    Gelu(usize),
    ClampMin(usize, f64),
    SoftmaxRows(usize),
    LayerNormRows { input: usize, inv_std: Vec<f64> },
    SumAll(usize),
    MeanAll(usize),
    RowSum(usize),
    ColSlice { input: usize, start: usize },
    ConcatCols(Vec<usize>),
    GaussianKernel(usize),
    PowerKernel(usize),
    RowNormalize { input: usize, sums: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Node {
    fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.value.len() / c
        }
    }

    fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Ordered record of operations for one forward/backward computation.
///
/// A tape is single-threaded; build one per independent computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a differentiable leaf.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Constant, false)
    }

    /// Records `tensor` as a param if it requires grad, else as a constant.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        if t.requires_grad() {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(vec![], vec![v], Op::Constant, false)
    }

    /// Gradient accumulated on a leaf; zeros if no gradient reached it.
    pub fn grad(&self, v: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        n.grad.clone().unwrap_or_else(|| vec![0.0; n.value.len()])
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Propagates d(loss)/d(leaf) into every reachable param leaf.
    ///
    /// Gradients accumulate across calls; the loss must hold one finite value.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        if !root.value[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[id].op {
                let node = &mut nodes[id];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (input, contrib) in local_grads(&nodes, id, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match grads[input].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                    None => grads[input] = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

/// Vector-Jacobian products of node `id` for upstream gradient `g`.
fn local_grads(nodes: &[Node], id: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let node = &nodes[id];
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Constant => vec![],
        Op::MatMul(a, b) => {
            let (an, bn) = (&nodes[*a], &nodes[*b]);
            let (m, k, p) = (an.shape[0], an.shape[1], bn.shape[1]);
            let mut res = Vec::with_capacity(2);
            if an.requires_grad {
                res.push((*a, kernels::matmul_nt(g, &bn.value, m, p, k)));
            }
            if bn.requires_grad {
                res.push((*b, kernels::matmul_tn(&an.value, g, m, k, p)));
            }
            res
        }
        Op::Transpose(a) => {
            let (r, c) = (node.shape[0], node.shape[1]);
            vec![(*a, kernels::transpose(g, r, c))]
        }
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            vec![
                (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
            ]
        }
        Op::AddRowVec(a, v) => {
            let c = node.cols();
            let mut gv = vec![0.0; c];
            for row in g.chunks(c) {
                gv.iter_mut().zip(row).for_each(|(s, x)| *s += x);
            }
            vec![(*a, g.to_vec()), (*v, gv)]
        }
        Op::MulRowVec(a, v) => {
            let c = node.cols();
            let (av, vv) = (&nodes[*a].value, &nodes[*v].value);
            let mut ga = vec![0.0; g.len()];
            let mut gv = vec![0.0; c];
            for (r, (grow, arow)) in g.chunks(c).zip(av.chunks(c)).enumerate() {
                for j in 0..c {
                    ga[r * c + j] = grow[j] * vv[j];
                    gv[j] += grow[j] * arow[j];
                }
            }
            vec![(*a, ga), (*v, gv)]
        }
        Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
        Op::AddScalar(a) => vec![(*a, g.to_vec())],
        Op::Exp(a) => vec![(*a, g.iter().zip(out).map(|(g, y)| g * y).collect())],
        Op::Ln(a) => {
            let av = &nodes[*a].value;
            vec![(*a, g.iter().zip(av).map(|(g, x)| g / x).collect())]
        }
        Op::Square(a) => {
            let av = &nodes[*a].value;
            vec![(*a, g.iter().zip(av).map(|(g, x)| 2.0 * g * x).collect())]
        }
        Op::Softplus(a) => {
            let av = &nodes[*a].value;
            vec![(
                *a,
                g.iter().zip(av).map(|(g, x)| g * kernels::sigmoid(*x)).collect(),
            )]
        }
        Op::Gelu(a) => {
            let av = &nodes[*a].value;
            vec![(
                *a,
                g.iter().zip(av).map(|(g, x)| g * kernels::gelu_grad(*x)).collect(),
            )]
        }
        Op::ClampMin(a, floor) => {
            let av = &nodes[*a].value;
            vec![(
                *a,
                g.iter()
                    .zip(av)
                    .map(|(g, x)| if *x >= *floor { *g } else { 0.0 })
                    .collect(),
            )]
        }
        Op::SoftmaxRows(a) => {
            let c = node.cols();
            let mut ga = vec![0.0; g.len()];
            for ((gr, yr), out_r) in g.chunks(c).zip(out.chunks(c)).zip(ga.chunks_mut(c)) {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for j in 0..c {
                    out_r[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![(*a, ga)]
        }
        Op::LayerNormRows { input, inv_std } => {
            let c = node.cols();
            let cf = c as f64;
            let mut ga = vec![0.0; g.len()];
            for (r, ((gr, xr), out_r)) in g
                .chunks(c)
                .zip(out.chunks(c))
                .zip(ga.chunks_mut(c))
                .enumerate()
            {
                let mean_g: f64 = gr.iter().sum::<f64>() / cf;
                let mean_gx: f64 = gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>() / cf;
                for j in 0..c {
                    out_r[j] = inv_std[r] * (gr[j] - mean_g - xr[j] * mean_gx);
                }
            }
            vec![(*input, ga)]
        }
        Op::SumAll(a) => vec![(*a, vec![g[0]; nodes[*a].value.len()])],
        Op::MeanAll(a) => {
            let n = nodes[*a].value.len();
            vec![(*a, vec![g[0] / n as f64; n])]
        }
        Op::RowSum(a) => {
            let an = &nodes[*a];
            let c = an.cols();
            let mut ga = vec![0.0; an.value.len()];
            for (r, chunk) in ga.chunks_mut(c).enumerate() {
                chunk.iter_mut().for_each(|v| *v = g[r]);
            }
            vec![(*a, ga)]
        }
        Op::ColSlice { input, start } => {
            let an = &nodes[*input];
            let (ac, c) = (an.cols(), node.cols());
            let mut ga = vec![0.0; an.value.len()];
            for r in 0..an.rows() {
                ga[r * ac + start..r * ac + start + c].copy_from_slice(&g[r * c..(r + 1) * c]);
            }
            vec![(*input, ga)]
        }
        Op::ConcatCols(parts) => {
            let total = node.cols();
            let rows = node.rows();
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let pc = nodes[p].cols();
                let mut gp = vec![0.0; rows * pc];
                for r in 0..rows {
                    gp[r * pc..(r + 1) * pc]
                        .copy_from_slice(&g[r * total + offset..r * total + offset + pc]);
                }
                offset += pc;
                res.push((p, gp));
            }
            res
        }
        Op::GaussianKernel(s) => {
            let sv = &nodes[*s].value;
            let n = node.cols();
            let ga = (0..n)
                .map(|i| {
                    let sigma = sv[i];
                    (0..n)
                        .map(|j| {
                            let d2 = ((j as f64) - (i as f64)).powi(2);
                            g[i * n + j] * out[i * n + j] * (d2 / sigma.powi(3) - 1.0 / sigma)
                        })
                        .sum()
                })
                .collect();
            vec![(*s, ga)]
        }
        Op::PowerKernel(a) => {
            let n = node.cols();
            let ga = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let d = (j as f64 - i as f64).abs() + 1.0;
                            -g[i * n + j] * out[i * n + j] * d.ln()
                        })
                        .sum()
                })
                .collect();
            vec![(*a, ga)]
        }
        Op::RowNormalize { input, sums } => {
            let c = node.cols();
            let mut ga = vec![0.0; g.len()];
            for (r, ((gr, yr), out_r)) in g
                .chunks(c)
                .zip(out.chunks(c))
                .zip(ga.chunks_mut(c))
                .enumerate()
            {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for j in 0..c {
                    out_r[j] = (gr[j] - dot) / sums[r];
                }
            }
            vec![(*input, ga)]
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn is_finite(&self) -> bool {
        self.tape.nodes.borrow()[self.id]
            .value
            .iter()
            .all(|v| v.is_finite())
    }

    /// Same value, no gradient path back through it.
    pub fn detach(self) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.clone())
        };
        self.tape.push(shape, value, Op::Constant, false)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect(), n.requires_grad)
        };
        self.tape.push(shape, value, op, rg)
    }

    fn binary(self, other: Var<'t>, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(Error::Shape(format!("{} {:?} vs {:?}", name, a.shape, b.shape)));
            }
            let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), v, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (m, k, p) = matmul_dims(&a.shape, &b.shape)?;
            (
                vec![m, p],
                kernels::matmul(&a.value, &b.value, m, k, p),
                a.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(shape, value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn t(self) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return Err(Error::Shape(format!("transpose of {:?}", a.shape)));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            (vec![c, r], kernels::transpose(&a.value, r, c), a.requires_grad)
        };
        Ok(self.tape.push(shape, value, Op::Transpose(self.id), rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    fn row_vec(self, v: Var<'t>, name: &str, mul: bool) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[v.id]);
            let c = a.cols();
            if b.value.len() != c {
                return Err(Error::Shape(format!(
                    "{} row vector of {} onto {:?}",
                    name,
                    b.value.len(),
                    a.shape
                )));
            }
            let value = a
                .value
                .chunks(c)
                .flat_map(|row| {
                    row.iter()
                        .zip(&b.value)
                        .map(|(x, y)| if mul { x * y } else { x + y })
                })
                .collect();
            (a.shape.clone(), value, a.requires_grad || b.requires_grad)
        };
        let op = if mul {
            Op::MulRowVec(self.id, v.id)
        } else {
            Op::AddRowVec(self.id, v.id)
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    /// Adds a vector of length `cols` to every row.
    pub fn add_row(self, v: Var<'t>) -> Result<Var<'t>> {
        self.row_vec(v, "add_row", false)
    }

    /// Multiplies every row elementwise by a vector of length `cols`.
    pub fn mul_row(self, v: Var<'t>) -> Result<Var<'t>> {
        self.row_vec(v, "mul_row", true)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), kernels::softplus)
    }

    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), kernels::gelu)
    }

    /// `max(x, floor)`; gradient passes where `x >= floor`.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, floor), |x| x.max(floor))
    }

    /// Softmax over the last dimension.
    pub fn softmax_rows(self) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let mut v = a.value.clone();
            kernels::softmax_rows(&mut v, a.cols());
            (a.shape.clone(), v, a.requires_grad)
        };
        self.tape.push(shape, value, Op::SoftmaxRows(self.id), rg)
    }

    /// Per-row standardization over the last dimension (no gain or bias).
    pub fn layer_norm_rows(self, eps: f64) -> Var<'t> {
        let (shape, value, inv_std, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let c = a.cols();
            let mut out = Vec::with_capacity(a.value.len());
            let mut inv = Vec::with_capacity(a.rows());
            for row in a.value.chunks(c) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                out.extend(row.iter().map(|x| (x - mean) * is));
                inv.push(is);
            }
            (a.shape.clone(), out, inv, a.requires_grad)
        };
        self.tape.push(
            shape,
            value,
            Op::LayerNormRows {
                input: self.id,
                inv_std,
            },
            rg,
        )
    }

    pub fn sum(self) -> Var<'t> {
        let (v, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.value.iter().sum(), a.requires_grad)
        };
        self.tape.push(vec![], vec![v], Op::SumAll(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let (v, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (
                a.value.iter().sum::<f64>() / a.value.len() as f64,
                a.requires_grad,
            )
        };
        self.tape.push(vec![], vec![v], Op::MeanAll(self.id), rg)
    }

    /// Sums the last dimension of a 2-D var: `R×C → R×1`.
    pub fn row_sum(self) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let c = a.cols();
            let v: Vec<f64> = a.value.chunks(c).map(|r| r.iter().sum()).collect();
            (vec![v.len(), 1], v, a.requires_grad)
        };
        self.tape.push(shape, value, Op::RowSum(self.id), rg)
    }

    /// Columns `start..end` of a 2-D var.
    pub fn cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let c = a.cols();
            if a.shape.len() != 2 || start >= end || end > c {
                return Err(Error::Shape(format!(
                    "column slice {}..{} of {:?}",
                    start, end, a.shape
                )));
            }
            let v = a
                .value
                .chunks(c)
                .flat_map(|r| r[start..end].iter().copied())
                .collect();
            (vec![a.rows(), end - start], v, a.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::ColSlice {
                input: self.id,
                start,
            },
            rg,
        ))
    }

    /// Concatenates 2-D vars with equal row counts along columns.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero parts".into()))?
            .tape;
        let (shape, value, rg) = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[parts[0].id].rows();
            let mut total = 0;
            let mut rg = false;
            for p in parts {
                let n = &nodes[p.id];
                if n.shape.len() != 2 || n.rows() != rows {
                    return Err(Error::Shape(format!(
                        "concat part {:?} with {} rows",
                        n.shape, rows
                    )));
                }
                total += n.cols();
                rg |= n.requires_grad;
            }
            let mut v = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    let n = &nodes[p.id];
                    let c = n.cols();
                    v.extend_from_slice(&n.value[r * c..(r + 1) * c]);
                }
            }
            (vec![rows, total], v, rg)
        };
        Ok(tape.push(
            shape,
            value,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    /// Unnormalized Gaussian kernel over time distance.
    ///
    /// `self` is an `N×1` column of positive scales; entry `(i, j)` is
    /// `exp(-(j-i)² / (2σᵢ²)) / (√(2π) σᵢ)`.
    pub fn gaussian_kernel(self) -> Result<Var<'t>> {
        let (n, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let s = &nodes[self.id];
            check_column(s, "gaussian_kernel")?;
            let n = s.value.len();
            let norm = (2.0 * std::f64::consts::PI).sqrt();
            let mut v = Vec::with_capacity(n * n);
            for (i, &sigma) in s.value.iter().enumerate() {
                for j in 0..n {
                    let d2 = ((j as f64) - (i as f64)).powi(2);
                    v.push((-d2 / (2.0 * sigma * sigma)).exp() / (norm * sigma));
                }
            }
            (n, v, s.requires_grad)
        };
        Ok(self
            .tape
            .push(vec![n, n], value, Op::GaussianKernel(self.id), rg))
    }

    /// Unnormalized power-law kernel `(|j-i| + 1)^(-αᵢ)` for an `N×1` column of exponents.
    pub fn power_kernel(self) -> Result<Var<'t>> {
        let (n, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let s = &nodes[self.id];
            check_column(s, "power_kernel")?;
            let n = s.value.len();
            let mut v = Vec::with_capacity(n * n);
            for (i, &alpha) in s.value.iter().enumerate() {
                for j in 0..n {
                    let d = (j as f64 - i as f64).abs() + 1.0;
                    v.push(d.powf(-alpha));
                }
            }
            (n, v, s.requires_grad)
        };
        Ok(self
            .tape
            .push(vec![n, n], value, Op::PowerKernel(self.id), rg))
    }

    /// Divides each row of a 2-D var by its sum.
    pub fn row_normalize(self) -> Result<Var<'t>> {
        let (shape, value, sums, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let c = a.cols();
            let sums: Vec<f64> = a.value.chunks(c).map(|r| r.iter().sum()).collect();
            if let Some(r) = sums.iter().position(|s| !(*s > 0.0)) {
                return Err(Error::Contract(format!(
                    "row {} sums to {}, cannot rescale",
                    r, sums[r]
                )));
            }
            let v = a
                .value
                .chunks(c)
                .zip(&sums)
                .flat_map(|(row, s)| row.iter().map(move |x| x / s))
                .collect();
            (a.shape.clone(), v, sums, a.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::RowNormalize {
                input: self.id,
                sums,
            },
            rg,
        ))
    }
}

fn check_column(n: &Node, name: &str) -> Result<()> {
    if n.shape.len() != 2 || n.shape[1] != 1 {
        return Err(Error::Shape(format!("{} needs N×1, got {:?}", name, n.shape)));
    }
    if let Some(v) = n.value.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Contract(format!(
            "{} needs positive parameters, got {}",
            name, v
        )));
    }
    Ok(())
}
