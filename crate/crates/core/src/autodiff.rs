//! Tape-based reverse-mode differentiation over dense 2-D arrays.
//!
//! A [`Graph`] records every operation in insertion order; [`Graph::backward`]
//! walks the tape once in reverse. Tensors are lightweight handles into the
//! graph. The tape is rebuilt for every training update while model
//! parameters live outside it as plain matrices and are registered as leaves.
//!
//! Binary elementwise operations accept either equal shapes or a 1×1 right
//! operand, which is broadcast. Nothing richer is supported.

use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix};

/// Floor added under the square root in [`Graph::std_all`].
pub const STD_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    StopGrad,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Prelu(usize, usize),
    Sum(usize),
    Mean(usize),
    Std { input: usize, mean: f64, std: f64 },
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Tensor {
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Tensor { id, rows, cols }
    }

    fn node(&self, t: Tensor) -> &Node {
        &self.nodes[t.id]
    }

    fn req(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.id].requires_grad)
    }

    /// Differentiable leaf, typically a model parameter.
    pub fn leaf(&mut self, value: Matrix) -> Tensor {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Tensor {
        self.constant(Matrix::scalar(value))
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.node(t).value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.node(t).requires_grad
    }

    /// Gradient accumulated by the last backward pass, if `t` received any.
    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.id).and_then(Option::as_ref)
    }

    /// Gradient of `t`, or zeros of `t`'s shape when none reached it.
    pub fn grad_or_zeros(&self, t: Tensor) -> Matrix {
        self.grad(t)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(t.rows, t.cols))
    }

    pub fn stop_grad(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).clone();
        self.push(Op::StopGrad, value, false)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = gemm(self.value(a), false, self.value(b), false)?;
        let rg = self.req(&[a, b]);
        Ok(self.push(Op::MatMul(a.id, b.id), value, rg))
    }

    fn elementwise(
        &self,
        op: &'static str,
        a: Tensor,
        b: Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() == bv.shape() {
            Ok(av.zip_map(bv, f))
        } else if bv.is_scalar() {
            let s = bv.item();
            Ok(av.map(|x| f(x, s)))
        } else {
            Err(Error::Shape {
                op,
                lhs: av.shape(),
                rhs: bv.shape(),
            })
        }
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.elementwise("add", a, b, |x, y| x + y)?;
        let rg = self.req(&[a, b]);
        Ok(self.push(Op::Add(a.id, b.id), value, rg))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.elementwise("sub", a, b, |x, y| x - y)?;
        let rg = self.req(&[a, b]);
        Ok(self.push(Op::Sub(a.id, b.id), value, rg))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.elementwise("mul", a, b, |x, y| x * y)?;
        let rg = self.req(&[a, b]);
        Ok(self.push(Op::Mul(a.id, b.id), value, rg))
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let bv = self.value(b);
        if let Some(pos) = bv.as_slice().iter().position(|&v| v == 0.0) {
            return Err(Error::DivisionByZero {
                op: "div",
                row: pos / bv.cols(),
                col: pos % bv.cols(),
            });
        }
        let value = self.elementwise("div", a, b, |x, y| x / y)?;
        let rg = self.req(&[a, b]);
        Ok(self.push(Op::Div(a.id, b.id), value, rg))
    }

    /// Multiplication by a fixed real constant.
    pub fn scale(&mut self, a: Tensor, factor: f64) -> Tensor {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.req(&[a]);
        self.push(Op::Scale(a.id, factor), value, rg)
    }

    /// Parametric ReLU with a learnable 1×1 slope for negative inputs.
    pub fn prelu(&mut self, a: Tensor, slope: Tensor) -> Result<Tensor> {
        if !slope.is_scalar() {
            return Err(Error::Shape {
                op: "prelu",
                lhs: a.shape(),
                rhs: slope.shape(),
            });
        }
        let s = self.value(slope).item();
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { s * x });
        let rg = self.req(&[a, slope]);
        Ok(self.push(Op::Prelu(a.id, slope.id), value, rg))
    }

    pub fn sum_all(&mut self, a: Tensor) -> Tensor {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.req(&[a]);
        self.push(Op::Sum(a.id), value, rg)
    }

    pub fn mean_all(&mut self, a: Tensor) -> Result<Tensor> {
        if self.value(a).is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let value = Matrix::scalar(self.value(a).mean());
        let rg = self.req(&[a]);
        Ok(self.push(Op::Mean(a.id), value, rg))
    }

    /// Population standard deviation over all elements,
    /// `sqrt(mean((x - mean)^2) + STD_EPS)`.
    pub fn std_all(&mut self, a: Tensor) -> Result<Tensor> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::Contract("std of an empty tensor".into()));
        }
        let mean = av.mean();
        let var = av
            .as_slice()
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / av.len() as f64;
        let std = (var + STD_EPS).sqrt();
        let rg = self.req(&[a]);
        Ok(self.push(
            Op::Std {
                input: a.id,
                mean,
                std,
            },
            Matrix::scalar(std),
            rg,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "mse",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        if av.is_empty() {
            return Err(Error::Contract("mse of empty tensors".into()));
        }
        let total: f64 = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let value = Matrix::scalar(total / av.len() as f64);
        let rg = self.req(&[a, b]);
        Ok(self.push(Op::Mse(a.id, b.id), value, rg))
    }

    /// Back-propagates from a scalar loss, seeding its gradient with 1.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if !loss.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                loss.shape()
            )));
        }
        self.backward_with(loss, Matrix::scalar(1.0))
    }

    /// Vector-Jacobian product: back-propagates `cotangent` from `output`.
    pub fn backward_with(&mut self, output: Tensor, cotangent: Matrix) -> Result<()> {
        if output.id >= self.nodes.len() {
            return Err(Error::Contract(
                "tensor does not belong to this graph".into(),
            ));
        }
        if cotangent.shape() != output.shape() {
            return Err(Error::Shape {
                op: "backward",
                lhs: output.shape(),
                rhs: cotangent.shape(),
            });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[output.id] = Some(cotangent);

        for id in (0..=output.id).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g)?;
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, contribution: Matrix) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut self.grads[id] {
            // First contribution is moved in untouched so that pure
            // pass-through edges stay bit-exact.
            slot @ None => *slot = Some(contribution),
            Some(acc) => acc.add_assign(&contribution),
        }
    }

    /// Gradient for operand `b` of a possibly broadcast binary op: reduces to
    /// a scalar when `b` is 1×1 and `a` is not.
    fn reduce_for(&self, b: usize, full: Matrix) -> Matrix {
        if self.nodes[b].value.is_scalar() && !full.is_scalar() {
            Matrix::scalar(full.sum())
        } else {
            full
        }
    }

    fn broadcast_value(&self, b: usize, like: &Matrix) -> Matrix {
        let bv = &self.nodes[b].value;
        if bv.shape() == like.shape() {
            bv.clone()
        } else {
            Matrix::filled(like.rows(), like.cols(), bv.item())
        }
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn propagate(&mut self, id: usize, g: &Matrix) -> Result<()> {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf | Op::Constant | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    let ga = gemm(g, false, &self.nodes[b].value, true)?;
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let gb = gemm(&self.nodes[a].value, true, g, false)?;
                    self.accumulate(b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.clone());
                }
                if self.wants(b) {
                    let gb = self.reduce_for(b, g.clone());
                    self.accumulate(b, gb);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.clone());
                }
                if self.wants(b) {
                    let gb = self.reduce_for(b, g.map(|x| -x));
                    self.accumulate(b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let bv = self.broadcast_value(b, g);
                    self.accumulate(a, g.zip_map(&bv, |x, y| x * y));
                }
                if self.wants(b) {
                    let full = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                    let gb = self.reduce_for(b, full);
                    self.accumulate(b, gb);
                }
            }
            Op::Div(a, b) => {
                let bv = self.broadcast_value(b, g);
                if self.wants(a) {
                    self.accumulate(a, g.zip_map(&bv, |x, y| x / y));
                }
                if self.wants(b) {
                    let av = &self.nodes[a].value;
                    let num = g.zip_map(av, |x, y| x * y);
                    let full = num.zip_map(&bv, |n, d| -n / (d * d));
                    let gb = self.reduce_for(b, full);
                    self.accumulate(b, gb);
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(a, g.map(|x| x * factor));
            }
            Op::Prelu(a, s) => {
                let slope = self.nodes[s].value.item();
                if self.wants(a) {
                    let av = &self.nodes[a].value;
                    let ga = g.zip_map(av, |gi, x| if x >= 0.0 { gi } else { slope * gi });
                    self.accumulate(a, ga);
                }
                if self.wants(s) {
                    let av = &self.nodes[a].value;
                    let gs: f64 = g
                        .as_slice()
                        .iter()
                        .zip(av.as_slice())
                        .filter(|(_, &x)| x < 0.0)
                        .map(|(gi, x)| gi * x)
                        .sum();
                    self.accumulate(s, Matrix::scalar(gs));
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[a].value.shape();
                self.accumulate(a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let av = &self.nodes[a].value;
                let fill = g.item() / av.len() as f64;
                let (r, c) = av.shape();
                self.accumulate(a, Matrix::filled(r, c, fill));
            }
            Op::Std { input, mean, std } => {
                let av = &self.nodes[input].value;
                let k = g.item() / (av.len() as f64 * std);
                let ga = av.map(|x| (x - mean) * k);
                self.accumulate(input, ga);
            }
            Op::Mse(a, b) => {
                let av = &self.nodes[a].value;
                let bv = &self.nodes[b].value;
                let k = 2.0 * g.item() / av.len() as f64;
                let ga = av.zip_map(bv, |x, y| (x - y) * k);
                if self.wants(b) {
                    self.accumulate(b, ga.map(|x| -x));
                }
                if self.wants(a) {
                    self.accumulate(a, ga);
                }
            }
        }
        Ok(())
    }
}
