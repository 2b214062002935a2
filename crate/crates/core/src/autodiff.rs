//! Reverse-mode differentiation over a small fixed operator set.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, so the node index is already a topological order and
//! [`Tape::backward`] visits each node exactly once by walking it in reverse.
//!
//! Leaves are either named parameters (which receive gradients) or constants
//! (which never do). Peer logits in the distillation loss enter as constants.
//!
//! Conventions:
//! - `relu'(0) = 0`.
//! - `backward` may be called once per tape; a second call is a contract error.
//! - Reductions over the leading (batch) axis can be blocked with
//!   [`Tape::with_row_block`], which fixes the association of batch sums so
//!   that a large batch can reproduce an average of per-device gradients bit
//!   for bit.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient map keyed by parameter name, in registration order.
pub type GradMap = IndexMap<String, Tensor>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Sum(Var),
    BatchSum(Var),
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    row_block: Option<usize>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reduce batch-axis sums in consecutive blocks of `block` rows.
    pub fn with_row_block(mut self, block: Option<usize>) -> Self {
        self.row_block = block;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Registers a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::contract(format!("parameter `{name}` registered twice")));
        }
        let v = self.push(Op::Param, value, true);
        self.params.push((name, v));
        Ok(v)
    }

    /// The leaf registered under `name`, if any.
    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), value, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let needs = self.needs(a);
        self.push(Op::Relu(a), value, needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let needs = self.needs(a);
        self.push(Op::Scale(a, factor), value, needs)
    }

    /// Sum of every entry, left to right.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(Op::Sum(a), value, needs)
    }

    /// Sum of every entry of a batch-major matrix, honouring the row block.
    pub fn batch_sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum_row_blocked(self.row_block));
        let needs = self.needs(a);
        self.push(Op::BatchSum(a), value, needs)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).log_softmax_rows()?;
        let needs = self.needs(a);
        Ok(self.push(Op::LogSoftmax(a), value, needs))
    }

    /// Reverse sweep from a scalar root; returns a gradient for every
    /// registered parameter (zeros where the root does not depend on it).
    pub fn backward(&mut self, root: Var) -> Result<GradMap> {
        if self.consumed {
            return Err(Error::contract("backward called twice on the same tape"));
        }
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match node.op {
                Op::Constant => {}
                Op::Param => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let ga = g.matmul_t(self.value(b))?;
                        accumulate(&mut adj, a, ga)?;
                    }
                    if self.needs(b) {
                        let gb = self.value(a).t_matmul_blocked(&g, self.row_block)?;
                        accumulate(&mut adj, b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut adj, a, g.clone())?;
                    }
                    if self.needs(b) {
                        accumulate(&mut adj, b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut adj, a, g.clone())?;
                    }
                    if self.needs(b) {
                        accumulate(&mut adj, b, g.scale(-1.0))?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut adj, a, g.mul(self.value(b))?)?;
                    }
                    if self.needs(b) {
                        accumulate(&mut adj, b, g.mul(self.value(a))?)?;
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Scale(a, factor) => accumulate(&mut adj, a, g.scale(factor))?,
                Op::Sum(a) | Op::BatchSum(a) => {
                    let ga = Tensor::filled(self.value(a).shape(), g.item());
                    accumulate(&mut adj, a, ga)?;
                }
                Op::LogSoftmax(a) => {
                    // dz = g - softmax(z) * rowsum(g)
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut ga = g.clone();
                    for i in 0..m {
                        let mut gs = 0.0;
                        for v in g.row(i) {
                            gs += v;
                        }
                        let out = &mut ga.data_mut()[i * n..(i + 1) * n];
                        for (o, &yv) in out.iter_mut().zip(y.row(i)) {
                            *o -= yv.exp() * gs;
                        }
                    }
                    accumulate(&mut adj, a, ga)?;
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|(name, v)| {
                let g = adj[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
                (name.clone(), g)
            })
            .collect())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match adj[v.0].as_mut() {
        Some(acc) => acc.add_assign(&g),
        None => {
            adj[v.0] = Some(g);
            Ok(())
        }
    }
}
