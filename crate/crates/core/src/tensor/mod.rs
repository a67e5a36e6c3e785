//! Reverse-mode automatic differentiation over a flat tape of tensors.
//!
//! A [`Graph`] is an arena of eagerly-evaluated [`Tensor`] nodes. Each op
//! builder computes its forward value immediately and records which inputs
//! produced it; [`Graph::backward`] then sweeps the tape once in reverse
//! creation order (a valid reverse topological order, since inputs always
//! precede outputs) and accumulates `∂loss/∂node` into every node that
//! requires gradients.
//!
//! Graphs are cheap and short-lived: build one per training step, call
//! `backward`, flush gradients into the [`ParamStore`], drop the graph.

mod gradcheck;
mod ops;
mod param;

pub use gradcheck::{check_gradients, GradCheckReport, DEFAULT_H, DEFAULT_TOL};
pub use ops::PROB_FLOOR;
pub use param::{Init, Param, ParamId, ParamStore, Precision};

use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// How a node was produced; holds the input handles the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(TensorId, TensorId),
    /// Broadcast-add a length-`c` row vector to every row of an `[r, c]` matrix.
    AddRow(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    /// Multiply every element by a graph scalar (shape `[1]`).
    MulScalar(TensorId, TensorId),
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Relu(TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Exp(TensorId),
    /// `ln(max(x, floor))`; zero gradient where the clamp is active.
    ClampedLn(TensorId, f64),
    Sqrt(TensorId),
    Softmax(TensorId),
    LogSoftmax(TensorId),
    /// Per-row log-sum-exp, `[r, c] -> [r]`.
    LogSumExpRows(TensorId),
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    },
    Sum(TensorId),
    Mean(TensorId),
    /// Column means, `[r, c] -> [c]`.
    MeanRows(TensorId),
    /// Gather rows of a matrix; repeated indices accumulate on backward.
    Rows(TensorId, Vec<usize>),
    StackRows(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    ConcatCols(Vec<TensorId>),
    Concat(Vec<TensorId>),
    SliceRows(TensorId, usize, usize),
    SliceCols(TensorId, usize, usize),
    Reshape(TensorId),
    /// Single element of the flattened input, `-> [1]`.
    Gather(TensorId, usize),
    /// `out[idx[i]] += a[i]` into a fresh zero vector.
    ScatterAdd { a: TensorId, idx: Vec<usize> },
    Dot(TensorId, TensorId),
}

#[derive(Debug)]
pub struct Tensor {
    pub(crate) data: Vec<f64>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) op: Op,
    /// Set when this node mirrors a [`ParamStore`] entry.
    pub(crate) param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Tensor>,
    /// One node per bound parameter; repeated binds reuse it.
    param_cache: std::collections::HashMap<usize, TensorId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub(crate) fn push(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not cover {} elements",
            data.len()
        );
        self.nodes.push(Tensor {
            data,
            shape,
            requires_grad,
            grad: None,
            op,
            param,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Constant input; gradients do not flow into it.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        self.push(data, shape.to_vec(), Op::Leaf, false, None)
    }

    /// Differentiable input that is not a stored parameter (used by tests and
    /// the gradient checker).
    pub fn var(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        self.push(data, shape.to_vec(), Op::Leaf, true, None)
    }

    /// Constant scalar node of shape `[1]`.
    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(vec![v], &[1])
    }

    /// Mirrors a stored parameter into this graph. Gradients accumulated on
    /// the node flow back to the store via [`Graph::grads_into`]. Binding the
    /// same parameter twice returns the same node (the store must not change
    /// while a graph built from it is alive).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorId {
        if let Some(&t) = self.param_cache.get(&id.0) {
            return t;
        }
        let p = store.get(id);
        let t = self.push(p.data.clone(), p.shape.clone(), Op::Leaf, true, Some(id));
        self.param_cache.insert(id.0, t);
        t
    }

    pub fn data(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].data
    }

    pub fn shape(&self, t: TensorId) -> &[usize] {
        &self.nodes[t.0].shape
    }

    /// Value of a single-element node.
    pub fn value(&self, t: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[t.0].data.len(), 1);
        self.nodes[t.0].data[0]
    }

    pub fn grad(&self, t: TensorId) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interpret a node as a matrix: 1-D `[n]` counts as one row.
    pub(crate) fn rc(&self, t: TensorId) -> (usize, usize) {
        let s = &self.nodes[t.0].shape;
        match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => panic!("expected 1-D or 2-D tensor, got shape {s:?}"),
        }
    }

    /// Accumulates `∂loss/∂node` into `grad` for every node reachable from
    /// `loss` that requires gradients. Repeated calls without a reset add up.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut delta: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        delta[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(d) = delta[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.push_back(i, &d, &mut delta);
            let node = &mut self.nodes[i];
            let g = node.grad.get_or_insert_with(|| vec![0.0; d.len()]);
            for (gi, di) in g.iter_mut().zip(&d) {
                *gi += di;
            }
        }
        Ok(())
    }

    /// Adds every parameter-mirror node's accumulated gradient into the store.
    pub fn grads_into(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) else {
                continue;
            };
            let p = store.get_mut(pid);
            for (pg, g) in p.grad.iter_mut().zip(grad) {
                *pg += g;
            }
        }
    }

    /// Clears accumulated node gradients so the next `backward` starts fresh.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn add_delta(delta: &mut [Option<Vec<f64>>], t: TensorId, len: usize) -> &mut Vec<f64> {
        delta[t.0].get_or_insert_with(|| vec![0.0; len])
    }
}
