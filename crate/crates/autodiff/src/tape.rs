use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::grad;
use crate::tensor::Tensor;
use crate::TensorError;

pub(crate) type NodeId = usize;

/// Edge lists of one path per (row, col) pair, stored CSR style.
///
/// `offsets` has `rows * cols + 1` entries; pair `(i, j)` owns edges
/// `edges[offsets[i * cols + j]..offsets[i * cols + j + 1]]`.
#[derive(Clone, Debug, Default)]
pub struct PathTable {
    pub rows: usize,
    pub cols: usize,
    pub offsets: Vec<usize>,
    pub edges: Vec<(u32, u32)>,
}

/// How a row of [`Var::interp_rows`] is produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InterpSlot {
    /// Linear interpolation at the given lower index and weight of the upper row.
    Lerp { lower: usize, eta: f64 },
    /// A fixed table row; no gradient reaches the position.
    Fixed(usize),
}

pub(crate) enum Op {
    Leaf,
    Constant,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    BatchMatMul { a: NodeId, b: NodeId, tb: bool },
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    SafeRecip(NodeId),
    SafeRsqrt(NodeId),
    SoftmaxRows(NodeId),
    WeightedSoftmaxRows { w: NodeId, q: NodeId, scaled: Vec<f64>, denom: Vec<f64> },
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols { a: NodeId, start: usize },
    GatherRows { a: NodeId, index: Vec<usize> },
    Reshape(NodeId),
    Pad2d(NodeId),
    MaskedFill { a: NodeId, mask: Vec<bool> },
    Diag(NodeId),
    ScatterSym { values: NodeId, pairs: Vec<(usize, usize)> },
    PairSum(NodeId, NodeId),
    PairWeightedSum { alpha: NodeId, edges: NodeId },
    PathSums { adj: NodeId, paths: Rc<PathTable> },
    InterpRows { table: NodeId, pos: Option<NodeId>, slots: Vec<InterpSlot> },
    NoisyOr { adj: NodeId, p: NodeId },
    LayerNorm { a: NodeId, inv_std: Vec<f64> },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    BceLogits { score: NodeId, targets: Vec<f64> },
    MarginRows { logits: NodeId, labels: Vec<usize>, rival: Vec<usize> },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

#[derive(Default)]
pub(crate) struct Inner {
    pub(crate) nodes: Vec<Node>,
    nonfinite: Option<&'static str>,
}

/// Recording of a computation for reverse-mode differentiation.
///
/// Every op on a [`Var`] appends one node; inputs always precede their
/// consumers, so the node list is already topologically ordered. A tape is
/// single-threaded; create one per forward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, Op::Leaf)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Op::Constant)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Outstanding `Var`s become dangling and
    /// must not be used afterwards.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.nonfinite = None;
    }

    /// Name of the first primitive that produced NaN or +inf, if any.
    pub fn first_nonfinite(&self) -> Option<&'static str> {
        self.inner.borrow().nonfinite
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        match self.first_nonfinite() {
            Some(op) => Err(TensorError::NonFinite { op }),
            None => Ok(()),
        }
    }

    pub(crate) fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var { tape: self, id }
    }

    /// Records the result of a primitive. The op is kept only when some
    /// input requires a gradient.
    pub(crate) fn record(
        &self,
        name: &'static str,
        value: Tensor,
        inputs: &[NodeId],
        op: impl FnOnce() -> Op,
    ) -> Var<'_> {
        let requires_grad = {
            let inner = self.inner.borrow();
            inputs.iter().any(|&i| inner.nodes[i].requires_grad)
        };
        // -inf is legal (log of zero feeding a softmax); NaN and +inf are not.
        if value.data().iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            let mut inner = self.inner.borrow_mut();
            if inner.nonfinite.is_none() {
                inner.nonfinite = Some(name);
            }
        }
        let op = if requires_grad { op() } else { Op::Constant };
        self.push(value, requires_grad, op)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        assert!(std::ptr::eq(self, loss.tape), "backward: loss belongs to another tape");
        self.check_finite()?;
        let inner = self.inner.borrow();
        let shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        if inner.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            grad::propagate(&inner.nodes, id, &g, &mut grads);
        }
        let shapes = inner.nodes[..=loss.id]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of one backward sweep, keyed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf; zero when the leaf did not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        let shape = match self.shapes.get(var.id) {
            Some(s) => s.clone(),
            None => var.shape(),
        };
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn contains(&self, var: Var<'_>) -> bool {
        matches!(self.grads.get(var.id), Some(Some(_)))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.inner.borrow(), |inner| &inner.nodes[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&self) -> Var<'t> {
        let value = self.to_tensor();
        self.tape.constant(value)
    }
}
