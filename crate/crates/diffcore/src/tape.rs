use std::rc::Rc;

use crate::error::{DiffError, Result};
use crate::kernels::ConvGeom;
use crate::rules;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-registered primitive: receives the input values
/// and the upstream gradient, returns one gradient per input.
pub type CustomBackward<T> = Rc<dyn Fn(&[&Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>>>;

pub(crate) enum Op<T: Real> {
    Leaf,
    MatMul { a: Var, b: Var },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Abs(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Ln { x: Var, floor: T },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MaxLast { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    AvgPool1d(Var),
    MaxPool1d { x: Var, argmax: Vec<usize> },
    SoftmaxLast(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Cosine { a: Var, b: Var },
    PairwiseAbsDiff { q: Var, k: Var },
    BiasAdd { x: Var, b: Var },
    RowScale { x: Var, s: Var },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T: Real> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Conv { .. } => "conv",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Abs(_) => "abs",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Ln { .. } => "ln",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::MaxLast { .. } => "max_last",
            Op::MeanRows(_) => "mean_rows",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::AvgPool1d(_) => "adaptive_avg_pool1d",
            Op::MaxPool1d { .. } => "adaptive_max_pool1d",
            Op::SoftmaxLast(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Cosine { .. } => "cosine_similarity",
            Op::PairwiseAbsDiff { .. } => "pairwise_abs_diff",
            Op::BiasAdd { .. } => "bias_add",
            Op::RowScale { .. } => "row_scale",
            Op::Custom { .. } => "custom",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Cosine { a, b } => vec![*a, *b],
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine { x, .. }
            | Op::Ln { x, .. }
            | Op::MaxLast { x, .. }
            | Op::Slice { x, .. }
            | Op::MaxPool1d { x, .. } => vec![*x],
            Op::Abs(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumLast(x)
            | Op::MeanRows(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::AvgPool1d(x)
            | Op::SoftmaxLast(x) => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::PairwiseAbsDiff { q, k } => vec![*q, *k],
            Op::BiasAdd { x, b } => vec![*x, *b],
            Op::RowScale { x, s } => vec![*x, *s],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Ordered record of executed primitives. Nodes are appended in execution
/// order, so every node's inputs precede it.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A tape that rejects any primitive producing NaN or infinity.
    pub fn checked() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a primitive whose forward value is already computed and
    /// whose backward rule is supplied by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: CustomBackward<T>,
    ) -> Result<Var> {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape; returns the
    /// accumulated gradient of every leaf that requires one.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(DiffError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        if !loss_node.requires_grad {
            return Ok(Gradients { grads: leaves });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                let shape = node.value.shape();
                leaves[i] = Some(Tensor::new(shape, g)?);
                continue;
            }
            rules::propagate(&self.nodes, i, &g, &mut grads);
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
