use super::{Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(super) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    UpsampleNearest {
        x: Var,
        factor: usize,
    },
    PadEdge {
        x: Var,
        pad: [usize; 4],
    },
    Crop {
        x: Var,
        y0: usize,
        x0: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    Square {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Gather {
        x: Var,
        positions: Vec<usize>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    GroupMatMulNt {
        a: Var,
        b: Var,
        group: usize,
    },
    DiagCrossEntropy {
        logits: Var,
        softmax: Vec<T>,
    },
}

impl<T> Op<T> {
    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::UpsampleNearest { .. } => "upsample_nearest",
            Op::PadEdge { .. } => "pad_edge",
            Op::Crop { .. } => "crop",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Gather { .. } => "gather_positions",
            Op::Linear { .. } => "linear",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::GroupMatMulNt { .. } => "group_matmul_nt",
            Op::DiagCrossEntropy { .. } => "diag_cross_entropy",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => std::iter::once(*input)
                .chain(std::iter::once(*weight))
                .chain(*bias)
                .collect(),
            Op::Linear { x, weight, bias } => std::iter::once(*x)
                .chain(std::iter::once(*weight))
                .chain(*bias)
                .collect(),
            Op::ChannelAffine { x, gamma, beta } => vec![*x, *gamma, *beta],
            Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::GroupMatMulNt { a, b, .. } => vec![*a, *b],
            Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::InstanceNorm { x, .. }
            | Op::UpsampleNearest { x, .. }
            | Op::PadEdge { x, .. }
            | Op::Crop { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Square { x }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Gather { x, .. }
            | Op::L2NormalizeRows { x, .. } => vec![*x],
            Op::DiagCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
pub(super) struct Node<T> {
    pub(super) value: Tensor<T>,
    pub(super) op: Op<T>,
    pub(super) requires_grad: bool,
}

/// Records one forward pass. Nodes are appended in evaluation order, which is a
/// topological order of the graph.
#[derive(Debug)]
pub struct Tape<T> {
    pub(super) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    numeric_error: Option<String>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            numeric_error: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients accumulate only into leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// First non-finite result recorded so far.
    pub fn status(&self) -> Result<(), TensorError> {
        match &self.numeric_error {
            Some(op) => Err(TensorError::Numeric(op.clone())),
            None => Ok(()),
        }
    }

    pub(super) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        if self.numeric_error.is_none() && !value.is_finite() {
            self.numeric_error = Some(op.name().to_string());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(super) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Back-propagates from a scalar `loss`, adding `d loss / d leaf` into every leaf
    /// that requires a gradient. Calling it again without [`Tape::zero_grad`]
    /// accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        self.status()?;
        let mut pending: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::Numeric("backward".into()));
                }
                if self.grads.len() < self.nodes.len() {
                    self.grads.resize_with(self.nodes.len(), || None);
                }
                match &mut self.grads[id] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a = *a + *b),
                    slot => *slot = Some(Tensor::new(node.value.shape(), g).unwrap()),
                }
                continue;
            }
            for (parent, contribution) in self.local_grads(id, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut pending[parent.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, b)| *a = *a + *b),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `id` to its parents, given `d loss / d node`.
    fn local_grads(&self, id: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[id];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => super::conv::conv2d_backward(
                self.value(*input),
                self.value(*weight),
                out.shape(),
                g,
                *stride,
                *pad,
                [wants(*input), wants(*weight)],
            )
            .into_iter()
            .zip([*input, *weight])
            .filter_map(|(grad, v)| grad.map(|gr| (v, gr)))
            .chain(
                bias.filter(|b| wants(*b))
                    .map(|b| (b, super::ops::channel_sum(g, out.shape()))),
            )
            .collect(),
            op => {
                let parents = op.parents();
                let mut res = Vec::with_capacity(parents.len());
                for (slot, &p) in parents.iter().enumerate() {
                    if wants(p) {
                        res.push((p, super::ops::backward(self, op, slot, out, g)));
                    }
                }
                res
            }
        }
    }
}
