//! Reverse-mode automatic differentiation over a tape of tensor operations.
//!
//! A [`Graph`] records every operation in insertion order, which is also a
//! valid topological order: inputs always exist before the node that uses
//! them. [`Graph::backward`] walks the tape once, in reverse.

pub mod check;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    AvgPool2d {
        input: NodeId,
        window: usize,
        stride: usize,
    },
    GlobalAvgPool(NodeId),
    Concat(Vec<NodeId>),
    FullyConnected {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Reshape(NodeId),
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Relu,
    Sigmoid,
    AvgPool2d,
    GlobalAvgPool,
    Concat,
    FullyConnected,
    Reshape,
    MseLoss,
    Scale,
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

fn op_inputs<T>(op: &Op<T>) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d {
            input, kernel, bias, ..
        } => vec![*input, *kernel, *bias],
        Op::Relu(x) | Op::Sigmoid(x) | Op::GlobalAvgPool(x) | Op::Reshape(x) => vec![*x],
        Op::AvgPool2d { input, .. } | Op::Scale { input, .. } => vec![*input],
        Op::Concat(xs) => xs.clone(),
        Op::FullyConnected { input, weights, bias } => vec![*input, *weights, *bias],
        Op::MseLoss { pred, target } => vec![*pred, *target],
    }
}

/// Append-only operation tape.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All node ids in recording order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        match self.nodes[id.0].op {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::AvgPool2d { .. } => OpKind::AvgPool2d,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::Concat(_) => OpKind::Concat,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::Reshape(_) => OpKind::Reshape,
            Op::MseLoss { .. } => OpKind::MseLoss,
            Op::Scale { .. } => OpKind::Scale,
        }
    }

    /// Ids of the nodes an operation reads.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        op_inputs(&self.nodes[id.0].op)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        debug_assert!(op_inputs(&op).iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf (parameter, input or constant).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geometry = ops::conv_geometry(x, k, b, stride, padding)?;
        let y = ops::conv2d(x, k, b, stride, padding)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
            y,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu(x), y)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = ops::sigmoid(self.value(x));
        self.push(Op::Sigmoid(x), y)
    }

    pub fn avg_pool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let y = ops::avg_pool2d(self.value(x), window, stride)?;
        Ok(self.push(
            Op::AvgPool2d {
                input: x,
                window,
                stride,
            },
            y,
        ))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(Op::GlobalAvgPool(x), y))
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|&i| self.value(i)).collect();
        let y = ops::concat_channels(&values)?;
        Ok(self.push(Op::Concat(xs.to_vec()), y))
    }

    pub fn fully_connected(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let y = ops::fully_connected(self.value(x), self.value(weights), self.value(bias))?;
        Ok(self.push(
            Op::FullyConnected {
                input: x,
                weights,
                bias,
            },
            y,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), y))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let y = ops::mse_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Op::MseLoss { pred, target }, y))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let y = self.value(x).map(|v| v * factor);
        self.push(Op::Scale { input: x, factor }, y)
    }

    /// Gradients of the scalar node `root` with respect to every leaf.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        self.backward_traced(root, |_| {})
    }

    /// As [`Graph::backward`], calling `visit` on each node as it is processed.
    pub fn backward_traced(&self, root: NodeId, mut visit: impl FnMut(NodeId)) -> Result<Gradients<T>> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));

        for i in (0..=root.0).rev() {
            visit(NodeId(i));
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // intermediate gradients are released once propagated
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (id, contribution) in self.local_backward(node, &g) {
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let leaves = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match self.nodes[i].op {
                Op::Leaf => g,
                _ => None,
            })
            .collect();
        Ok(Gradients {
            grads: leaves,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let (gx, gk, gb) = ops::conv2d_backward(self.value(*input), self.value(*kernel), geometry, g);
                vec![(*input, gx), (*kernel, gk), (*bias, gb)]
            }
            Op::Relu(x) => vec![(*x, ops::relu_backward(self.value(*x), g))],
            Op::Sigmoid(x) => vec![(*x, ops::sigmoid_backward(&node.value, g))],
            Op::AvgPool2d { input, window, stride } => vec![(
                *input,
                ops::avg_pool2d_backward(self.value(*input).shape(), *window, *stride, g),
            )],
            Op::GlobalAvgPool(x) => vec![(*x, ops::global_avg_pool_backward(self.value(*x).shape(), g))],
            Op::Concat(xs) => {
                let channels: Vec<usize> = xs.iter().map(|&i| self.value(i).shape()[1]).collect();
                xs.iter()
                    .copied()
                    .zip(ops::concat_channels_backward(&channels, g))
                    .collect()
            }
            Op::FullyConnected { input, weights, bias } => {
                let (gx, gw, gb) = ops::fully_connected_backward(self.value(*input), self.value(*weights), g);
                vec![(*input, gx), (*weights, gw), (*bias, gb)]
            }
            Op::Reshape(x) => vec![(
                *x,
                Tensor::from_parts(self.value(*x).shape().to_vec(), g.data().to_vec()),
            )],
            Op::MseLoss { pred, target } => {
                let (gp, gt) = ops::mse_loss_backward(self.value(*pred), self.value(*target), g.data()[0]);
                vec![(*pred, gp), (*target, gt)]
            }
            Op::Scale { input, factor } => vec![(*input, g.map(|v| v * *factor))],
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to leaf `id`; zero when `id` does
    /// not reach the root.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        match self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}
