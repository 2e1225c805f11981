use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TensorError};
use crate::ops::elementwise::BinaryKind;
use crate::ops::norm::GroupStats;
use crate::ops::{conv, elementwise, linalg, loss, norm, pool, shape, upsample};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Binary(BinaryKind, NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    Gather {
        x: NodeId,
        arg: Vec<u32>,
    },
    AvgPool2(NodeId),
    ChannelMean(NodeId),
    SpatialMean(NodeId),
    Upsample {
        x: NodeId,
        factor: usize,
    },
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        stats: GroupStats<T>,
    },
    PixelL2 {
        x: NodeId,
        norms: Vec<T>,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Bce {
        pred: NodeId,
        target: Tensor<T>,
        weights: (f64, f64),
        eps: f64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of one forward pass. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid topological order for backward.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, NodeId)>,
    param_index: HashMap<String, NodeId>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn take_value(&mut self, id: NodeId) -> Tensor<T> {
        self.nodes[id.0].value.clone()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Input leaf whose gradient is tracked (used for sensitivity probes and CAM).
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, shape: &[usize], value: T) -> NodeId {
        self.input(Tensor::full(shape, value))
    }

    /// Registers a named parameter as a gradient-tracked leaf. Repeated
    /// lookups of the same name return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_index.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
            .clone();
        let id = self.push(value, Op::Leaf, true);
        self.params.push((name.to_string(), id));
        self.param_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param_nodes(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = elementwise::binary_forward(kind, self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    /// Element-wise sum with size-1 broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }

    /// Element-wise product with size-1 broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Left-to-right sum of several same-shape nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| TensorError::invalid("add_all", "no terms"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = elementwise::relu(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = elementwise::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        let out = shape::concat_channels(&parts)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    fn gather(&mut self, x: NodeId, out: Tensor<T>, arg: Vec<u32>) -> NodeId {
        let rg = self.rg(x);
        self.push(out, Op::Gather { x, arg }, rg)
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (out, arg) = pool::max_pool2(self.value(x))?;
        Ok(self.gather(x, out, arg))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let out = pool::avg_pool2(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPool2(x), rg))
    }

    pub fn channel_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let out = pool::channel_mean(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ChannelMean(x), rg))
    }

    pub fn channel_max(&mut self, x: NodeId) -> Result<NodeId> {
        let (out, arg) = pool::channel_max(self.value(x))?;
        Ok(self.gather(x, out, arg))
    }

    pub fn spatial_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let out = pool::spatial_mean(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SpatialMean(x), rg))
    }

    pub fn spatial_max(&mut self, x: NodeId) -> Result<NodeId> {
        let (out, arg) = pool::spatial_max(self.value(x))?;
        Ok(self.gather(x, out, arg))
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers).
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 1 {
            return Ok(x);
        }
        let out = upsample::forward(self.value(x), factor)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample { x, factor }, rg))
    }

    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, eps: f64) -> Result<NodeId> {
        let (out, stats) = norm::group_norm(self.value(x), self.value(gamma), self.value(beta), groups, eps)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            rg,
        ))
    }

    pub fn pixel_l2_normalize(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let (out, norms) = norm::pixel_l2_normalize(self.value(x), eps)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelL2 { x, norms }, rg))
    }

    /// Batched matrix product over `(batch, rows, cols)` tensors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let out = linalg::matmul(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let out = linalg::transpose(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = T::from_usize(self.value(x).numel()).expect("numel");
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Binary cross-entropy on probabilities. Returns the scalar loss node and
    /// the number of predictions that had to be clamped into `[eps, 1 - eps]`.
    pub fn bce(&mut self, pred: NodeId, target: &Tensor<T>, balanced: bool, eps: f64) -> Result<(NodeId, usize)> {
        let out = loss::bce(self.value(pred), target, balanced, eps)?;
        let rg = self.rg(pred);
        let id = self.push(
            out.loss,
            Op::Bce {
                pred,
                target: target.clone(),
                weights: out.weights,
                eps,
            },
            rg,
        );
        Ok((id, out.clamped))
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backward_node(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backward_node(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut acc = |id: NodeId, t: Tensor<T>| -> Result<()> {
            match grads[id.0].as_mut() {
                Some(existing) => existing.add_assign(&t),
                None => {
                    grads[id.0] = Some(t);
                    Ok(())
                }
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let cg = conv::backward(self.value(*x), self.value(*w), g, *stride, *pad, need)?;
                if let Some(dx) = cg.dx {
                    acc(*x, dx)?;
                }
                if let Some(dw) = cg.dw {
                    acc(*w, dw)?;
                }
                if let (Some(db), Some(b)) = (cg.db, b) {
                    acc(*b, db.reshape(self.shape(*b))?)?;
                }
            }
            Op::Binary(kind, a, b) => {
                let (ga, gb) = elementwise::binary_backward(
                    *kind,
                    self.value(*a),
                    self.value(*b),
                    g,
                    (self.rg(*a), self.rg(*b)),
                )?;
                if let Some(ga) = ga {
                    acc(*a, ga)?;
                }
                if let Some(gb) = gb {
                    acc(*b, gb)?;
                }
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * *s))?,
            Op::Relu(x) => acc(*x, elementwise::relu_backward(self.value(*x), g))?,
            Op::Sigmoid(x) => acc(*x, elementwise::sigmoid_backward(out, g))?,
            Op::Concat(xs) => {
                let channels: Vec<usize> = xs.iter().map(|&x| self.shape(x)[1]).collect();
                for (x, part) in xs.iter().zip(shape::split_channels(g, &channels)?) {
                    if self.rg(*x) {
                        acc(*x, part)?;
                    }
                }
            }
            Op::Gather { x, arg } => acc(*x, pool::scatter_argmax(self.shape(*x), arg, g))?,
            Op::AvgPool2(x) => acc(*x, pool::avg_pool2_backward(self.shape(*x), g)?)?,
            Op::ChannelMean(x) => acc(*x, pool::channel_mean_backward(self.shape(*x), g))?,
            Op::SpatialMean(x) => acc(*x, pool::spatial_mean_backward(self.shape(*x), g))?,
            Op::Upsample { x, factor } => acc(*x, upsample::backward(self.shape(*x), *factor, g))?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let gg = norm::group_norm_backward(self.value(*x), self.value(*gamma), *groups, stats, g)?;
                if self.rg(*x) {
                    acc(*x, gg.dx)?;
                }
                if self.rg(*gamma) {
                    acc(*gamma, gg.dgamma.reshape(self.shape(*gamma))?)?;
                }
                if self.rg(*beta) {
                    acc(*beta, gg.dbeta.reshape(self.shape(*beta))?)?;
                }
            }
            Op::PixelL2 { x, norms } => acc(*x, norm::pixel_l2_normalize_backward(out, norms, g)?)?,
            Op::MatMul { a, b, ta, tb } => {
                let (da, db) = linalg::matmul_backward(
                    self.value(*a),
                    self.value(*b),
                    *ta,
                    *tb,
                    g,
                    (self.rg(*a), self.rg(*b)),
                )?;
                if let Some(da) = da {
                    acc(*a, da)?;
                }
                if let Some(db) = db {
                    acc(*b, db)?;
                }
            }
            Op::Transpose(x) => acc(*x, linalg::transpose(g)?)?,
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x))?)?,
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), g.data()[0]))?,
            Op::Bce {
                pred,
                target,
                weights,
                eps,
            } => acc(
                *pred,
                loss::bce_backward(self.value(*pred), target, *weights, *eps, g.data()[0]),
            )?,
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, NodeId)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, id)| self.get(*id))
    }

    /// Gradients of every parameter that was touched by the forward pass and
    /// reached by the backward sweep.
    pub fn into_param_grads(mut self) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (name, id) in std::mem::take(&mut self.params) {
            if let Some(g) = self.grads[id.0].take() {
                out.insert(name, g);
            }
        }
        out
    }
}
