//! Tape-based reverse-mode differentiation.
//!
//! Every value produced during a forward pass lives on a [`Tape`] and is
//! addressed by a [`Var`] handle. Nodes are appended in execution order, so
//! the tape is topologically sorted by construction and backward is a single
//! reverse sweep. Nodes whose inputs do not require gradients keep their value
//! but record no backward state.

use std::collections::BTreeMap;

use crate::error::{shape_err, AutodiffError, Result};
use crate::real::{gemm, Real};
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation together with its attributes.
///
/// Axis conventions: `Softmax`, `LogSoftmax`, `SumLast`, `MeanLast`,
/// `ExpandLast` and `L2Normalize` act on the last axis. `AddBias` and
/// `BatchNorm1d` treat axis 1 as the channel axis.
#[derive(Debug, Clone, PartialEq)]
pub enum OpSpec<T> {
    /// `[m, k] x [k, n]`.
    MatMul,
    /// Inputs `x [n, c_in, t]`, `w [c_out, c_in, k]` and an optional bias
    /// `[c_out]`. Symmetric zero padding.
    Conv1d { padding: usize, dilation: usize },
    Relu,
    Tanh,
    /// Inputs `x [n, c]` or `x [n, c, t]`, `gamma [c]`, `beta [c]`.
    /// `running: None` normalizes with batch statistics (train mode);
    /// `Some((mean, var))` uses the given statistics (eval mode).
    BatchNorm1d {
        eps: T,
        running: Option<(Vec<T>, Vec<T>)>,
    },
    Softmax,
    LogSoftmax,
    /// Mean of all elements, producing a scalar.
    Mean,
    MeanLast,
    SumLast,
    ExpandLast(usize),
    Concat { axis: usize },
    L2Normalize,
    Add,
    Sub,
    Mul,
    AddBias,
    MulScalar(T),
    AddScalar(T),
    Square,
    Sqrt,
    ClampMin(T),
    /// 2-D transpose.
    Transpose,
    /// Rows `start..end` along axis 0.
    SliceRows { start: usize, end: usize },
    /// `-mean_i logp[i, labels[i]]` over a `[rows, classes]` input.
    NllMean { labels: Vec<usize> },
    /// Replaces the target cosine `cos t` of each row with `cos(t + margin)`,
    /// falling back to `cos t - margin * sin(margin)` once `t > pi - margin`.
    AamMargin { labels: Vec<usize>, margin: T },
    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    GradReverse { lambda: T },
}

impl<T> OpSpec<T> {
    pub fn name(&self) -> &'static str {
        match self {
            OpSpec::MatMul => "matmul",
            OpSpec::Conv1d { .. } => "conv1d",
            OpSpec::Relu => "relu",
            OpSpec::Tanh => "tanh",
            OpSpec::BatchNorm1d { .. } => "batchnorm1d",
            OpSpec::Softmax => "softmax",
            OpSpec::LogSoftmax => "log_softmax",
            OpSpec::Mean => "mean",
            OpSpec::MeanLast => "mean_last",
            OpSpec::SumLast => "sum_last",
            OpSpec::ExpandLast(_) => "expand_last",
            OpSpec::Concat { .. } => "concat",
            OpSpec::L2Normalize => "l2_normalize",
            OpSpec::Add => "add",
            OpSpec::Sub => "sub",
            OpSpec::Mul => "mul",
            OpSpec::AddBias => "add_bias",
            OpSpec::MulScalar(_) => "mul_scalar",
            OpSpec::AddScalar(_) => "add_scalar",
            OpSpec::Square => "square",
            OpSpec::Sqrt => "sqrt",
            OpSpec::ClampMin(_) => "clamp_min",
            OpSpec::Transpose => "transpose",
            OpSpec::SliceRows { .. } => "slice_rows",
            OpSpec::NllMean { .. } => "nll_mean",
            OpSpec::AamMargin { .. } => "aam_margin",
            OpSpec::GradReverse { .. } => "grad_reverse",
        }
    }
}

#[derive(Debug)]
enum Saved<T> {
    None,
    Cols(Vec<T>),
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Norms(Vec<T>),
}

#[derive(Debug)]
enum NodeOp<T> {
    Leaf,
    Op(OpSpec<T>),
}

#[derive(Debug)]
struct Node<T> {
    op: NodeOp<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    requires_grad: bool,
    saved: Saved<T>,
}

/// Gradients of a scalar with respect to every gradient-requiring leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.by_leaf.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor<T>)> {
        self.by_leaf.iter()
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records a leaf. Its gradient is reported by [`Tape::backward`] when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad;
        let mut value = tensor;
        value.grad = None;
        self.push(NodeOp::Leaf, Vec::new(), value, requires_grad, Saved::None)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
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

    /// Batch mean and biased variance computed by a train-mode batchnorm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes.get(v.0)?.saved {
            Saved::BatchNorm { mean, var, .. } if !mean.is_empty() => Some((mean, var)),
            _ => None,
        }
    }

    fn push(
        &mut self,
        op: NodeOp<T>,
        inputs: Vec<Var>,
        value: Tensor<T>,
        requires_grad: bool,
        saved: Saved<T>,
    ) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_vars(&self, inputs: &[Var]) -> Result<()> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownVar(v.0));
            }
        }
        Ok(())
    }

    /// Runs `op` on `inputs` and records the result.
    pub fn apply(&mut self, op: OpSpec<T>, inputs: &[Var]) -> Result<Var> {
        self.check_vars(inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let (value, saved) = self.forward(&op, inputs, requires_grad)?;
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        Ok(self.push(NodeOp::Op(op), inputs.to_vec(), value, requires_grad, saved))
    }

    fn arity(op: &OpSpec<T>, inputs: &[Var]) -> Result<()> {
        let ok = match op {
            OpSpec::MatMul | OpSpec::Add | OpSpec::Sub | OpSpec::Mul | OpSpec::AddBias => {
                inputs.len() == 2
            }
            OpSpec::Conv1d { .. } => inputs.len() == 2 || inputs.len() == 3,
            OpSpec::BatchNorm1d { .. } => inputs.len() == 3,
            OpSpec::Concat { .. } => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(shape_err(op.name(), format!("wrong input count {}", inputs.len())))
        }
    }

    fn forward(
        &self,
        op: &OpSpec<T>,
        inputs: &[Var],
        requires_grad: bool,
    ) -> Result<(Tensor<T>, Saved<T>)> {
        Self::arity(op, inputs)?;
        let x = self.value(inputs[0]);
        let name = op.name();
        let none = |t: Tensor<T>| Ok((t, Saved::None));
        match op {
            OpSpec::MatMul => {
                let b = self.value(inputs[1]);
                if x.rank() != 2 || b.rank() != 2 || x.shape()[1] != b.shape()[0] {
                    return Err(shape_err(name, format!("{:?} x {:?}", x.shape(), b.shape())));
                }
                let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
                let mut out = vec![T::zero(); m * n];
                gemm(m, k, n, x.data(), false, b.data(), false, T::zero(), &mut out);
                none(Tensor::new(vec![m, n], out)?)
            }
            OpSpec::Conv1d { padding, dilation } => {
                let w = self.value(inputs[1]);
                let bias = inputs.get(2).map(|&v| self.value(v));
                conv1d_forward(x, w, bias, *padding, *dilation, requires_grad)
            }
            OpSpec::Relu => none(map(x, |v| v.max(T::zero()))),
            OpSpec::Tanh => none(map(x, |v| v.tanh())),
            OpSpec::BatchNorm1d { eps, running } => {
                let gamma = self.value(inputs[1]);
                let beta = self.value(inputs[2]);
                batchnorm_forward(x, gamma, beta, *eps, running.as_ref())
            }
            OpSpec::Softmax => {
                last_axis(name, x)?;
                none(softmax_rows(x, false))
            }
            OpSpec::LogSoftmax => {
                last_axis(name, x)?;
                none(softmax_rows(x, true))
            }
            OpSpec::Mean => {
                if x.is_empty() {
                    return Err(shape_err(name, "empty input"));
                }
                let s: T = x.data().iter().copied().sum();
                none(Tensor::scalar(s / T::from_count(x.len())))
            }
            OpSpec::MeanLast | OpSpec::SumLast => {
                let l = last_axis(name, x)?;
                let scale = if matches!(op, OpSpec::MeanLast) {
                    T::one() / T::from_count(l)
                } else {
                    T::one()
                };
                let data = x
                    .data()
                    .chunks(l)
                    .map(|row| row.iter().copied().sum::<T>() * scale)
                    .collect();
                none(Tensor::new(x.shape()[..x.rank() - 1].to_vec(), data)?)
            }
            OpSpec::ExpandLast(l) => {
                if *l == 0 {
                    return Err(shape_err(name, "zero length"));
                }
                let mut shape = x.shape().to_vec();
                shape.push(*l);
                let data = x
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat(v).take(*l))
                    .collect();
                none(Tensor::new(shape, data)?)
            }
            OpSpec::Concat { axis } => {
                let parts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                none(concat_forward(&parts, *axis)?)
            }
            OpSpec::L2Normalize => {
                let l = last_axis(name, x)?;
                let eps = l2_eps::<T>();
                let mut out = x.data().to_vec();
                let mut norms = Vec::with_capacity(x.len() / l);
                for row in out.chunks_mut(l) {
                    let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let denom = norm.max(eps);
                    for v in row.iter_mut() {
                        *v = *v / denom;
                    }
                    norms.push(norm);
                }
                Ok((Tensor::new(x.shape().to_vec(), out)?, Saved::Norms(norms)))
            }
            OpSpec::Add | OpSpec::Sub | OpSpec::Mul => {
                let y = self.value(inputs[1]);
                if x.shape() != y.shape() {
                    return Err(shape_err(name, format!("{:?} vs {:?}", x.shape(), y.shape())));
                }
                let f: fn(T, T) -> T = match op {
                    OpSpec::Add => |a, b| a + b,
                    OpSpec::Sub => |a, b| a - b,
                    _ => |a, b| a * b,
                };
                let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
                none(Tensor::new(x.shape().to_vec(), data)?)
            }
            OpSpec::AddBias => {
                let b = self.value(inputs[1]);
                if x.rank() < 2 || b.rank() != 1 || b.len() != x.shape()[1] {
                    return Err(shape_err(name, format!("{:?} + {:?}", x.shape(), b.shape())));
                }
                let c = x.shape()[1];
                let inner: usize = x.shape()[2..].iter().product();
                let mut out = x.data().to_vec();
                for (i, v) in out.iter_mut().enumerate() {
                    *v = *v + b.data()[(i / inner) % c];
                }
                none(Tensor::new(x.shape().to_vec(), out)?)
            }
            OpSpec::MulScalar(s) => none(map(x, |v| v * *s)),
            OpSpec::AddScalar(s) => none(map(x, |v| v + *s)),
            OpSpec::Square => none(map(x, |v| v * v)),
            OpSpec::Sqrt => none(map(x, |v| v.sqrt())),
            OpSpec::ClampMin(lo) => none(map(x, |v| v.max(*lo))),
            OpSpec::Transpose => {
                if x.rank() != 2 {
                    return Err(shape_err(name, format!("rank {}", x.rank())));
                }
                let (r, c) = (x.shape()[0], x.shape()[1]);
                none(Tensor::new(vec![c, r], transpose2(r, c, x.data()))?)
            }
            OpSpec::SliceRows { start, end } => {
                if x.rank() == 0 || start >= end || *end > x.shape()[0] {
                    return Err(shape_err(
                        name,
                        format!("rows {start}..{end} of {:?}", x.shape()),
                    ));
                }
                let row: usize = x.shape()[1..].iter().product();
                let mut shape = x.shape().to_vec();
                shape[0] = end - start;
                none(Tensor::new(shape, x.data()[start * row..end * row].to_vec())?)
            }
            OpSpec::NllMean { labels } => {
                let (r, c) = rows_classes(name, x, labels)?;
                let s: T = (0..r).map(|i| x.data()[i * c + labels[i]]).sum();
                none(Tensor::scalar(-s / T::from_count(r)))
            }
            OpSpec::AamMargin { labels, margin } => {
                let (r, c) = rows_classes(name, x, labels)?;
                let mut out = x.data().to_vec();
                let m = *margin;
                for i in 0..r {
                    let v = &mut out[i * c + labels[i]];
                    *v = aam_phi(*v, m).0;
                }
                none(Tensor::new(x.shape().to_vec(), out)?)
            }
            OpSpec::GradReverse { lambda } => {
                if !(*lambda > T::zero()) {
                    return Err(AutodiffError::NonPositiveLambda(lambda.to_f64_lossy()));
                }
                none(x.clone())
            }
        }
    }

    /// Reverse sweep from a scalar `loss`. Returns a gradient for every leaf
    /// that requires one (zeros for leaves the loss does not depend on) and
    /// clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        self.check_vars(&[loss])?;
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        } else {
            log::warn!("backward: loss does not depend on any gradient-requiring leaf");
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let NodeOp::Op(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let input_grads = self.backward_node(node, op, &g)?;
            for (var, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&ig) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, NodeOp::Leaf) && node.requires_grad {
                let shape = node.value.shape().to_vec();
                let data = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); numel(&shape)]);
                out.by_leaf.insert(Var(idx), Tensor::new(shape, data)?);
            }
        }
        self.nodes.clear();
        Ok(out)
    }

    fn backward_node(&self, node: &Node<T>, op: &OpSpec<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = self.value(node.inputs[0]);
        let y = &node.value;
        let wants = |i: usize| self.nodes[node.inputs[i].0].requires_grad;
        let elementwise = |f: &dyn Fn(usize) -> T| -> Vec<Option<Vec<T>>> {
            vec![Some((0..g.len()).map(f).collect())]
        };
        Ok(match op {
            OpSpec::MatMul => {
                let b = self.value(node.inputs[1]);
                let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
                let da = wants(0).then(|| {
                    let mut da = vec![T::zero(); m * k];
                    gemm(m, n, k, g, false, b.data(), true, T::zero(), &mut da);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, m, n, x.data(), true, g, false, T::zero(), &mut db);
                    db
                });
                vec![da, db]
            }
            OpSpec::Conv1d { padding, dilation } => {
                let w = self.value(node.inputs[1]);
                let Saved::Cols(cols) = &node.saved else {
                    unreachable!("conv1d saves its column buffer")
                };
                conv1d_backward(
                    x,
                    w,
                    cols,
                    g,
                    *padding,
                    *dilation,
                    [wants(0), wants(1), node.inputs.len() == 3 && wants(2)],
                )
            }
            OpSpec::Relu => elementwise(&|i| {
                if x.data()[i] > T::zero() {
                    g[i]
                } else {
                    T::zero()
                }
            }),
            OpSpec::Tanh => elementwise(&|i| g[i] * (T::one() - y.data()[i] * y.data()[i])),
            OpSpec::BatchNorm1d { running, .. } => {
                let gamma = self.value(node.inputs[1]);
                let Saved::BatchNorm { xhat, inv_std, .. } = &node.saved else {
                    unreachable!("batchnorm saves normalized input")
                };
                batchnorm_backward(x.shape(), gamma.data(), xhat, inv_std, g, running.is_none())
            }
            OpSpec::Softmax => {
                let l = *x.shape().last().unwrap();
                let mut dx = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(l).zip(g.chunks(l)).zip(y.data().chunks(l)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..l {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(dx)]
            }
            OpSpec::LogSoftmax => {
                let l = *x.shape().last().unwrap();
                let mut dx = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(l).zip(g.chunks(l)).zip(y.data().chunks(l)) {
                    let total: T = gr.iter().copied().sum();
                    for j in 0..l {
                        dr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                vec![Some(dx)]
            }
            OpSpec::Mean => {
                let v = g[0] / T::from_count(x.len());
                vec![Some(vec![v; x.len()])]
            }
            OpSpec::MeanLast | OpSpec::SumLast => {
                let l = *x.shape().last().unwrap();
                let scale = if matches!(op, OpSpec::MeanLast) {
                    T::one() / T::from_count(l)
                } else {
                    T::one()
                };
                vec![Some(
                    g.iter()
                        .flat_map(|&v| std::iter::repeat(v * scale).take(l))
                        .collect(),
                )]
            }
            OpSpec::ExpandLast(l) => {
                vec![Some(g.chunks(*l).map(|c| c.iter().copied().sum()).collect())]
            }
            OpSpec::Concat { axis } => {
                let parts: Vec<&Tensor<T>> = node.inputs.iter().map(|&v| self.value(v)).collect();
                concat_backward(&parts, *axis, g)
                    .into_iter()
                    .enumerate()
                    .map(|(i, d)| wants(i).then_some(d))
                    .collect()
            }
            OpSpec::L2Normalize => {
                let l = *x.shape().last().unwrap();
                let Saved::Norms(norms) = &node.saved else {
                    unreachable!("l2_normalize saves row norms")
                };
                let eps = l2_eps::<T>();
                let mut dx = vec![T::zero(); g.len()];
                for (r, ((dr, gr), yr)) in dx
                    .chunks_mut(l)
                    .zip(g.chunks(l))
                    .zip(y.data().chunks(l))
                    .enumerate()
                {
                    let norm = norms[r];
                    if norm > eps {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..l {
                            dr[j] = (gr[j] - yr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..l {
                            dr[j] = gr[j] / eps;
                        }
                    }
                }
                vec![Some(dx)]
            }
            OpSpec::Add => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.to_vec())],
            OpSpec::Sub => vec![
                wants(0).then(|| g.to_vec()),
                wants(1).then(|| g.iter().map(|&v| -v).collect()),
            ],
            OpSpec::Mul => {
                let b = self.value(node.inputs[1]);
                vec![
                    wants(0).then(|| g.iter().zip(b.data()).map(|(&a, &c)| a * c).collect()),
                    wants(1).then(|| g.iter().zip(x.data()).map(|(&a, &c)| a * c).collect()),
                ]
            }
            OpSpec::AddBias => {
                let c = x.shape()[1];
                let inner: usize = x.shape()[2..].iter().product();
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); c];
                    for (i, &v) in g.iter().enumerate() {
                        let ch = (i / inner) % c;
                        db[ch] = db[ch] + v;
                    }
                    db
                });
                vec![wants(0).then(|| g.to_vec()), db]
            }
            OpSpec::MulScalar(s) => elementwise(&|i| g[i] * *s),
            OpSpec::AddScalar(_) => vec![Some(g.to_vec())],
            OpSpec::Square => {
                let two = T::from_f64_lossy(2.0);
                elementwise(&|i| g[i] * two * x.data()[i])
            }
            OpSpec::Sqrt => {
                let two = T::from_f64_lossy(2.0);
                elementwise(&|i| g[i] / (two * y.data()[i]))
            }
            OpSpec::ClampMin(lo) => elementwise(&|i| {
                if x.data()[i] > *lo {
                    g[i]
                } else {
                    T::zero()
                }
            }),
            OpSpec::Transpose => {
                let (r, c) = (x.shape()[0], x.shape()[1]);
                vec![Some(transpose2(c, r, g))]
            }
            OpSpec::SliceRows { start, end } => {
                let row: usize = x.shape()[1..].iter().product();
                let mut dx = vec![T::zero(); x.len()];
                dx[start * row..end * row].copy_from_slice(g);
                vec![Some(dx)]
            }
            OpSpec::NllMean { labels } => {
                let c = x.shape()[1];
                let r = labels.len();
                let mut dx = vec![T::zero(); x.len()];
                let v = -g[0] / T::from_count(r);
                for (i, &lab) in labels.iter().enumerate() {
                    dx[i * c + lab] = v;
                }
                vec![Some(dx)]
            }
            OpSpec::AamMargin { labels, margin } => {
                let c = x.shape()[1];
                let mut dx = g.to_vec();
                for (i, &lab) in labels.iter().enumerate() {
                    let k = i * c + lab;
                    dx[k] = dx[k] * aam_phi(x.data()[k], *margin).1;
                }
                vec![Some(dx)]
            }
            OpSpec::GradReverse { lambda } => elementwise(&|i| -*lambda * g[i]),
        })
    }
}

fn l2_eps<T: Real>() -> T {
    T::from_f64_lossy(1e-12)
}

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        .expect("same shape")
}

fn last_axis<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<usize> {
    match x.shape().last() {
        Some(&l) if l > 0 => Ok(l),
        _ => Err(shape_err(op, format!("needs a non-empty last axis, got {:?}", x.shape()))),
    }
}

fn rows_classes<T: Real>(op: &'static str, x: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    if x.rank() != 2 || x.shape()[0] != labels.len() || x.shape()[0] == 0 {
        return Err(shape_err(
            op,
            format!("{:?} with {} labels", x.shape(), labels.len()),
        ));
    }
    let c = x.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(AutodiffError::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }
    Ok((x.shape()[0], c))
}

fn transpose2<T: Real>(r: usize, c: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

fn softmax_rows<T: Real>(x: &Tensor<T>, log: bool) -> Tensor<T> {
    let l = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(l) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = *v - max;
            total = total + v.exp();
        }
        if log {
            let lse = total.ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        } else {
            for v in row.iter_mut() {
                *v = v.exp() / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// `cos(t + m)` and its derivative with respect to `cos t`.
pub(crate) fn aam_phi<T: Real>(cos: T, m: T) -> (T, T) {
    let pi = T::from_f64_lossy(std::f64::consts::PI);
    let threshold = (pi - m).cos();
    if cos <= threshold {
        return (cos - m * m.sin(), T::one());
    }
    let c = cos.min(T::one()).max(-T::one());
    let sin = (T::one() - c * c).max(T::zero()).sqrt();
    let phi = c * m.cos() - sin * m.sin();
    let floor = T::from_f64_lossy(1e-6);
    let dphi = m.cos() + m.sin() * c / sin.max(floor);
    (phi, dphi)
}

fn concat_forward<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts[0];
    if axis >= first.rank() {
        return Err(shape_err("concat", format!("axis {axis} of {:?}", first.shape())));
    }
    let mut total = 0;
    for p in parts {
        let same = p.rank() == first.rank()
            && p
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?} along axis {axis}", p.shape(), first.shape()),
            ));
        }
        total += p.shape()[axis];
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(shape, out)
}

fn concat_backward<T: Real>(parts: &[&Tensor<T>], axis: usize, g: &[T]) -> Vec<Vec<T>> {
    let first = parts[0];
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut out: Vec<Vec<T>> = parts.iter().map(|p| Vec::with_capacity(p.len())).collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (p, d) in parts.iter().zip(out.iter_mut()) {
            let block = p.shape()[axis] * inner;
            d.extend_from_slice(&g[pos..pos + block]);
            pos += block;
        }
    }
    out
}

fn conv1d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
    dilation: usize,
    save: bool,
) -> Result<(Tensor<T>, Saved<T>)> {
    if x.rank() != 3 || w.rank() != 3 || x.shape()[1] != w.shape()[1] || dilation == 0 {
        return Err(shape_err(
            "conv1d",
            format!("input {:?} weight {:?} dilation {dilation}", x.shape(), w.shape()),
        ));
    }
    let (n, ci, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(shape_err("conv1d", format!("bias {:?} for {co} channels", b.shape())));
        }
    }
    let span = dilation * (k.max(1) - 1) + 1;
    if k == 0 || t + 2 * padding < span {
        return Err(shape_err(
            "conv1d",
            format!("kernel span {span} does not fit length {t} with padding {padding}"),
        ));
    }
    let tout = t + 2 * padding - span + 1;
    let ck = ci * k;
    let mut cols = vec![T::zero(); n * ck * tout];
    for s in 0..n {
        let xs = &x.data()[s * ci * t..(s + 1) * ci * t];
        let cs = &mut cols[s * ck * tout..(s + 1) * ck * tout];
        im2col(xs, ci, t, k, padding, dilation, tout, cs);
    }
    let mut out = vec![T::zero(); n * co * tout];
    for s in 0..n {
        let os = &mut out[s * co * tout..(s + 1) * co * tout];
        if let Some(b) = bias {
            for (row, &bv) in os.chunks_mut(tout).zip(b.data()) {
                row.fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(
            co,
            ck,
            tout,
            w.data(),
            false,
            &cols[s * ck * tout..(s + 1) * ck * tout],
            false,
            beta,
            os,
        );
    }
    let saved = if save { Saved::Cols(cols) } else { Saved::None };
    Ok((Tensor::new(vec![n, co, tout], out)?, saved))
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    ci: usize,
    t: usize,
    k: usize,
    padding: usize,
    dilation: usize,
    tout: usize,
    cols: &mut [T],
) {
    for c in 0..ci {
        let xr = &x[c * t..(c + 1) * t];
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * tout..(c * k + kk + 1) * tout];
            let offset = kk * dilation;
            for (j, v) in row.iter_mut().enumerate() {
                let src = j + offset;
                *v = if src >= padding && src - padding < t {
                    xr[src - padding]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    cols: &[T],
    g: &[T],
    padding: usize,
    dilation: usize,
    wants: [bool; 3],
) -> Vec<Option<Vec<T>>> {
    let (n, ci, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ck = ci * k;
    let tout = g.len() / (n * co);
    let dw = wants[1].then(|| {
        let mut dw = vec![T::zero(); co * ck];
        for s in 0..n {
            gemm(
                co,
                tout,
                ck,
                &g[s * co * tout..(s + 1) * co * tout],
                false,
                &cols[s * ck * tout..(s + 1) * ck * tout],
                true,
                T::one(),
                &mut dw,
            );
        }
        dw
    });
    let db = wants[2].then(|| {
        let mut db = vec![T::zero(); co];
        for (i, row) in g.chunks(tout).enumerate() {
            db[i % co] = db[i % co] + row.iter().copied().sum::<T>();
        }
        db
    });
    let dx = wants[0].then(|| {
        let mut dx = vec![T::zero(); n * ci * t];
        let mut dcols = vec![T::zero(); ck * tout];
        for s in 0..n {
            gemm(
                ck,
                co,
                tout,
                w.data(),
                true,
                &g[s * co * tout..(s + 1) * co * tout],
                false,
                T::zero(),
                &mut dcols,
            );
            let dxs = &mut dx[s * ci * t..(s + 1) * ci * t];
            for c in 0..ci {
                for kk in 0..k {
                    let row = &dcols[(c * k + kk) * tout..(c * k + kk + 1) * tout];
                    let offset = kk * dilation;
                    for (j, &v) in row.iter().enumerate() {
                        let src = j + offset;
                        if src >= padding && src - padding < t {
                            let d = &mut dxs[c * t + src - padding];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
        dx
    });
    vec![dx, dw, db]
}

/// Channel-major index helper for `[n, c]` / `[n, c, l]` layouts.
fn bn_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [n, c] => Some((*n, *c, 1)),
        [n, c, l] => Some((*n, *c, *l)),
        _ => None,
    }
}

fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    running: Option<&(Vec<T>, Vec<T>)>,
) -> Result<(Tensor<T>, Saved<T>)> {
    let Some((n, c, l)) = bn_layout(x.shape()) else {
        return Err(shape_err("batchnorm1d", format!("input {:?}", x.shape())));
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            "batchnorm1d",
            format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    let m = n * l;
    let (mean, var) = match running {
        Some((rm, rv)) => {
            if rm.len() != c || rv.len() != c {
                return Err(shape_err("batchnorm1d", "running statistics size"));
            }
            (rm.clone(), rv.clone())
        }
        None => {
            if m < 2 {
                return Err(shape_err("batchnorm1d", "train mode needs at least 2 values per channel"));
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    let row = &x.data()[(s * c + ch) * l..(s * c + ch + 1) * l];
                    mean[ch] = mean[ch] + row.iter().copied().sum::<T>();
                }
            }
            let mf = T::from_count(m);
            for v in mean.iter_mut() {
                *v = *v / mf;
            }
            for s in 0..n {
                for ch in 0..c {
                    let row = &x.data()[(s * c + ch) * l..(s * c + ch + 1) * l];
                    let mu = mean[ch];
                    var[ch] = var[ch] + row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            for v in var.iter_mut() {
                *v = *v / mf;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for (i, &v) in x.data().iter().enumerate() {
        let ch = (i / l) % c;
        let h = (v - mean[ch]) * inv_std[ch];
        xhat[i] = h;
        out[i] = gamma.data()[ch] * h + beta.data()[ch];
    }
    let (mean, var) = if running.is_some() {
        (Vec::new(), Vec::new())
    } else {
        (mean, var)
    };
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        Saved::BatchNorm {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

fn batchnorm_backward<T: Real>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    g: &[T],
    train: bool,
) -> Vec<Option<Vec<T>>> {
    let (n, c, l) = bn_layout(shape).expect("validated in forward");
    let m = T::from_count(n * l);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, &gv) in g.iter().enumerate() {
        let ch = (i / l) % c;
        dgamma[ch] = dgamma[ch] + gv * xhat[i];
        dbeta[ch] = dbeta[ch] + gv;
    }
    let mut dx = vec![T::zero(); g.len()];
    for (i, &gv) in g.iter().enumerate() {
        let ch = (i / l) % c;
        let scale = gamma[ch] * inv_std[ch];
        dx[i] = if train {
            // dxhat = g * gamma; sums over the channel are dbeta and dgamma
            scale * (gv - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
        } else {
            scale * gv
        };
    }
    vec![Some(dx), Some(dgamma), Some(dbeta)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_by_identity_is_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let i = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let y = tape.apply(OpSpec::MatMul, &[a, i]).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn relu_softmax_and_log_softmax_definitions() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1., 0., 2.]));
        let r = tape.apply(OpSpec::Relu, &[x]).unwrap();
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
        let z = tape.constant(t(&[2], &[0., 0.]));
        let s = tape.apply(OpSpec::Softmax, &[z]).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        let ls = tape.apply(OpSpec::LogSoftmax, &[z]).unwrap();
        for v in tape.value(ls).data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_rejects_bad_inner_dims() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            tape.apply(OpSpec::MatMul, &[a, b]),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv1d_rejects_kernel_that_does_not_fit() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4]));
        let w = tape.constant(Tensor::zeros(&[3, 2, 3]));
        let op = OpSpec::Conv1d { padding: 0, dilation: 2 };
        assert!(tape.apply(op, &[x, w]).is_err());
        let ok = OpSpec::Conv1d { padding: 1, dilation: 2 };
        let y = tape.apply(ok, &[x, w]).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 2]);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[1], &[-1.0]).unwrap());
        assert_eq!(
            tape.apply(OpSpec::Sqrt, &[x]),
            Err(AutodiffError::NonFinite { op: "sqrt" })
        );
    }

    #[test]
    fn mean_of_square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.]).with_grad());
        let sq = tape.apply(OpSpec::Square, &[x]).unwrap();
        let loss = tape.apply(OpSpec::Mean, &[sq]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        assert!(tape.is_empty(), "backward clears the tape");
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]).with_grad());
        let w = tape.leaf(t(&[3], &[1., 2., 3.]).with_grad());
        let loss = tape.apply(OpSpec::Mean, &[x]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0., 0., 0.]);
    }

    #[test]
    fn backward_requires_scalar_and_nonempty_tape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1., 2.]).with_grad());
        assert!(matches!(tape.backward(x), Err(AutodiffError::NotScalar(_))));
        let mut empty = Tape::<f64>::new();
        assert!(matches!(empty.backward(Var(0)), Err(AutodiffError::EmptyTape)));
    }

    #[test]
    fn grad_reverse_is_identity_forward_and_negates_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.5, -2.0]).with_grad());
        let r = tape
            .apply(OpSpec::GradReverse { lambda: 0.7 }, &[x])
            .unwrap();
        assert_eq!(tape.value(r).data(), tape.value(x).data());
        // loss = sum(r * [2, -4]) gives upstream g = [2, -4]
        let c = tape.constant(t(&[2], &[2., -4.]));
        let prod = tape.apply(OpSpec::Mul, &[r, c]).unwrap();
        let s = tape.apply(OpSpec::SumLast, &[prod]).unwrap();
        let grads = tape.backward(s).unwrap();
        let gx = grads.get(x).unwrap().data();
        assert_eq!(gx, &[-0.7 * 2.0, -0.7 * -4.0]);
    }

    #[test]
    fn grad_reverse_rejects_non_positive_lambda() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        for lambda in [0.0, -1.0] {
            assert!(matches!(
                tape.apply(OpSpec::GradReverse { lambda }, &[x]),
                Err(AutodiffError::NonPositiveLambda(_))
            ));
        }
    }

    #[test]
    fn nll_rejects_out_of_range_label() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape
            .apply(OpSpec::NllMean { labels: vec![0, 3] }, &[x])
            .unwrap_err();
        assert_eq!(err, AutodiffError::LabelOutOfRange { label: 3, classes: 3 });
    }

    #[test]
    fn batchnorm_train_normalizes_and_reports_stats() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4, 1], &[1., 2., 3., 4.]));
        let g = tape.constant(t(&[1], &[1.]));
        let b = tape.constant(t(&[1], &[0.]));
        let y = tape
            .apply(OpSpec::BatchNorm1d { eps: 0.0, running: None }, &[x, g, b])
            .unwrap();
        let out = tape.value(y).data();
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let (m, v) = tape.batch_stats(y).unwrap();
        assert_eq!(m, &[2.5]);
        assert_eq!(v, &[1.25]);
    }

    #[test]
    fn aam_phi_matches_closed_form() {
        let (phi, _) = aam_phi(0.5f64, 0.2);
        let want = (0.5f64.acos() + 0.2).cos();
        assert!((phi - want).abs() < 1e-12);
        // past pi - m the fallback is linear in cos
        let (phi, d) = aam_phi(-0.999f64, 0.2);
        assert!((phi - (-0.999 - 0.2 * 0.2f64.sin())).abs() < 1e-12);
        assert_eq!(d, 1.0);
    }
}
