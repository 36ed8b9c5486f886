//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! already topologically sorted. [`Graph::backward`] walks it in reverse and
//! leaves gradients on the leaves created with `requires_grad`. Intermediate
//! gradients are released as soon as they have been propagated.

use crate::error::{dim_err, Result, TensorError};
use crate::kernels::{self, ConvGeometry, InstanceNormCache, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Mean,
}

enum Op<S> {
    Leaf,
    Unary {
        op: UnaryOp,
        x: Var,
    },
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: S,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: ConvGeometry,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    AvgPool2 {
        x: Var,
    },
    Reduce {
        x: Var,
        axes: Vec<usize>,
        scale: S,
    },
    Broadcast {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    MatmulNt {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        n: usize,
        k: usize,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: InstanceNormCache<S>,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary {
                op: UnaryOp::Relu, ..
            } => "relu",
            Op::Unary {
                op: UnaryOp::Sigmoid,
                ..
            } => "sigmoid",
            Op::Unary {
                op: UnaryOp::Square,
                ..
            } => "square",
            Op::Binary {
                op: BinaryOp::Add, ..
            } => "add",
            Op::Binary {
                op: BinaryOp::Sub, ..
            } => "sub",
            Op::Binary {
                op: BinaryOp::Mul, ..
            } => "mul",
            Op::Scale { .. } => "scale",
            Op::Conv2d { .. } => "conv2d",
            Op::Dense { .. } => "dense",
            Op::Upsample { .. } => "upsample_nearest",
            Op::AvgPool2 { .. } => "avg_pool2",
            Op::Reduce { .. } => "reduce",
            Op::Broadcast { .. } => "broadcast",
            Op::Reshape { .. } => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::MatmulNt { .. } => "matmul_nt",
            Op::InstanceNorm { .. } => "instance_norm",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::Upsample { x, .. }
            | Op::AvgPool2 { x }
            | Op::Reduce { x, .. }
            | Op::Broadcast { x, .. }
            | Op::Reshape { x }
            | Op::Narrow { x, .. } => vec![x],
            Op::Binary { a, b, .. } | Op::MatmulNt { a, b, .. } => vec![a, b],
            Op::Conv2d { x, w, b, .. } => std::iter::once(x).chain(Some(w)).chain(b).collect(),
            Op::Dense { x, w, b, .. } => vec![x, w, b],
            Op::InstanceNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Computation tape for one forward/backward pass.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    backward_done: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf value.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient is kept for it.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: &[usize], data: Vec<S>, op: Op<S>) -> Result<Var> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::Numeric {
                op: op.name(),
                index,
            });
        }
        let requires_grad = op.inputs().iter().any(|&p| self.nodes[p.0].requires_grad);
        let value = Tensor::from_vec(shape, data)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ----- elementwise -----

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = match op {
            UnaryOp::Relu => t.data().iter().map(|&v| v.max(S::zero())).collect(),
            UnaryOp::Sigmoid => t.data().iter().map(|&v| sigmoid(v)).collect(),
            UnaryOp::Square => t.data().iter().map(|&v| v * v).collect(),
        };
        self.push(&shape, data, Op::Unary { op, x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    /// Elementwise binary op. Shapes must match exactly, except that a
    /// one-element operand is broadcast against the other.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: S, y: S| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let (shape, data): (Vec<usize>, Vec<S>) = if ta.shape() == tb.shape() {
            (
                ta.shape().to_vec(),
                ta.data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            )
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            (
                ta.shape().to_vec(),
                ta.data().iter().map(|&x| f(x, y)).collect(),
            )
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            (
                tb.shape().to_vec(),
                tb.data().iter().map(|&y| f(x, y)).collect(),
            )
        } else {
            return dim_err(format!(
                "elementwise op on shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            ));
        };
        self.push(&shape, data, Op::Binary { op, a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Multiply by a constant that is not part of the differentiated graph.
    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|&v| v * factor).collect();
        self.push(&shape, data, Op::Scale { x, factor })
    }

    // ----- layers -----

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geo.out_channels] {
                return dim_err(format!(
                    "conv2d bias shape {:?}, expected [{}]",
                    self.shape(b),
                    geo.out_channels
                ));
            }
        }
        let data = kernels::conv2d_forward(
            &geo,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        self.push(&geo.output_shape(), data, Op::Conv2d { x, w, b, geo })
    }

    /// `x·w + b` for `x: N×D`, `w: D×M`, `b: M`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return dim_err(format!(
                "dense with input {xs:?}, weights {ws:?}, bias {bs:?}"
            ));
        }
        let (rows, inner, cols) = (xs[0], xs[1], ws[1]);
        let data = kernels::dense_forward(
            rows,
            inner,
            cols,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        self.push(
            &[rows, cols],
            data,
            Op::Dense {
                x,
                w,
                b,
                rows,
                inner,
                cols,
            },
        )
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return dim_err(format!("upsample wants NCHW, got {shape:?}"));
        }
        if factor == 0 {
            return dim_err("upsample factor must be at least 1");
        }
        let data = kernels::upsample_nearest_forward(&shape, self.value(x).data(), factor);
        let out = [shape[0], shape[1], shape[2] * factor, shape[3] * factor];
        self.push(&out, data, Op::Upsample { x, factor })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || shape[2] < 2 || shape[3] < 2 {
            return dim_err(format!(
                "avg_pool2 wants NCHW with H, W >= 2, got {shape:?}"
            ));
        }
        let data = kernels::avg_pool2_forward(&shape, self.value(x).data());
        self.push(
            &[shape[0], shape[1], shape[2] / 2, shape[3] / 2],
            data,
            Op::AvgPool2 { x },
        )
    }

    /// Instance normalization of `x: N×C×H×W` with affine `gamma`, `beta: N×C`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return dim_err(format!("instance_norm wants NCHW, got {shape:?}"));
        }
        if shape[2] * shape[3] == 0 {
            return dim_err("instance_norm over an empty spatial extent");
        }
        let nc = [shape[0], shape[1]];
        if self.shape(gamma) != nc || self.shape(beta) != nc {
            return dim_err(format!(
                "instance_norm affine shapes {:?}/{:?}, expected {nc:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        if !(eps > S::zero()) {
            return Err(TensorError::Contract(
                "instance_norm eps must be positive".into(),
            ));
        }
        let (data, cache) = kernels::instance_norm_forward(
            &shape,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        self.push(
            &shape,
            data,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                cache,
            },
        )
    }

    // ----- reductions and shape -----

    pub fn reduce(&mut self, x: Var, op: ReduceOp, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (out_shape, mut data) = kernels::sum_axes(&shape, self.value(x).data(), axes)?;
        let scale = match op {
            ReduceOp::Sum => S::one(),
            ReduceOp::Mean => {
                let count: usize = axes.iter().map(|&a| shape[a]).product();
                S::one() / S::from_usize(count).expect("count fits the scalar type")
            }
        };
        if op == ReduceOp::Mean {
            data.iter_mut().for_each(|v| *v = *v * scale);
        }
        self.push(
            &out_shape,
            data,
            Op::Reduce {
                x,
                axes: axes.to_vec(),
                scale,
            },
        )
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, ReduceOp::Sum, axes)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, ReduceOp::Mean, axes)
    }

    /// Reduce every axis down to a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum(x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean(x, &axes)
    }

    /// Inverse of a reduction: repeat `x` along `axes` to reach `shape`.
    /// `x` must have exactly the shape left by removing `axes` from `shape`.
    pub fn broadcast(&mut self, x: Var, axes: &[usize], shape: &[usize]) -> Result<Var> {
        let expected = kernels::reduced_shape(shape, axes)?;
        if self.shape(x) != expected.as_slice() {
            return dim_err(format!(
                "broadcast of {:?} over axes {axes:?} to {shape:?} needs source shape {expected:?}",
                self.shape(x)
            ));
        }
        let data = kernels::broadcast_axes(shape, axes, self.value(x).data());
        self.push(
            shape,
            data,
            Op::Broadcast {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let data = t.into_vec();
        self.push(shape, data, Op::Reshape { x })
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return dim_err(format!("narrow({axis}, {start}, {len}) on shape {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out = shape.clone();
        out[axis] = len;
        self.push(&out, data, Op::Narrow { x, axis, start })
    }

    /// Batched `a·bᵀ` for `a: B×M×K` and `b: B×N×K`, giving `B×M×N`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return dim_err(format!("matmul_nt with shapes {sa:?} and {sb:?}"));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let data = kernels::matmul_nt(batch, m, n, k, self.value(a).data(), self.value(b).data());
        self.push(
            &[batch, m, n],
            data,
            Op::MatmulNt {
                a,
                b,
                batch,
                m,
                n,
                k,
            },
        )
    }

    // ----- backward -----

    /// Populate gradients of the scalar `root` on every `requires_grad` leaf.
    ///
    /// Calling it a second time without [`Graph::reset_grads`] is an error.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::State(
                "backward already ran; call reset_grads first".into(),
            ));
        }
        if root.0 >= self.nodes.len() {
            return Err(TensorError::Contract("root is not on this graph".into()));
        }
        if self.value(root).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            for (parent, contribution) in self.local_grads(i, &grad) {
                accumulate(&mut self.grads[parent.0], contribution);
            }
        }
        Ok(())
    }

    /// Clear gradients so that [`Graph::backward`] may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last backward root with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::from_vec(self.shape(v), g.clone()).ok()
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `i` for each parent that needs one.
    fn local_grads(&self, i: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Unary { op, x } => {
                let xv = self.value(x).data();
                let d = match op {
                    UnaryOp::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                        .collect(),
                    UnaryOp::Sigmoid => node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &g)| g * y * (S::one() - y))
                        .collect(),
                    UnaryOp::Square => {
                        let two = S::one() + S::one();
                        g.iter().zip(xv).map(|(&g, &x)| g * two * x).collect()
                    }
                };
                out.push((x, d));
            }
            &Op::Binary { op, a, b } => {
                let (ta, tb) = (self.value(a), self.value(b));
                let n = g.len();
                let at = |t: &Tensor<S>, j: usize| {
                    if t.numel() == n {
                        t.data()[j]
                    } else {
                        t.data()[0]
                    }
                };
                let fold = |t: &Tensor<S>, d: Vec<S>| -> Vec<S> {
                    if t.numel() == n {
                        d
                    } else {
                        vec![d.into_iter().sum()]
                    }
                };
                if self.wants(a) {
                    let d: Vec<S> = match op {
                        BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                        BinaryOp::Mul => (0..n).map(|j| g[j] * at(tb, j)).collect(),
                    };
                    out.push((a, fold(ta, d)));
                }
                if self.wants(b) {
                    let d: Vec<S> = match op {
                        BinaryOp::Add => g.to_vec(),
                        BinaryOp::Sub => g.iter().map(|&v| -v).collect(),
                        BinaryOp::Mul => (0..n).map(|j| g[j] * at(ta, j)).collect(),
                    };
                    out.push((b, fold(tb, d)));
                }
            }
            &Op::Scale { x, factor } => out.push((x, g.iter().map(|&v| v * factor).collect())),
            &Op::Conv2d { x, w, b, geo } => {
                let want = (
                    self.wants(x),
                    self.wants(w),
                    b.is_some_and(|b| self.wants(b)),
                );
                let grads = kernels::conv2d_backward(
                    &geo,
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    want,
                );
                if let Some(d) = grads.input {
                    out.push((x, d));
                }
                if let Some(d) = grads.kernel {
                    out.push((w, d));
                }
                if let (Some(b), Some(d)) = (b, grads.bias) {
                    out.push((b, d));
                }
            }
            &Op::Dense {
                x,
                w,
                b,
                rows,
                inner,
                cols,
            } => {
                if self.wants(x) {
                    let mut d = vec![S::zero(); rows * inner];
                    // dX = dY·Wᵀ
                    S::gemm(
                        rows,
                        cols,
                        inner,
                        g,
                        cols,
                        1,
                        self.value(w).data(),
                        1,
                        cols,
                        S::zero(),
                        &mut d,
                        inner,
                        1,
                    );
                    out.push((x, d));
                }
                if self.wants(w) {
                    let mut d = vec![S::zero(); inner * cols];
                    // dW = Xᵀ·dY
                    S::gemm(
                        inner,
                        rows,
                        cols,
                        self.value(x).data(),
                        1,
                        inner,
                        g,
                        cols,
                        1,
                        S::zero(),
                        &mut d,
                        cols,
                        1,
                    );
                    out.push((w, d));
                }
                if self.wants(b) {
                    let mut d = vec![S::zero(); cols];
                    for row in g.chunks(cols) {
                        for (acc, &v) in d.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    out.push((b, d));
                }
            }
            &Op::Upsample { x, factor } => {
                out.push((
                    x,
                    kernels::upsample_nearest_backward(self.shape(x), g, factor),
                ));
            }
            &Op::AvgPool2 { x } => out.push((x, kernels::avg_pool2_backward(self.shape(x), g))),
            Op::Reduce { x, axes, scale } => {
                let mut d = kernels::broadcast_axes(self.shape(*x), axes, g);
                if *scale != S::one() {
                    d.iter_mut().for_each(|v| *v = *v * *scale);
                }
                out.push((*x, d));
            }
            Op::Broadcast { x, axes } => {
                let (_, d) = kernels::sum_axes(node.value.shape(), g, axes)
                    .expect("broadcast axes were validated in forward");
                out.push((*x, d));
            }
            &Op::Reshape { x } => out.push((x, g.to_vec())),
            &Op::Narrow { x, axis, start } => {
                let shape = self.shape(x);
                let len = node.value.shape()[axis];
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut d = vec![S::zero(); self.value(x).numel()];
                for o in 0..outer {
                    let dst = (o * shape[axis] + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                out.push((x, d));
            }
            &Op::MatmulNt {
                a,
                b,
                batch,
                m,
                n,
                k,
            } => {
                let (ta, tb) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    // dA = dC·B
                    let mut d = vec![S::zero(); batch * m * k];
                    for i in 0..batch {
                        S::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            n,
                            1,
                            &tb[i * n * k..],
                            k,
                            1,
                            S::zero(),
                            &mut d[i * m * k..],
                            k,
                            1,
                        );
                    }
                    out.push((a, d));
                }
                if self.wants(b) {
                    // dB = dCᵀ·A
                    let mut d = vec![S::zero(); batch * n * k];
                    for i in 0..batch {
                        S::gemm(
                            n,
                            m,
                            k,
                            &g[i * m * n..],
                            1,
                            n,
                            &ta[i * m * k..],
                            k,
                            1,
                            S::zero(),
                            &mut d[i * n * k..],
                            k,
                            1,
                        );
                    }
                    out.push((b, d));
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let grads = kernels::instance_norm_backward(
                    self.shape(*x),
                    cache,
                    self.value(*gamma).data(),
                    g,
                );
                if self.wants(*x) {
                    out.push((*x, grads.input));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, grads.gamma));
                }
                if self.wants(*beta) {
                    out.push((*beta, grads.beta));
                }
            }
        }
        out.retain(|(v, _)| self.wants(*v));
        out
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contribution: Vec<S>) {
    match slot {
        None => *slot = Some(contribution),
        Some(acc) => acc
            .iter_mut()
            .zip(contribution)
            .for_each(|(a, c)| *a = *a + c),
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where the exact value rounds to an endpoint.
fn sigmoid<S: Scalar>(v: S) -> S {
    let y = if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    };
    let half_eps = S::epsilon() / (S::one() + S::one());
    y.max(S::min_positive_value()).min(S::one() - half_eps)
}
