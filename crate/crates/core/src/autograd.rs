//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and stores the
//! gradient of every leaf created with `requires_grad`. One graph is driven
//! by one thread; independent graphs may be built concurrently.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::tensor::{Scalar, Tensor};

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddRowBias(usize, usize),
    AddChannelBias(usize, usize),
    ScaleBy { x: usize, w: usize, index: usize },
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    ConcatCols(usize, usize),
    MeanRows(usize),
    Sum(usize),
    Relu(usize),
    Gelu(usize),
    RowSoftmax(usize),
    TopKMask { x: usize, kept: Vec<bool> },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv { x: usize, k: usize, geom: ConvGeom },
    CrossEntropy { logits: usize, label: usize, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape for one computation.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Gradient stored for a leaf by the last [`Graph::backward`] calls.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let g = grads.get(var.id)?.as_ref()?;
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("grad shape"))
    }

    /// Clears all stored leaf gradients.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Concatenated keep masks of every top-k selection on the tape. Two
    /// evaluations of the same expression select the same supports iff their
    /// signatures are equal.
    pub fn selection_signature(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut sig = Vec::new();
        for node in nodes.iter() {
            if let Op::TopKMask { kept, .. } = &node.op {
                sig.extend_from_slice(kept);
            }
        }
        sig
    }

    /// Back-propagates from a single-element `loss`, accumulating into the
    /// gradient of every leaf that requires one.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (input, contribution) in node_backward(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, &c)| *a = *a + c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut stored = self.grads.borrow_mut();
        if stored.len() < nodes.len() {
            stored.resize(nodes.len(), None);
        }
        for (id, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Leaf) = (g, &nodes[id].op) {
                match &mut stored[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &c)| *a = *a + c),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn node_backward<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T]) -> Vec<(usize, Vec<T>)> {
    let val = |i: usize| nodes[i].value.data();
    let shape = |i: usize| nodes[i].value.shape();
    let needs = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            vec![
                (*a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect()),
                (*b, g.iter().zip(av).map(|(&g, &a)| g * a).collect()),
            ]
        }
        Op::Scale(x, c) => vec![(*x, g.iter().map(|&v| v * *c).collect())],
        Op::AddRowBias(x, b) => {
            let cols = val(*b).len();
            let mut db = vec![T::zero(); cols];
            for row in g.chunks(cols) {
                db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
            }
            vec![(*x, g.to_vec()), (*b, db)]
        }
        Op::AddChannelBias(x, b) => {
            let channels = val(*b).len();
            let per = g.len() / channels;
            let db = g.chunks(per).map(|c| c.iter().copied().sum()).collect();
            vec![(*x, g.to_vec()), (*b, db)]
        }
        Op::ScaleBy { x, w, index } => {
            let wv = val(*w)[*index];
            let xv = val(*x);
            let mut dw = vec![T::zero(); val(*w).len()];
            dw[*index] = g.iter().zip(xv).map(|(&g, &x)| g * x).sum();
            vec![(*x, g.iter().map(|&v| v * wv).collect()), (*w, dw)]
        }
        Op::MatMul(a, b) => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let n = shape(*b)[1];
            let mut out = Vec::with_capacity(2);
            if needs(*a) {
                out.push((*a, kernels::matmul_grad_lhs(g, val(*b), m, k, n)));
            }
            if needs(*b) {
                out.push((*b, kernels::matmul_grad_rhs(val(*a), g, m, k, n)));
            }
            out
        }
        Op::Transpose(x) => {
            let (r, c) = (shape(*x)[0], shape(*x)[1]);
            vec![(*x, kernels::transpose(g, c, r))]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::ConcatCols(a, b) => {
            let (rows, ca) = (shape(*a)[0], shape(*a)[1]);
            let cb = shape(*b)[1];
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for row in g.chunks(ca + cb) {
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::MeanRows(x) => {
            let (rows, cols) = (shape(*x)[0], shape(*x)[1]);
            let inv = T::one() / T::from_usize(rows).expect("rows");
            let mut dx = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                dx.extend(g.iter().map(|&v| v * inv));
            }
            vec![(*x, dx)]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
        Op::Relu(x) => vec![(
            *x,
            g.iter()
                .zip(val(*x))
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
        )],
        Op::Gelu(x) => vec![(
            *x,
            g.iter()
                .zip(val(*x))
                .map(|(&g, &x)| g * kernels::gelu_grad(x))
                .collect(),
        )],
        Op::RowSoftmax(x) => {
            let (r, c) = (shape(*x)[0], shape(*x)[1]);
            vec![(*x, kernels::softmax_rows_grad(node.value.data(), g, r, c))]
        }
        Op::TopKMask { x, kept } => vec![(
            *x,
            g.iter()
                .zip(kept)
                .map(|(&g, &k)| if k { g } else { T::zero() })
                .collect(),
        )],
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let (rows, cols) = (shape(*x)[0], shape(*x)[1]);
            let gv = val(*gamma);
            let n = T::from_usize(cols).expect("cols");
            let mut dx = vec![T::zero(); rows * cols];
            let mut dgamma = vec![T::zero(); cols];
            let mut dbeta = vec![T::zero(); cols];
            for r in 0..rows {
                let gr = &g[r * cols..(r + 1) * cols];
                let hr = &xhat[r * cols..(r + 1) * cols];
                let mut sum_dh = T::zero();
                let mut sum_dh_h = T::zero();
                for c in 0..cols {
                    let dh = gr[c] * gv[c];
                    sum_dh = sum_dh + dh;
                    sum_dh_h = sum_dh_h + dh * hr[c];
                    dgamma[c] = dgamma[c] + gr[c] * hr[c];
                    dbeta[c] = dbeta[c] + gr[c];
                }
                let (mean_dh, mean_dh_h) = (sum_dh / n, sum_dh_h / n);
                for c in 0..cols {
                    let dh = gr[c] * gv[c];
                    dx[r * cols + c] = rstd[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                }
            }
            vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        Op::Conv { x, k, geom } => {
            let mut out = Vec::with_capacity(2);
            if needs(*x) {
                out.push((*x, geom.grad_input(val(*k), g)));
            }
            if needs(*k) {
                out.push((*k, geom.grad_kernel(val(*x), g)));
            }
            out
        }
        Op::CrossEntropy {
            logits,
            label,
            probs,
        } => {
            let mut d: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
            d[*label] = d[*label] - g[0];
            vec![(*logits, d)]
        }
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        other => Err(Error::Shape {
            op,
            msg: format!("expected a matrix, got shape {other:?}"),
        }),
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn value(&self) -> Tensor<T> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let rg = self.graph.needs(&[self.id]);
        self.graph.push(value, op, rg)
    }

    fn binary(&self, other: Var<'g, T>, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let rg = self.graph.needs(&[self.id, other.id]);
        self.graph.push(value, op, rg)
    }

    fn zip_with(&self, other: Var<'g, T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (a, b) = (self.value(), other.value());
        same_shape(op, &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: T) -> Var<'g, T> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    /// `x[N×D] + b[D]` broadcast over rows.
    pub fn add_row_bias(&self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, b) = (self.value(), bias.value());
        let (_, cols) = matrix_dims("add_row_bias", &x)?;
        if b.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = x
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b.data()).map(|(&v, &bv)| v + bv))
            .collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.binary(bias, v, Op::AddRowBias(self.id, bias.id)))
    }

    /// `x[F×...] + b[F]` broadcast over all trailing axes.
    pub fn add_channel_bias(&self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, b) = (self.value(), bias.value());
        if x.rank() < 1 || b.shape() != [x.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let per = x.numel() / x.shape()[0];
        let data = x
            .data()
            .chunks(per)
            .zip(b.data())
            .flat_map(|(chunk, &bv)| chunk.iter().map(move |&v| v + bv))
            .collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.binary(bias, v, Op::AddChannelBias(self.id, bias.id)))
    }

    /// Multiplies every element by `weights[index]`.
    pub fn scale_by(&self, weights: Var<'g, T>, index: usize) -> Result<Var<'g, T>> {
        let w = weights.value();
        if w.rank() != 1 || index >= w.numel() {
            return Err(Error::Contract(format!(
                "scale_by index {index} into weights of shape {:?}",
                w.shape()
            )));
        }
        let wv = w.data()[index];
        let v = self.value().map(|x| x * wv);
        Ok(self.binary(
            weights,
            v,
            Op::ScaleBy {
                x: self.id,
                w: weights.id,
                index,
            },
        ))
    }

    pub fn matmul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = matrix_dims("matmul", &a)?;
        let (k2, n) = matrix_dims("matmul", &b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let v = Tensor::new([m, n], kernels::matmul(a.data(), b.data(), m, k, n))?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (r, c) = matrix_dims("transpose", &x)?;
        let v = Tensor::new([c, r], kernels::transpose(x.data(), r, c))?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'g, T>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Concatenates two matrices with equal row counts along the columns.
    pub fn concat_cols(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let (ra, ca) = matrix_dims("concat_cols", &a)?;
        let (rb, cb) = matrix_dims("concat_cols", &b)?;
        if ra != rb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        let v = Tensor::new([ra, ca + cb], data)?;
        Ok(self.binary(other, v, Op::ConcatCols(self.id, other.id)))
    }

    /// Column means of a matrix, shape `[cols]`.
    pub fn mean_rows(&self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (rows, cols) = matrix_dims("mean_rows", &x)?;
        let inv = T::one() / T::from_usize(rows).expect("rows");
        let mut acc = vec![T::zero(); cols];
        for row in x.data().chunks(cols) {
            acc.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
        }
        let v = Tensor::new([cols], acc.into_iter().map(|a| a * inv).collect())?;
        Ok(self.unary(v, Op::MeanRows(self.id)))
    }

    pub fn sum(&self) -> Var<'g, T> {
        let total = self.value().data().iter().copied().sum();
        self.unary(Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn relu(&self) -> Var<'g, T> {
        let v = self.value().map(|x| x.max(T::zero()));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn gelu(&self) -> Var<'g, T> {
        let v = self.value().map(kernels::gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    /// Softmax over each row; mask sentinel entries become exactly zero.
    pub fn row_softmax(&self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (r, c) = matrix_dims("row_softmax", &x)?;
        let v = Tensor::new([r, c], kernels::softmax_rows(x.data(), r, c)?)?;
        Ok(self.unary(v, Op::RowSoftmax(self.id)))
    }

    /// Keeps the `k` largest entries per row (lowest column wins ties) and
    /// sets the rest to the mask sentinel. The selection is constant under
    /// differentiation.
    pub fn topk_mask(&self, k: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (r, c) = matrix_dims("topk_mask", &x)?;
        if k == 0 || k > c {
            return Err(Error::Contract(format!("top-k with k={k} on rows of length {c}")));
        }
        let (out, kept) = kernels::topk_rows(x.data(), r, c, k);
        let v = Tensor::new([r, c], out)?;
        Ok(self.unary(v, Op::TopKMask { x: self.id, kept }))
    }

    pub fn layer_norm(&self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: T) -> Result<Var<'g, T>> {
        let (x, gv, bv) = (self.value(), gamma.value(), beta.value());
        let (rows, cols) = matrix_dims("layer_norm", &x)?;
        if gv.shape() != [cols] || bv.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        if eps <= T::zero() {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let out = kernels::layer_norm(x.data(), gv.data(), bv.data(), rows, cols, eps);
        let v = Tensor::new([rows, cols], out.y)?;
        let rg = self.graph.needs(&[self.id, gamma.id, beta.id]);
        Ok(self.graph.push(
            v,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat: out.xhat,
                rstd: out.rstd,
            },
            rg,
        ))
    }

    fn conv(&self, kernels: Var<'g, T>, geom: ConvGeom, out_shape: Vec<usize>) -> Result<Var<'g, T>> {
        let (x, k) = (self.value(), kernels.value());
        let v = Tensor::new(out_shape, geom.forward(x.data(), k.data()))?;
        Ok(self.binary(
            kernels,
            v,
            Op::Conv {
                x: self.id,
                k: kernels.id,
                geom,
            },
        ))
    }

    /// Cross-correlation of `[C×H×W]` with `[F×C×kh×kw]` kernels.
    pub fn conv2d(&self, kernels: Var<'g, T>, stride: usize, padding: Padding) -> Result<Var<'g, T>> {
        let (xs, ks) = (self.shape(), kernels.shape());
        let (&[c, h, w], &[f, kc, kh, kw]) = (xs.as_slice(), ks.as_slice()) else {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ks });
        };
        if c != kc {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ks });
        }
        let geom = ConvGeom::new(c, f, [1, h, w], [1, kh, kw], stride, padding).ok_or_else(|| {
            Error::Shape {
                op: "conv2d",
                msg: format!("kernel {ks:?} does not fit input {xs:?} with stride {stride} and {padding:?} padding"),
            }
        })?;
        let out = vec![f, geom.output[1], geom.output[2]];
        self.conv(kernels, geom, out)
    }

    /// Cross-correlation of `[C×B×H×W]` with `[F×C×kb×kh×kw]` kernels.
    pub fn conv3d(&self, kernels: Var<'g, T>, stride: usize, padding: Padding) -> Result<Var<'g, T>> {
        let (xs, ks) = (self.shape(), kernels.shape());
        let (&[c, b, h, w], &[f, kc, kb, kh, kw]) = (xs.as_slice(), ks.as_slice()) else {
            return Err(Error::ShapeMismatch { op: "conv3d", lhs: xs, rhs: ks });
        };
        if c != kc {
            return Err(Error::ShapeMismatch { op: "conv3d", lhs: xs, rhs: ks });
        }
        let geom = ConvGeom::new(c, f, [b, h, w], [kb, kh, kw], stride, padding).ok_or_else(|| {
            Error::Shape {
                op: "conv3d",
                msg: format!("kernel {ks:?} does not fit input {xs:?} with stride {stride} and {padding:?} padding"),
            }
        })?;
        let out = vec![f, geom.output[0], geom.output[1], geom.output[2]];
        self.conv(kernels, geom, out)
    }

    /// `-log softmax(logits)[label]` for a rank-1 logit vector.
    pub fn cross_entropy(&self, label: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if x.rank() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                msg: format!("expected logits vector, got {:?}", x.shape()),
            });
        }
        if label >= x.numel() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                x.numel()
            )));
        }
        let max = x.data().iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = x.data().iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() + max - x.data()[label];
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                label,
                probs,
            },
        ))
    }
}
