//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and returns
//! the gradients of that scalar with respect to every parameter (and every
//! leaf created with [`Tape::leaf`]). A tape can be differentiated once; a
//! second call reports a usage error.

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Affine {
        a: Var,
        scale: T,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    RowCosine {
        a: Var,
        b: Var,
        eps: T,
        na: Vec<T>,
        nb: Vec<T>,
    },
    Mean(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients, in the order the parameters were placed on the tape.
    /// A parameter used twice appears twice; consumers sum them.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.nodes[node].as_ref().map(|g| (id, g)))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        assert!(!self.consumed, "tape already differentiated");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = Tensor::matmul_t(self.value(a), ta, self.value(b), tb).expect("matmul shapes");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shapes");
        let mut out = x.clone();
        out.add_assign(y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shapes");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let ng = self.ng(a);
        self.push(out, Op::Affine { a, scale }, ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.affine(a, s, T::zero())
    }

    /// Adds a `1×n` bias row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row");
        assert_eq!(xv.cols(), bv.cols(), "bias width");
        let mut out = xv.clone();
        let b = bv.row(0);
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(b) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddRow { x, bias }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (both `1×n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let g = self.value(gamma);
        let b = self.value(beta);
        assert_eq!(g.shape(), [1, cols]);
        assert_eq!(b.shape(), [1, cols]);
        let n = T::of(cols as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = g.get(0, c) * xhat.get(r, c) + b.get(0, c);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        assert!(start + width <= av.cols(), "slice out of range");
        let out = Tensor::from_fn(av.rows(), width, |r, c| av.get(r, start + c));
        let ng = self.ng(a);
        self.push(out, Op::SliceCols { a, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.rows(), rows, "concat rows");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Per-row cosine similarity `a_i·b_i / ((‖a_i‖+eps)(‖b_i‖+eps))`, as a column.
    pub fn row_cosine(&mut self, a: Var, b: Var, eps: T) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "cosine shapes");
        let rows = av.rows();
        let mut na = Vec::with_capacity(rows);
        let mut nb = Vec::with_capacity(rows);
        let mut out = Tensor::zeros(rows, 1);
        for r in 0..rows {
            let (x, y) = (av.row(r), bv.row(r));
            let dot: T = x.iter().zip(y).map(|(&p, &q)| p * q).sum();
            let nx = x.iter().map(|&p| p * p).sum::<T>().sqrt();
            let ny = y.iter().map(|&p| p * p).sum::<T>().sqrt();
            out.set(r, 0, dot / ((nx + eps) * (ny + eps)));
            na.push(nx);
            nb.push(ny);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::RowCosine { a, b, eps, na, nb }, ng)
    }

    /// Mean of all elements, as a `1×1` tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.data().iter().copied().sum::<T>() / T::of(av.len() as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    /// Mean cross-entropy of row-wise softmax(logits) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let probs = softmax_rows(lv);
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            loss -= probs.get(r, t).max(T::min_positive_value()).ln();
        }
        loss /= T::of(targets.len().max(1) as f64);
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Reverse sweep from the scalar `loss`. The tape cannot be differentiated again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Usage("tape was already consumed by backward()".into()));
        }
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Shape(format!(
                "backward() needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| match node.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].needs_grad;
        match &nodes[i].op {
            Op::Input | Op::Param(_) => {}
            &Op::MatMul { a, b, ta, tb } => {
                if wants(a) {
                    let ga = if ta {
                        Tensor::matmul_t(val(b), tb, g, true)
                    } else {
                        Tensor::matmul_t(g, false, val(b), !tb)
                    }
                    .expect("matmul grad");
                    accumulate(grads, a, ga);
                }
                if wants(b) {
                    let gb = if tb {
                        Tensor::matmul_t(g, true, val(a), ta)
                    } else {
                        Tensor::matmul_t(val(a), !ta, g, false)
                    }
                    .expect("matmul grad");
                    accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if wants(b) {
                    accumulate(grads, b, g.clone());
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    accumulate(grads, a, hadamard(g, val(b)));
                }
                if wants(b) {
                    accumulate(grads, b, hadamard(g, val(a)));
                }
            }
            &Op::Affine { a, scale } => {
                accumulate(grads, a, g.map(|x| x * scale));
            }
            &Op::AddRow { x, bias } => {
                if wants(x) {
                    accumulate(grads, x, g.clone());
                }
                if wants(bias) {
                    accumulate(grads, bias, column_sums(g));
                }
            }
            &Op::Relu(a) => {
                let av = val(a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gg, &x)| if x > T::zero() { gg } else { T::zero() })
                    .collect();
                accumulate(grads, a, Tensor::from_vec(g.rows(), g.cols(), data).unwrap());
            }
            &Op::Softmax(a) => {
                let y = &nodes[i].value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for (o, (&yy, &gg)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yy * (gg - dot);
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (rows, cols) = (xhat.rows(), xhat.cols());
                let gv = val(*gamma);
                if wants(*gamma) {
                    let mut gg = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let v = gg.get(0, c) + g.get(r, c) * xhat.get(r, c);
                            gg.set(0, c, v);
                        }
                    }
                    accumulate(grads, *gamma, gg);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, column_sums(g));
                }
                if wants(*x) {
                    let n = T::of(cols as f64);
                    let mut gx = Tensor::zeros(rows, cols);
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let mut sum = T::zero();
                        let mut sum_xh = T::zero();
                        for c in 0..cols {
                            dxhat[c] = g.get(r, c) * gv.get(0, c);
                            sum += dxhat[c];
                            sum_xh += dxhat[c] * xhat.get(r, c);
                        }
                        let scale = rstd[r] / n;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            out[c] = scale * (n * dxhat[c] - sum - xhat.get(r, c) * sum_xh);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            &Op::SliceCols { a, start } => {
                let av = val(a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let gp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, off + c));
                        accumulate(grads, p, gp);
                    }
                    off += w;
                }
            }
            Op::RowCosine { a, b, eps, na, nb } => {
                let (av, bv) = (val(*a), val(*b));
                let cos = &nodes[i].value;
                let cols = av.cols();
                let mut ga = Tensor::zeros(av.rows(), cols);
                let mut gb = Tensor::zeros(av.rows(), cols);
                for r in 0..av.rows() {
                    let gr = g.get(r, 0);
                    let (x, y) = (av.row(r), bv.row(r));
                    let dx = na[r] + *eps;
                    let dy = nb[r] + *eps;
                    let c = cos.get(r, 0);
                    // d cos / dx = y/(dx·dy) − cos · x / (‖x‖·dx)
                    let kx = if na[r] > T::zero() { c / (na[r] * dx) } else { T::zero() };
                    let ky = if nb[r] > T::zero() { c / (nb[r] * dy) } else { T::zero() };
                    let inv = T::one() / (dx * dy);
                    let (oa, ob) = (ga.row_mut(r), gb.row_mut(r));
                    for k in 0..cols {
                        oa[k] = gr * (y[k] * inv - kx * x[k]);
                    }
                    for k in 0..cols {
                        ob[k] = gr * (x[k] * inv - ky * y[k]);
                    }
                }
                if wants(*a) {
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            &Op::Mean(a) => {
                let av = val(a);
                let s = g.get(0, 0) / T::of(av.len() as f64);
                accumulate(grads, a, Tensor::filled(av.rows(), av.cols(), s));
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let s = g.get(0, 0) / T::of(targets.len().max(1) as f64);
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = gl.get(r, t) - T::one();
                    gl.set(r, t, v);
                }
                gl.scale_assign(s);
                accumulate(grads, *logits, gl);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| p * q).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).unwrap()
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
