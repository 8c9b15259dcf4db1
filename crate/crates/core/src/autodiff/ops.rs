//! Operations recorded on the tape and their backward rules.

use ndarray::{s, Array2, Axis, Zip};
use rayon::prelude::*;

use super::{Graph, Node, Var};
use crate::Scalar;

/// Geometry of a batched 1-D convolution. The input holds `n_seq`
/// sequences of `len_in` samples as consecutive column blocks of a
/// `[cin, n_seq * len_in]` matrix; zero padding is symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub n_seq: usize,
}

impl ConvShape {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        len_in: usize,
        n_seq: usize,
    ) -> Self {
        assert!(
            kernel >= 1 && stride >= 1 && len_in + 2 * pad >= kernel,
            "invalid convolution geometry"
        );
        let len_out = (len_in + 2 * pad - kernel) / stride + 1;
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            len_in,
            len_out,
            n_seq,
        }
    }

    /// Output length for an input of `len_in` samples.
    pub fn out_len(len_in: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (len_in + 2 * pad - kernel) / stride + 1
    }
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Dropout(Var, Array2<T>),
    Conv1d {
        x: Var,
        w: Var,
        shape: ConvShape,
        cols: Array2<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    MeanPool {
        x: Var,
        seg: usize,
    },
    ConcatRows(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        probs: Vec<Array2<T>>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Array2<T>,
    },
    Sum(Var),
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Relu(x) | Op::Dropout(x, _) | Op::Sum(x) => vec![*x],
            Op::MeanPool { x, .. } => vec![*x],
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } | Op::LayerNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::ConcatRows(parts) => parts.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// Gradients with respect to the parents that need them, given the
    /// gradient `g` of this node's output `out`.
    pub(crate) fn backward(
        &self,
        g: &Array2<T>,
        out: &Array2<T>,
        nodes: &[Node<T>],
    ) -> Vec<(Var, Array2<T>)> {
        let needs = |v: &Var| nodes[v.0].needs_grad;
        let val = |v: &Var| &nodes[v.0].value;
        let mut grads = Vec::new();
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    grads.push((*a, g.dot(&val(b).t())));
                }
                if needs(b) {
                    grads.push((*b, val(a).t().dot(g)));
                }
            }
            Op::AddBias(x, b) => {
                if needs(x) {
                    grads.push((*x, g.clone()));
                }
                if needs(b) {
                    grads.push((*b, g.sum_axis(Axis(1)).insert_axis(Axis(1))));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    grads.push((*a, g.clone()));
                }
                if needs(b) {
                    grads.push((*b, g.clone()));
                }
            }
            Op::Scale(x, s) => grads.push((*x, g * *s)),
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &o| {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                });
                grads.push((*x, d));
            }
            Op::Dropout(x, mask) => grads.push((*x, g * mask)),
            Op::Sum(x) => {
                let (r, c) = val(x).dim();
                grads.push((*x, Array2::from_elem((r, c), g[[0, 0]])));
            }
            Op::MeanPool { x, seg } => {
                let (rows, cols) = val(x).dim();
                let inv = T::one() / T::of(*seg as f64);
                let mut d = Array2::zeros((rows, cols));
                for r in 0..rows {
                    for j in 0..cols {
                        d[[r, j]] = g[[r, j / seg]] * inv;
                    }
                }
                grads.push((*x, d));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = val(p).nrows();
                    if needs(p) {
                        grads.push((*p, g.slice(s![start..start + rows, ..]).to_owned()));
                    }
                    start += rows;
                }
            }
            Op::Conv1d { x, w, shape, cols } => {
                if needs(w) {
                    grads.push((*w, g.dot(&cols.t())));
                }
                if needs(x) {
                    let dcols = val(w).t().dot(g);
                    grads.push((*x, col2im(&dcols, shape)));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let gam = val(gamma);
                if needs(gamma) {
                    grads.push((*gamma, (g * xhat).sum_axis(Axis(1)).insert_axis(Axis(1))));
                }
                if needs(beta) {
                    grads.push((*beta, g.sum_axis(Axis(1)).insert_axis(Axis(1))));
                }
                if needs(x) {
                    let (rows, cols) = g.dim();
                    let n = T::of(cols as f64);
                    let mut dx = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let scale = gam[[r, 0]] * inv_std[r];
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        if *train {
                            let sum_g = gr.sum();
                            let sum_gx = gr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                            Zip::from(dx.row_mut(r))
                                .and(gr)
                                .and(xr)
                                .for_each(|d, &gv, &xv| {
                                    *d = scale / n * (n * gv - sum_g - xv * sum_gx);
                                });
                        } else {
                            Zip::from(dx.row_mut(r))
                                .and(gr)
                                .for_each(|d, &gv| *d = scale * gv);
                        }
                    }
                    grads.push((*x, dx));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if needs(gamma) {
                    grads.push((*gamma, (g * xhat).sum_axis(Axis(1)).insert_axis(Axis(1))));
                }
                if needs(beta) {
                    grads.push((*beta, g.sum_axis(Axis(1)).insert_axis(Axis(1))));
                }
                if needs(x) {
                    let gam = val(gamma);
                    let (rows, cols) = g.dim();
                    let n = T::of(rows as f64);
                    let dxhat = g * gam;
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dx = Array2::zeros((rows, cols));
                    Zip::indexed(&mut dx).for_each(|(r, c), d| {
                        *d = inv_std[c] / n
                            * (n * dxhat[[r, c]] - sum_d[c] - xhat[[r, c]] * sum_dx[c]);
                    });
                    grads.push((*x, dx));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            } => {
                let (dq, dk, dv) =
                    attention_backward(g, val(q), val(k), val(v), *heads, *seq_len, probs);
                if needs(q) {
                    grads.push((*q, dq));
                }
                if needs(k) {
                    grads.push((*k, dk));
                }
                if needs(v) {
                    grads.push((*v, dv));
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                mask,
                probs,
            } => {
                let count = mask.iter().filter(|m| **m).count();
                let scale = g[[0, 0]] / T::of(count as f64);
                let mut d = Array2::zeros(probs.dim());
                for (j, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
                    if !keep {
                        continue;
                    }
                    for c in 0..probs.nrows() {
                        let onehot = if c == t { T::one() } else { T::zero() };
                        d[[c, j]] = (probs[[c, j]] - onehot) * scale;
                    }
                }
                grads.push((*logits, d));
            }
        }
        grads
    }
}

fn im2col<T: Scalar>(x: &Array2<T>, sh: &ConvShape) -> Array2<T> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let width = sh.n_seq * sh.len_out;
    let mut cols = vec![T::zero(); sh.cin * sh.kernel * width];
    cols.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        let (c, j) = (r / sh.kernel, r % sh.kernel);
        let xrow = &xs[c * sh.n_seq * sh.len_in..(c + 1) * sh.n_seq * sh.len_in];
        for b in 0..sh.n_seq {
            let src = &xrow[b * sh.len_in..(b + 1) * sh.len_in];
            let dst = &mut row[b * sh.len_out..(b + 1) * sh.len_out];
            for (o, d) in dst.iter_mut().enumerate() {
                let pos = (o * sh.stride + j) as isize - sh.pad as isize;
                if pos >= 0 && (pos as usize) < sh.len_in {
                    *d = src[pos as usize];
                }
            }
        }
    });
    Array2::from_shape_vec((sh.cin * sh.kernel, width), cols).unwrap()
}

fn col2im<T: Scalar>(dcols: &Array2<T>, sh: &ConvShape) -> Array2<T> {
    let dcols = dcols.as_standard_layout();
    let ds = dcols.as_slice().expect("standard layout");
    let width = sh.n_seq * sh.len_out;
    let in_width = sh.n_seq * sh.len_in;
    let mut dx = vec![T::zero(); sh.cin * in_width];
    dx.par_chunks_mut(in_width)
        .enumerate()
        .for_each(|(c, xrow)| {
            for j in 0..sh.kernel {
                let row = &ds[(c * sh.kernel + j) * width..(c * sh.kernel + j + 1) * width];
                for b in 0..sh.n_seq {
                    let src = &row[b * sh.len_out..(b + 1) * sh.len_out];
                    let dst = &mut xrow[b * sh.len_in..(b + 1) * sh.len_in];
                    for (o, &v) in src.iter().enumerate() {
                        let pos = (o * sh.stride + j) as isize - sh.pad as isize;
                        if pos >= 0 && (pos as usize) < sh.len_in {
                            dst[pos as usize] += v;
                        }
                    }
                }
            }
        });
    Array2::from_shape_vec((sh.cin, in_width), dx).unwrap()
}

/// Row-wise softmax of a square score matrix, in place.
fn softmax_rows<T: Scalar>(s: &mut Array2<T>) {
    for mut row in s.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Column-wise softmax.
pub fn softmax_columns<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut p = logits.clone();
    for mut col in p.columns_mut() {
        let max = col.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    p
}

/// Attention weights for every (sequence, head) pair, in that order. Each
/// matrix is `[seq_len, seq_len]` with row `i` the weights of query `i`.
pub fn attention_weights<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    heads: usize,
    seq_len: usize,
) -> Vec<Array2<T>> {
    let (d, cols) = q.dim();
    assert_eq!(d % heads, 0, "feature dimension not divisible by heads");
    assert_eq!(
        cols % seq_len,
        0,
        "columns not a multiple of the sequence length"
    );
    let dh = d / heads;
    let n_seq = cols / seq_len;
    let scale = T::one() / T::of(dh as f64).sqrt();
    (0..n_seq * heads)
        .into_par_iter()
        .map(|i| {
            let (b, h) = (i / heads, i % heads);
            let rows = h * dh..(h + 1) * dh;
            let cs = b * seq_len..(b + 1) * seq_len;
            let qh = q.slice(s![rows.clone(), cs.clone()]);
            let kh = k.slice(s![rows, cs]);
            let mut scores = qh.t().dot(&kh);
            scores.mapv_inplace(|v| v * scale);
            softmax_rows(&mut scores);
            scores
        })
        .collect()
}

fn attention_backward<T: Scalar>(
    g: &Array2<T>,
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    seq_len: usize,
    probs: &[Array2<T>],
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (d, cols) = q.dim();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let blocks: Vec<(Array2<T>, Array2<T>, Array2<T>)> = probs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (b, h) = (i / heads, i % heads);
            let rows = h * dh..(h + 1) * dh;
            let cs = b * seq_len..(b + 1) * seq_len;
            let go = g.slice(s![rows.clone(), cs.clone()]);
            let qh = q.slice(s![rows.clone(), cs.clone()]);
            let kh = k.slice(s![rows.clone(), cs.clone()]);
            let vh = v.slice(s![rows, cs]);
            let dv = go.dot(p);
            let dp = go.t().dot(&vh);
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = drow
                    .iter()
                    .zip(prow.iter())
                    .map(|(&a, &b)| a * b)
                    .sum::<T>();
                Zip::from(&mut drow)
                    .and(&prow)
                    .for_each(|dv, &pv| *dv = pv * (*dv - dot));
            }
            let dq = kh.dot(&ds.t()) * scale;
            let dk = qh.dot(&ds) * scale;
            (dq, dk, dv)
        })
        .collect();
    let mut dq = Array2::zeros((d, cols));
    let mut dk = Array2::zeros((d, cols));
    let mut dv = Array2::zeros((d, cols));
    for (i, (bq, bk, bv)) in blocks.into_iter().enumerate() {
        let (b, h) = (i / heads, i % heads);
        let rows = h * dh..(h + 1) * dh;
        let cs = b * seq_len..(b + 1) * seq_len;
        dq.slice_mut(s![rows.clone(), cs.clone()]).assign(&bq);
        dk.slice_mut(s![rows.clone(), cs.clone()]).assign(&bk);
        dv.slice_mut(s![rows, cs]).assign(&bv);
    }
    (dq, dk, dv)
}

/// Batch statistics returned by [`Graph::batch_norm`] in training mode:
/// per-channel mean and unbiased variance.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Graph<T> {
    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds the column vector `bias` (`[rows, 1]`) to every column of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        self.push(value, Op::AddBias(x, bias))
    }

    /// `w · x + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(w, x);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add of mismatched shapes");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x) * s;
        self.push(value, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    /// Multiplies by a precomputed keep-mask that already carries the
    /// `1 / (1 - p)` scaling.
    pub fn dropout(&mut self, x: Var, mask: Array2<T>) -> Var {
        let value = self.value(x) * &mask;
        self.push(value, Op::Dropout(x, mask))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Averages consecutive column segments of length `seg`.
    pub fn mean_pool(&mut self, x: Var, seg: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert_eq!(cols % seg, 0, "pool segment does not divide columns");
        let xv = self.value(x);
        let inv = T::one() / T::of(seg as f64);
        let mut value = Array2::zeros((rows, cols / seg));
        for r in 0..rows {
            for b in 0..cols / seg {
                value[[r, b]] = xv.slice(s![r, b * seg..(b + 1) * seg]).sum() * inv;
            }
        }
        self.push(value, Op::MeanPool { x, seg })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat of mismatched columns");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Batched 1-D convolution without bias. `w` is `[cout, cin * kernel]`.
    pub fn conv1d(&mut self, x: Var, w: Var, shape: ConvShape) -> Var {
        assert_eq!(
            self.shape(x),
            (shape.cin, shape.n_seq * shape.len_in),
            "conv input shape"
        );
        assert_eq!(
            self.shape(w),
            (shape.cout, shape.cin * shape.kernel),
            "conv weight shape"
        );
        let cols = im2col(self.value(x), &shape);
        let value = self.value(w).dot(&cols);
        self.push(value, Op::Conv1d { x, w, shape, cols })
    }

    /// Per-row batch normalisation over all columns. In training mode the
    /// batch statistics are used and returned; otherwise the supplied
    /// running statistics are.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> (Var, Option<BatchStats<T>>) {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let n = T::of(cols as f64);
        let eps = T::of(eps);
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mean: Vec<T> = xv.rows().into_iter().map(|r| r.sum() / n).collect();
                let var: Vec<T> = xv
                    .rows()
                    .into_iter()
                    .zip(&mean)
                    .map(|(r, &m)| r.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n)
                    .collect();
                let denom = T::of((cols.max(2) - 1) as f64);
                let unbiased = var.iter().map(|&v| v * n / denom).collect();
                (
                    mean.clone(),
                    var,
                    Some(BatchStats {
                        mean,
                        var: unbiased,
                    }),
                )
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let (m, s) = (mean[r], inv_std[r]);
            row.mapv_inplace(|v| (v - m) * s);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.dim(), (rows, 1), "batch norm gain shape");
        let value = &xhat * g + b;
        let train = stats.is_some();
        let var_node = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        );
        (var_node, stats)
    }

    /// Normalises each column over its rows, then applies the per-row
    /// gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let rows = xv.nrows();
        let n = T::of(rows as f64);
        let mean = xv.sum_axis(Axis(0)) / n;
        let centred = xv - &mean.view().insert_axis(Axis(0));
        let var = centred.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let eps = T::of(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let inv = ndarray::Array1::from(inv_std.clone());
        let xhat = centred * inv.view().insert_axis(Axis(0));
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over `[d, n_seq *
    /// seq_len]` projections; sequences do not attend to each other.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize) -> Var {
        let probs = attention_weights(self.value(q), self.value(k), heads, seq_len);
        let vv = self.value(v);
        let (d, cols) = vv.dim();
        let dh = d / heads;
        let mut value = Array2::zeros((d, cols));
        for (i, p) in probs.iter().enumerate() {
            let (b, h) = (i / heads, i % heads);
            let rows = h * dh..(h + 1) * dh;
            let cs = b * seq_len..(b + 1) * seq_len;
            let out = vv.slice(s![rows.clone(), cs.clone()]).dot(&p.t());
            value.slice_mut(s![rows, cs]).assign(&out);
        }
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
        )
    }

    /// Mean negative log-likelihood of `targets` over unmasked columns of
    /// the column-wise softmax of `logits`. At least one column must be
    /// unmasked.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.ncols(), targets.len(), "one target per column");
        assert_eq!(mask.len(), targets.len(), "one mask flag per column");
        let count = mask.iter().filter(|m| **m).count();
        assert!(count > 0, "cross-entropy over an empty mask");
        let probs = softmax_columns(lv);
        let mut total = T::zero();
        for (j, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
            if keep {
                let col = lv.column(j);
                let max = col.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let lse = col.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                total += lse - col[t];
            }
        }
        let value = Array2::from_elem((1, 1), total / T::of(count as f64));
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
        )
    }
}
