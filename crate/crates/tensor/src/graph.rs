use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, Params};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    CrossEntropyIds {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    CrossEntropyProbs {
        logits: Var,
        target: Var,
        log_probs: Vec<T>,
    },
    Kl {
        q: Var,
        prior: Var,
    },
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Rc<Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Per-graph invocation counters.
///
/// `softmax_rows` counts every probability vector normalized over the
/// vocabulary axis by [`Graph::softmax`], [`Graph::log_softmax`] and the
/// fused cross-entropy ops (one per row). Attention weights are counted
/// separately in `attention_calls`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub softmax_rows: u64,
    pub attention_calls: u64,
}

pub(crate) type Binding = (u64, ParamId, Var);

/// Define-by-run computation graph. Build a fresh one per step.
pub struct Graph<T> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    softmax_rows: Cell<u64>,
    attention_calls: Cell<u64>,
    memo: RefCell<HashMap<(u64, usize, bool), Var>>,
    pub(crate) bindings: RefCell<Vec<Binding>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Numerically stable softmax of one row into `out`.
pub(crate) fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    // Accumulate in f64 so wide f32 rows still sum to one.
    let mut z = 0.0f64;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - m).exp();
        *o = e;
        z += e.to_f64_lossy();
    }
    let inv = T::from_f64_lossy(1.0 / z);
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Log-softmax of one row into `out`.
pub(crate) fn log_softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let z: f64 = x.iter().map(|&v| (v - m).exp().to_f64_lossy()).sum();
    let lse = m + T::from_f64_lossy(z.ln());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            softmax_rows: Cell::new(0),
            attention_calls: Cell::new(0),
            memo: RefCell::new(HashMap::new()),
            bindings: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> Counters {
        Counters {
            softmax_rows: self.softmax_rows.get(),
            attention_calls: self.attention_calls.get(),
        }
    }

    pub fn softmax_count(&self) -> u64 {
        self.softmax_rows.get()
    }

    fn bump_softmax(&self, rows: usize) {
        self.softmax_rows.set(self.softmax_rows.get() + rows as u64);
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// True when the node was created without parents (inputs, parameters,
    /// detached values).
    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes.borrow()[v.0].op, Op::Leaf)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that collects gradient.
    pub fn var(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Bind a stored parameter, once per graph and binding mode.
    pub fn param(&self, params: Params<'_, T>, id: ParamId) -> Var {
        let key = (params.store.id(), id.0, params.trainable);
        if let Some(&v) = self.memo.borrow().get(&key) {
            return v;
        }
        let v = self.leaf(params.store.get(id).clone(), params.trainable);
        self.memo.borrow_mut().insert(key, v);
        if params.trainable {
            self.bindings
                .borrow_mut()
                .push((params.store.id(), id, v));
        }
        v
    }

    /// Identity forward, no gradient backward: the result is a fresh leaf
    /// sharing the input's values.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    fn binary(
        &self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(op_name, va.shape(), vb.shape())?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, op, self.rg(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), self.rg(&[a]))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// `x + b` with `b` (one row) broadcast over the rows of `x`.
    pub fn add_row(&self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let c = vx.cols();
        if vb.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = (*vx).clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b), self.rg(&[x, b])))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() > 2 || vb.shape().len() > 2 {
            return Err(TensorError::invalid("matmul", "operands must have rank <= 2"));
        }
        let mut av = MatView::row_major(va.data(), va.rows(), va.cols());
        let mut bv = MatView::row_major(vb.data(), vb.rows(), vb.cols());
        if ta {
            av = av.t();
        }
        if tb {
            bv = bv.t();
        }
        if av.cols != bv.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![av.rows, av.cols],
                rhs: vec![bv.rows, bv.cols],
            });
        }
        let (m, n) = (av.rows, bv.cols);
        let mut out = vec![T::zero(); m * n];
        gemm(av, bv, T::zero(), &mut out, n);
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, self.rg(&[a, b])))
    }

    /// Row lookup `table[ids]`.
    pub fn gather(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, cols) = (vt.rows(), vt.cols());
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: id,
                    len: rows,
                });
            }
            out.extend_from_slice(vt.row(id));
        }
        let out = Tensor::matrix(ids.len(), cols, out)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            self.rg(&[table]),
        ))
    }

    /// Row-wise softmax over the trailing axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if !vx.all_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let mut out = Tensor::zeros(vx.shape());
        for r in 0..vx.rows() {
            softmax_row(vx.row(r), out.row_mut(r));
        }
        self.bump_softmax(vx.rows());
        Ok(self.push(out, Op::Softmax(x), self.rg(&[x])))
    }

    pub fn log_softmax(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if !vx.all_finite() {
            return Err(TensorError::NonFinite { op: "log_softmax" });
        }
        let mut out = Tensor::zeros(vx.shape());
        for r in 0..vx.rows() {
            log_softmax_row(vx.row(r), out.row_mut(r));
        }
        self.bump_softmax(vx.rows());
        Ok(self.push(out, Op::LogSoftmax(x), self.rg(&[x])))
    }

    pub fn log(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(out, Op::Log(x), self.rg(&[x]))
    }

    pub fn exp(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x), self.rg(&[x]))
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), self.rg(&[x]))
    }

    /// Row-wise layer normalization with elementwise gain and bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let c = vx.cols();
        if vg.numel() != c || vb.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(c).unwrap();
        let rows = vx.rows();
        let mut out = Tensor::zeros(vx.shape());
        let mut xhat = vec![T::zero(); rows * c];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let o = out.row_mut(r);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                o[j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            self.rg(&[x, gain, bias]),
        ))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[lq, d]`, `k` and `v` are `[lk, d]`; heads split the width
    /// evenly. With `causal`, query `i` sees keys `j <= i + (lk - lq)`, so a
    /// single query row over a cache of past keys sees all of them.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        if vk.cols() != d || vv.cols() != d || vk.rows() != vv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: vq.shape().to_vec(),
                rhs: vk.shape().to_vec(),
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::invalid(
                "attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        let (lq, lk) = (vq.rows(), vk.rows());
        if causal && lk < lq {
            return Err(TensorError::invalid("attention", "causal attention needs lk >= lq"));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let offset = lk - lq.min(lk);
        let mut probs = vec![T::zero(); heads * lq * lk];
        let mut out = vec![T::zero(); lq * d];
        for h in 0..heads {
            let qh = MatView {
                data: &vq.data()[h * dh..],
                rows: lq,
                cols: dh,
                row_stride: d,
                col_stride: 1,
            };
            let kh = MatView {
                data: &vk.data()[h * dh..],
                rows: lk,
                cols: dh,
                row_stride: d,
                col_stride: 1,
            };
            let vh = MatView {
                data: &vv.data()[h * dh..],
                rows: lk,
                cols: dh,
                row_stride: d,
                col_stride: 1,
            };
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(qh, kh.t(), T::zero(), p, lk);
            for i in 0..lq {
                let row = &mut p[i * lk..(i + 1) * lk];
                let visible = if causal { i + offset + 1 } else { lk };
                for s in row[..visible].iter_mut() {
                    *s *= scale;
                }
                let tmp: Vec<T> = row[..visible].to_vec();
                softmax_row(&tmp, &mut row[..visible]);
                for s in row[visible..].iter_mut() {
                    *s = T::zero();
                }
            }
            let pv = MatView::row_major(&*p, lq, lk);
            gemm(pv, vh, T::zero(), &mut out[h * dh..], d);
        }
        self.attention_calls.set(self.attention_calls.get() + 1);
        let out = Tensor::matrix(lq, d, out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            self.rg(&[q, k, v]),
        ))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::invalid("concat_rows", "no inputs"));
        }
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let c = vals[0].cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for v in &vals {
            if v.cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vals[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor::matrix(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), self.rg(parts)))
    }

    /// Rows `start..start + len` as a `[len, cols]` matrix.
    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                len: va.rows(),
            });
        }
        let c = va.cols();
        let out = Tensor::matrix(len, c, va.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows { a, start }, self.rg(&[a])))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = (*self.value(a)).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), self.rg(&[a])))
    }

    /// Sum of all entries as a rank-0 scalar.
    pub fn sum(&self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.rg(&[a]))
    }

    /// `sum(a * w)` for a constant or differentiable weight of the same shape.
    pub fn dot(&self, a: Var, w: Var) -> Result<Var> {
        let m = self.mul(a, w)?;
        Ok(self.sum(m))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, v) = (vl.rows(), vl.cols());
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if !vl.all_finite() {
            return Err(TensorError::NonFinite { op: "cross_entropy" });
        }
        let mut probs = vec![T::zero(); rows * v];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: v,
                });
            }
            let row = vl.row(r);
            let out = &mut probs[r * v..(r + 1) * v];
            log_softmax_row(row, out);
            loss -= out[t];
            for o in out.iter_mut() {
                *o = o.exp();
            }
        }
        self.bump_softmax(rows);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyIds {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            self.rg(&[logits]),
        ))
    }

    /// `-sum(target * log_softmax(logits))` with a probability-vector target
    /// per row.
    pub fn cross_entropy_probs(&self, logits: Var, target: Var) -> Result<Var> {
        let (vl, vt) = (self.value(logits), self.value(target));
        same_shape("cross_entropy_probs", vl.shape(), vt.shape())?;
        if !vl.all_finite() {
            return Err(TensorError::NonFinite {
                op: "cross_entropy_probs",
            });
        }
        let (rows, v) = (vl.rows(), vl.cols());
        let mut log_probs = vec![T::zero(); rows * v];
        let mut loss = T::zero();
        for r in 0..rows {
            let out = &mut log_probs[r * v..(r + 1) * v];
            log_softmax_row(vl.row(r), out);
            for (&lp, &t) in out.iter().zip(vt.row(r)) {
                loss -= t * lp;
            }
        }
        self.bump_softmax(rows);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyProbs {
                logits,
                target,
                log_probs,
            },
            self.rg(&[logits, target]),
        ))
    }

    /// Summed row-wise categorical KL divergence `sum q (ln q - ln prior)`.
    /// Zero-probability entries of `q` contribute nothing; `prior` is
    /// clamped to the smallest positive normal value.
    pub fn kl_categorical(&self, q: Var, prior: Var) -> Result<Var> {
        let (vq, vp) = (self.value(q), self.value(prior));
        same_shape("kl_categorical", vq.shape(), vp.shape())?;
        let tiny = T::min_positive_value();
        let mut total = T::zero();
        for (&qi, &pi) in vq.data().iter().zip(vp.data()) {
            if qi > T::zero() {
                total += qi * (qi.ln() - pi.max(tiny).ln());
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::Kl { q, prior },
            self.rg(&[q, prior]),
        ))
    }

    /// Inverted dropout. `rate == 0` returns the input unchanged.
    pub fn dropout<R: Rng + ?Sized>(&self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let va = self.value(a);
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..va.numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { a, mask }, self.rg(&[a])))
    }
}
