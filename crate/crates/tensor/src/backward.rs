use crate::error::{Result, TensorError};
use crate::graph::{Graph, Node, Op, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::Tensor;

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    bindings: Vec<(u64, ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when `v` was not reached.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Gradients of every trainable parameter of `store` bound in the graph,
    /// zeros for bound parameters the loss does not reach.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.bindings
            .iter()
            .filter(|(sid, _, _)| *sid == store.id())
            .map(|&(_, id, v)| (id, self.wrt(v)))
            .collect()
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl<T: Scalar> Graph<T> {
    /// Reverse sweep from a scalar loss. Each node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.all_finite() {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            bindings: self.bindings.borrow().clone(),
        })
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let node = &nodes[i];
    let rg = |v: Var| nodes[v.0].requires_grad;
    let shape = |v: Var| nodes[v.0].value.shape().to_vec();
    let val = |v: Var| &*nodes[v.0].value;
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b] {
                if rg(p) {
                    accumulate(&mut grads[p.0], &shape(p), |d| add_into(d, gd));
                }
            }
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                accumulate(&mut grads[a.0], &shape(*a), |d| add_into(d, gd));
            }
            if rg(*b) {
                accumulate(&mut grads[b.0], &shape(*b), |d| {
                    for (x, &y) in d.iter_mut().zip(gd) {
                        *x -= y;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if rg(*a) {
                accumulate(&mut grads[a.0], &shape(*a), |d| {
                    for ((x, &y), &w) in d.iter_mut().zip(gd).zip(vb.data()) {
                        *x += y * w;
                    }
                });
            }
            if rg(*b) {
                accumulate(&mut grads[b.0], &shape(*b), |d| {
                    for ((x, &y), &w) in d.iter_mut().zip(gd).zip(va.data()) {
                        *x += y * w;
                    }
                });
            }
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for (x, &y) in d.iter_mut().zip(gd) {
                    *x += c * y;
                }
            });
        }
        Op::AddRow(x, b) => {
            if rg(*x) {
                accumulate(&mut grads[x.0], &shape(*x), |d| add_into(d, gd));
            }
            if rg(*b) {
                let c = g.cols();
                accumulate(&mut grads[b.0], &shape(*b), |d| {
                    for r in 0..g.rows() {
                        add_into(d, &gd[r * c..(r + 1) * c]);
                    }
                });
            }
        }
        Op::MatMul { a, b, ta, tb } => {
            let (va, vb) = (val(*a), val(*b));
            let mut aop = MatView::row_major(va.data(), va.rows(), va.cols());
            let mut bop = MatView::row_major(vb.data(), vb.rows(), vb.cols());
            if *ta {
                aop = aop.t();
            }
            if *tb {
                bop = bop.t();
            }
            let dc = MatView::row_major(gd, aop.rows, bop.cols);
            if rg(*a) {
                accumulate(&mut grads[a.0], &shape(*a), |d| {
                    if *ta {
                        gemm(bop, dc.t(), T::one(), d, aop.rows);
                    } else {
                        gemm(dc, bop.t(), T::one(), d, aop.cols);
                    }
                });
            }
            if rg(*b) {
                accumulate(&mut grads[b.0], &shape(*b), |d| {
                    if *tb {
                        gemm(dc.t(), aop, T::one(), d, bop.rows);
                    } else {
                        gemm(aop.t(), dc, T::one(), d, bop.cols);
                    }
                });
            }
        }
        Op::Gather { table, ids } => {
            let c = g.cols();
            accumulate(&mut grads[table.0], &shape(*table), |d| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut d[id * c..(id + 1) * c], &gd[r * c..(r + 1) * c]);
                }
            });
        }
        Op::Softmax(a) => {
            let y = &node.value;
            let c = y.cols();
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * c..(r + 1) * c];
                    let dotp: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        d[r * c + j] += yr[j] * (gr[j] - dotp);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let y = &node.value;
            let c = y.cols();
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * c..(r + 1) * c];
                    let s: T = gr.iter().copied().sum();
                    for j in 0..c {
                        d[r * c + j] += gr[j] - yr[j].exp() * s;
                    }
                }
            });
        }
        Op::Log(a) => {
            let va = val(*a);
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for ((x, &y), &v) in d.iter_mut().zip(gd).zip(va.data()) {
                    *x += y / v;
                }
            });
        }
        Op::Exp(a) => {
            let y = &node.value;
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for ((x, &gy), &v) in d.iter_mut().zip(gd).zip(y.data()) {
                    *x += gy * v;
                }
            });
        }
        Op::Relu(a) => {
            let va = val(*a);
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for ((x, &gy), &v) in d.iter_mut().zip(gd).zip(va.data()) {
                    if v > T::zero() {
                        *x += gy;
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let c = g.cols();
            let rows = g.rows();
            let vg = val(*gain);
            if rg(*x) {
                let n = T::from_usize(c).unwrap();
                accumulate(&mut grads[x.0], &shape(*x), |d| {
                    let mut dxhat = vec![T::zero(); c];
                    for r in 0..rows {
                        let gr = &gd[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            dxhat[j] = gr[j] * vg.data()[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * hr[j];
                        }
                        m1 /= n;
                        m2 /= n;
                        for j in 0..c {
                            d[r * c + j] += rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            if rg(*gain) {
                accumulate(&mut grads[gain.0], &shape(*gain), |d| {
                    for r in 0..rows {
                        for j in 0..c {
                            d[j] += gd[r * c + j] * xhat[r * c + j];
                        }
                    }
                });
            }
            if rg(*bias) {
                accumulate(&mut grads[bias.0], &shape(*bias), |d| {
                    for r in 0..rows {
                        add_into(d, &gd[r * c..(r + 1) * c]);
                    }
                });
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        } => attention_backward(nodes, grads, gd, (*q, *k, *v), *heads, probs),
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p.0].value.numel();
                if rg(p) {
                    accumulate(&mut grads[p.0], &shape(p), |d| {
                        add_into(d, &gd[offset..offset + n])
                    });
                }
                offset += n;
            }
        }
        Op::SliceRows { a, start } => {
            let c = g.cols();
            let off = start * c;
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                add_into(&mut d[off..off + gd.len()], gd)
            });
        }
        Op::Reshape(a) | Op::Sum(a) => {
            let broadcast = matches!(node.op, Op::Sum(_));
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                if broadcast {
                    let s = gd[0];
                    for x in d.iter_mut() {
                        *x += s;
                    }
                } else {
                    add_into(d, gd);
                }
            });
        }
        Op::CrossEntropyIds {
            logits,
            targets,
            probs,
        } => {
            let s = gd[0];
            let c = nodes[logits.0].value.cols();
            accumulate(&mut grads[logits.0], &shape(*logits), |d| {
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += s * probs[r * c + j];
                    }
                    d[r * c + t] -= s;
                }
            });
        }
        Op::CrossEntropyProbs {
            logits,
            target,
            log_probs,
        } => {
            let s = gd[0];
            let vt = val(*target);
            let c = vt.cols();
            if rg(*logits) {
                accumulate(&mut grads[logits.0], &shape(*logits), |d| {
                    for r in 0..vt.rows() {
                        let tr = vt.row(r);
                        let mass: T = tr.iter().copied().sum();
                        for j in 0..c {
                            d[r * c + j] += s * (log_probs[r * c + j].exp() * mass - tr[j]);
                        }
                    }
                });
            }
            if rg(*target) {
                accumulate(&mut grads[target.0], &shape(*target), |d| {
                    for (x, &lp) in d.iter_mut().zip(log_probs) {
                        *x -= s * lp;
                    }
                });
            }
        }
        Op::Kl { q, prior } => {
            let s = gd[0];
            let (vq, vp) = (val(*q), val(*prior));
            let tiny = T::min_positive_value();
            if rg(*q) {
                accumulate(&mut grads[q.0], &shape(*q), |d| {
                    for ((x, &qi), &pi) in d.iter_mut().zip(vq.data()).zip(vp.data()) {
                        if qi > T::zero() {
                            *x += s * (qi.ln() - pi.max(tiny).ln() + T::one());
                        }
                    }
                });
            }
            if rg(*prior) {
                accumulate(&mut grads[prior.0], &shape(*prior), |d| {
                    for ((x, &qi), &pi) in d.iter_mut().zip(vq.data()).zip(vp.data()) {
                        *x -= s * qi / pi.max(tiny);
                    }
                });
            }
        }
        Op::Dropout { a, mask } => {
            accumulate(&mut grads[a.0], &shape(*a), |d| {
                for ((x, &gy), &m) in d.iter_mut().zip(gd).zip(mask) {
                    *x += gy * m;
                }
            });
        }
    }
}

fn add_into<T: Scalar>(d: &mut [T], s: &[T]) {
    for (x, &y) in d.iter_mut().zip(s) {
        *x += y;
    }
}

fn head_view<T>(data: &[T], h: usize, rows: usize, dh: usize, d: usize) -> MatView<'_, T> {
    MatView {
        data: &data[h * dh..],
        rows,
        cols: dh,
        row_stride: d,
        col_stride: 1,
    }
}

fn attention_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    gd: &[T],
    (q, k, v): (Var, Var, Var),
    heads: usize,
    probs: &[T],
) {
    let (vq, vk, vv) = (&*nodes[q.0].value, &*nodes[k.0].value, &*nodes[v.0].value);
    let d = vq.cols();
    let (lq, lk) = (vq.rows(), vk.rows());
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dq = vec![T::zero(); lq * d];
    let mut dk = vec![T::zero(); lk * d];
    let mut dv = vec![T::zero(); lk * d];
    let mut dp = vec![T::zero(); lq * lk];
    for h in 0..heads {
        let p = MatView::row_major(&probs[h * lq * lk..(h + 1) * lq * lk], lq, lk);
        let dout = head_view(gd, h, lq, dh, d);
        gemm(dout, head_view(vv.data(), h, lk, dh, d).t(), T::zero(), &mut dp, lk);
        gemm(p.t(), dout, T::one(), &mut dv[h * dh..], d);
        for i in 0..lq {
            let pr = &p.data[i * lk..(i + 1) * lk];
            let dr = &mut dp[i * lk..(i + 1) * lk];
            let dotp: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (x, &pp) in dr.iter_mut().zip(pr) {
                *x = pp * (*x - dotp) * scale;
            }
        }
        let ds = MatView::row_major(&dp, lq, lk);
        gemm(ds, head_view(vk.data(), h, lk, dh, d), T::one(), &mut dq[h * dh..], d);
        gemm(ds.t(), head_view(vq.data(), h, lq, dh, d), T::one(), &mut dk[h * dh..], d);
    }
    for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
        if nodes[var.0].requires_grad {
            let shape = nodes[var.0].value.shape().to_vec();
            accumulate(&mut grads[var.0], &shape, |dst| add_into(dst, &buf));
        }
    }
}
