use super::kernels;
use super::{Node, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Acc<'a, S> {
    nodes: &'a [Node<S>],
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Acc<'_, S> {
    fn add(&mut self, j: usize, g: Tensor<S>) {
        if !self.nodes[j].requires_grad {
            return;
        }
        match &mut self.grads[j] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, j: usize) -> bool {
        self.nodes[j].requires_grad
    }

    fn shaped(&self, j: usize, data: Vec<S>) -> Tensor<S> {
        Tensor::new(self.nodes[j].value.shape().to_vec(), data).expect("gradient matches input shape")
    }
}

/// Fold a gradient of the broadcast result back onto the suffix-shaped operand.
fn reduce_to<S: Scalar>(g: &[S], period: usize) -> Vec<S> {
    let mut out = vec![S::zero(); period];
    for chunk in g.chunks(period) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

pub(super) fn run<S: Scalar>(nodes: &[Node<S>], loss: usize) -> Vec<Option<Tensor<S>>> {
    let mut acc = Acc {
        nodes,
        grads: vec![None; nodes.len()],
    };
    if !nodes[loss].requires_grad {
        return acc.grads;
    }
    acc.grads[loss] = Some(Tensor::scalar(S::one()));
    let val = |j: usize| &nodes[j].value;

    for i in (0..=loss).rev() {
        let Some(g) = acc.grads[i].take() else { continue };
        let out = &nodes[i].value;
        let gd = g.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                acc.add(a, g.clone());
                if acc.wants(b) {
                    let r = reduce_to(gd, val(b).numel());
                    let t = acc.shaped(b, r);
                    acc.add(b, t);
                }
            }
            &Op::Sub(a, b) => {
                acc.add(a, g.clone());
                if acc.wants(b) {
                    let r = reduce_to(gd, val(b).numel()).into_iter().map(|v| -v).collect();
                    let t = acc.shaped(b, r);
                    acc.add(b, t);
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (val(a).data(), val(b).data());
                let period = vb.len();
                if acc.wants(a) {
                    let d = gd.iter().enumerate().map(|(k, &v)| v * vb[k % period]).collect();
                    let t = acc.shaped(a, d);
                    acc.add(a, t);
                }
                if acc.wants(b) {
                    let prod: Vec<S> = gd.iter().zip(va).map(|(&v, &x)| v * x).collect();
                    let t = acc.shaped(b, reduce_to(&prod, period));
                    acc.add(b, t);
                }
            }
            &Op::Scale(a, c) => {
                let t = g.map(|v| v * c);
                acc.add(a, t);
            }
            &Op::ScaleBy(a, s) => {
                let c = val(s).item();
                if acc.wants(s) {
                    let dot: S = gd.iter().zip(val(a).data()).map(|(&v, &x)| v * x).sum();
                    let t = acc.shaped(s, vec![dot]);
                    acc.add(s, t);
                }
                let t = g.map(|v| v * c);
                acc.add(a, t);
            }
            &Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let sa = va.shape();
                let k = sa[sa.len() - 1];
                let mut ga = vec![S::zero(); va.numel()];
                let mut gb = vec![S::zero(); vb.numel()];
                if vb.rank() == 2 {
                    let n = vb.shape()[1];
                    let m = va.numel() / k;
                    if acc.wants(a) {
                        kernels::mm_nt(gd, vb.data(), &mut ga, m, n, k);
                    }
                    if acc.wants(b) {
                        kernels::mm_tn(va.data(), gd, &mut gb, m, k, n);
                    }
                } else {
                    let (batch, m, n) = (sa[0], sa[1], vb.shape()[2]);
                    for t in 0..batch {
                        let gt = &gd[t * m * n..(t + 1) * m * n];
                        if acc.wants(a) {
                            let bt = &vb.data()[t * k * n..(t + 1) * k * n];
                            kernels::mm_nt(gt, bt, &mut ga[t * m * k..(t + 1) * m * k], m, n, k);
                        }
                        if acc.wants(b) {
                            let at = &va.data()[t * m * k..(t + 1) * m * k];
                            kernels::mm_tn(at, gt, &mut gb[t * k * n..(t + 1) * k * n], m, k, n);
                        }
                    }
                }
                if acc.wants(a) {
                    let t = acc.shaped(a, ga);
                    acc.add(a, t);
                }
                if acc.wants(b) {
                    let t = acc.shaped(b, gb);
                    acc.add(b, t);
                }
            }
            &Op::TransposeLast2(a) => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let t = acc.shaped(a, kernels::transpose_last2(gd, r, c));
                acc.add(a, t);
            }
            &Op::Reshape(a) => {
                let t = acc.shaped(a, gd.to_vec());
                acc.add(a, t);
            }
            &Op::Relu(a) => {
                let x = val(a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&v, &x)| if x > S::zero() { v } else { S::zero() })
                    .collect();
                let t = acc.shaped(a, d);
                acc.add(a, t);
            }
            &Op::Gelu(a) => {
                let x = val(a).data();
                let d = gd.iter().zip(x).map(|(&v, &x)| v * kernels::gelu_grad(x)).collect();
                let t = acc.shaped(a, d);
                acc.add(a, t);
            }
            &Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&v, &y)| v * y * (S::one() - y))
                    .collect();
                let t = acc.shaped(a, d);
                acc.add(a, t);
            }
            &Op::Log(a) => {
                let x = val(a).data();
                let d = gd.iter().zip(x).map(|(&v, &x)| v / x).collect();
                let t = acc.shaped(a, d);
                acc.add(a, t);
            }
            &Op::Softmax(input) => {
                let w = out.last_dim();
                let mut d = vec![S::zero(); out.numel()];
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = &gd[r * w..(r + 1) * w];
                    let dot: S = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for c in 0..w {
                        d[r * w + c] = y[c] * (gy[c] - dot);
                    }
                }
                let t = acc.shaped(input, d);
                acc.add(input, t);
            }
            &Op::LayerNorm { input, scale, eps } => {
                let (xhat, rstd) = kernels::normalize_rows(val(input), eps);
                let w = xhat.last_dim();
                let wn = S::of(w as f64);
                let gamma: Option<Vec<S>> = scale.map(|s| val(s).data().to_vec());
                if let Some(s) = scale {
                    if acc.wants(s) {
                        let mut gs = vec![S::zero(); w];
                        for (k, (&v, &xh)) in gd.iter().zip(xhat.data()).enumerate() {
                            gs[k % w] += v * xh;
                        }
                        let t = acc.shaped(s, gs);
                        acc.add(s, t);
                    }
                }
                if acc.wants(input) {
                    let mut d = vec![S::zero(); xhat.numel()];
                    for r in 0..xhat.rows() {
                        let xh = xhat.row(r);
                        let gx: Vec<S> = (0..w)
                            .map(|c| {
                                let v = gd[r * w + c];
                                gamma.as_ref().map_or(v, |gm| v * gm[c])
                            })
                            .collect();
                        let mean_g = gx.iter().copied().sum::<S>() / wn;
                        let mean_gx = gx.iter().zip(xh).map(|(&a, &b)| a * b).sum::<S>() / wn;
                        for c in 0..w {
                            d[r * w + c] = rstd[r] * (gx[c] - mean_g - xh[c] * mean_gx);
                        }
                    }
                    let t = acc.shaped(input, d);
                    acc.add(input, t);
                }
            }
            Op::GatherRows { table, rows } => {
                let table = *table;
                if acc.wants(table) {
                    let w = out.last_dim();
                    let mut d = vec![S::zero(); val(table).numel()];
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..w {
                            d[r * w + c] += gd[k * w + c];
                        }
                    }
                    let t = acc.shaped(table, d);
                    acc.add(table, t);
                }
            }
            Op::SegmentMean { input, segments } => {
                let input = *input;
                let w = out.last_dim();
                let mut d = vec![S::zero(); val(input).numel()];
                for (j, &(s, e)) in segments.iter().enumerate() {
                    let inv = S::one() / S::of((e - s) as f64);
                    for r in s..e {
                        for c in 0..w {
                            d[r * w + c] += gd[j * w + c] * inv;
                        }
                    }
                }
                let t = acc.shaped(input, d);
                acc.add(input, t);
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    if acc.wants(p) {
                        let mut d = Vec::with_capacity(val(p).numel());
                        for r in 0..out.rows() {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        let t = acc.shaped(p, d);
                        acc.add(p, t);
                    }
                    offset += w;
                }
            }
            &Op::SliceLast { input, start } => {
                let wide = val(input).last_dim();
                let len = out.last_dim();
                let mut d = vec![S::zero(); val(input).numel()];
                for r in 0..out.rows() {
                    d[r * wide + start..r * wide + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                let t = acc.shaped(input, d);
                acc.add(input, t);
            }
            &Op::Sum(a) => {
                let n = val(a).numel();
                let t = acc.shaped(a, vec![gd[0]; n]);
                acc.add(a, t);
            }
            &Op::Mean(a) => {
                let n = val(a).numel();
                let t = acc.shaped(a, vec![gd[0] / S::of(n as f64); n]);
                acc.add(a, t);
            }
            &Op::RowwiseMatMul { x, w } => {
                let (vx, vw) = (val(x), val(w));
                let (rows, inner) = (vx.shape()[0], vx.shape()[1]);
                let cols = out.last_dim();
                let mut gx = vec![S::zero(); vx.numel()];
                let mut gw = vec![S::zero(); vw.numel()];
                for r in 0..rows {
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let wr = &vw.data()[r * inner * cols..(r + 1) * inner * cols];
                    kernels::mm_nt(gr, wr, &mut gx[r * inner..(r + 1) * inner], 1, cols, inner);
                    let xr = &vx.data()[r * inner..(r + 1) * inner];
                    kernels::mm_tn(xr, gr, &mut gw[r * inner * cols..(r + 1) * inner * cols], 1, inner, cols);
                }
                let tx = acc.shaped(x, gx);
                acc.add(x, tx);
                let tw = acc.shaped(w, gw);
                acc.add(w, tw);
            }
            &Op::ScaleRows { x, w } => {
                let (vx, vw) = (val(x).data(), val(w).data());
                let d = out.last_dim();
                if acc.wants(w) {
                    let mut gw = vec![S::zero(); vw.len()];
                    for (k, (&v, &xv)) in gd.iter().zip(vx).enumerate() {
                        gw[k / d] += v * xv;
                    }
                    let t = acc.shaped(w, gw);
                    acc.add(w, t);
                }
                if acc.wants(x) {
                    let gx = gd.iter().enumerate().map(|(k, &v)| v * vw[k / d]).collect();
                    let t = acc.shaped(x, gx);
                    acc.add(x, t);
                }
            }
            Op::PickPerRow { x, cols } => {
                let x = *x;
                let n = val(x).last_dim();
                let mut d = vec![S::zero(); val(x).numel()];
                for (r, &c) in cols.iter().enumerate() {
                    d[r * n + c] += gd[r];
                }
                let t = acc.shaped(x, d);
                acc.add(x, t);
            }
            Op::CrossEntropy { logits, targets } => {
                let logits = *logits;
                let probs = kernels::softmax_rows(val(logits), None);
                let v = probs.last_dim();
                let scale = gd[0] / S::of(targets.len() as f64);
                let mut d: Vec<S> = probs.data().iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * v + t] -= scale;
                }
                let t = acc.shaped(logits, d);
                acc.add(logits, t);
            }
        }
        acc.grads[i] = Some(g);
    }
    acc.grads
}
