use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn mm_nn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×n`, `b: k×n`, `out: m×k`.
pub(crate) fn mm_nt<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out += aᵀ · g` for `a: m×k`, `g: m×n`, `out: k×n`.
pub(crate) fn mm_tn<S: Scalar>(a: &[S], g: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

pub(crate) fn transpose_last2<S: Scalar>(data: &[S], r: usize, c: usize) -> Vec<S> {
    let block = r * c;
    let mut out = vec![S::zero(); data.len()];
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    half * x * (S::one() + (x * S::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let cdf = half * (S::one() + (x * S::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * S::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let s: S = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Row softmax. With `square = Some(t)`, row `i` of every `t×t` block only
/// covers columns `0..=i`; the rest are exactly zero.
pub(crate) fn softmax_rows<S: Scalar>(t: &Tensor<S>, square: Option<usize>) -> Tensor<S> {
    let w = t.last_dim();
    let mut out = vec![S::zero(); t.numel()];
    for r in 0..t.rows() {
        let limit = match square {
            Some(n) => r % n + 1,
            None => w,
        };
        let row = &t.row(r)[..limit];
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let dst = &mut out[r * w..r * w + limit];
        let mut s = S::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            s += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / s;
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

/// Zero-mean, unit-variance rows; also returns `1/sqrt(var + eps)` per row.
pub(crate) fn normalize_rows<S: Scalar>(t: &Tensor<S>, eps: S) -> (Tensor<S>, Vec<S>) {
    let w = t.last_dim();
    let wn = S::of(w as f64);
    let mut out = Vec::with_capacity(t.numel());
    let mut rstds = Vec::with_capacity(t.rows());
    for r in 0..t.rows() {
        let row = t.row(r);
        let mean = row.iter().copied().sum::<S>() / wn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / wn;
        let rstd = S::one() / (var + eps).sqrt();
        out.extend(row.iter().map(|&v| (v - mean) * rstd));
        rstds.push(rstd);
    }
    (Tensor::new(t.shape().to_vec(), out).expect("same shape"), rstds)
}
