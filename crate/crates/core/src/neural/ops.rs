use super::{Dense, NeuralError};
use crate::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out = W x + b` for row-major `W` of shape `out.len() × x.len()`.
#[inline]
pub(crate) fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = b[r];
        for (wv, xv) in row.iter().zip(x) {
            s += *wv * *xv;
        }
        *o = s;
    }
}

/// Backward of [`affine`]: `dw += dy ⊗ x`, `db += dy`, `dx += Wᵀ dy`.
#[inline]
pub(crate) fn affine_backward<T: Real>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        db[r] += g;
        let dw_row = &mut dw[r * cols..(r + 1) * cols];
        for (d, xv) in dw_row.iter_mut().zip(x) {
            *d += g * *xv;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let row = &w[r * cols..(r + 1) * cols];
            for (d, wv) in dx.iter_mut().zip(row) {
                *d += g * *wv;
            }
        }
    }
}

/// Disjoint mutable views of a dense layer's weight and bias gradients.
#[inline]
pub(crate) fn dense_grads<'a, T>(grad: &'a mut [T], d: &Dense) -> (&'a mut [T], &'a mut [T]) {
    debug_assert_eq!(d.b, d.w + d.out * d.inp);
    let (left, right) = grad.split_at_mut(d.b);
    (&mut left[d.w..], &mut right[..d.out])
}

/// Scaled dot-product attention. `q` and `k` are `n × dk`, `v` is `n × dv`,
/// all row-major; returns `n × dv`.
pub fn attention<T: Real>(q: &[T], k: &[T], v: &[T], n: usize, dk: usize, dv: usize) -> Result<Vec<T>, NeuralError> {
    if dk == 0 || q.len() != n * dk || k.len() != n * dk || v.len() != n * dv {
        return Err(NeuralError::ShapeMismatch(format!(
            "attention with n={n}, dk={dk}, dv={dv} got |Q|={}, |K|={}, |V|={}",
            q.len(),
            k.len(),
            v.len()
        )));
    }
    let mut probs = vec![T::zero(); n * n];
    attention_probs(q, k, n, dk, 0, dk, &mut probs);
    let mut out = vec![T::zero(); n * dv];
    for i in 0..n {
        for j in 0..n {
            let a = probs[i * n + j];
            for c in 0..dv {
                out[i * dv + c] += a * v[j * dv + c];
            }
        }
    }
    Ok(out)
}

/// Softmax attention weights for the column slice `[c0, c0 + dk)` of
/// row-major `q`, `k` with row stride `stride`.
pub(crate) fn attention_probs<T: Real>(q: &[T], k: &[T], n: usize, stride: usize, c0: usize, dk: usize, probs: &mut [T]) {
    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
    for i in 0..n {
        let qi = &q[i * stride + c0..i * stride + c0 + dk];
        let row = &mut probs[i * n..(i + 1) * n];
        let mut m = T::neg_infinity();
        for (j, p) in row.iter_mut().enumerate() {
            let kj = &k[j * stride + c0..j * stride + c0 + dk];
            let mut s = T::zero();
            for (a, b) in qi.iter().zip(kj) {
                s += *a * *b;
            }
            *p = s * scale;
            m = m.max(*p);
        }
        let mut z = T::zero();
        for p in row.iter_mut() {
            *p = (*p - m).exp();
            z += *p;
        }
        for p in row.iter_mut() {
            *p /= z;
        }
    }
}

/// Interleaved sinusoidal encoding of `position`: entry `2i` is
/// `sin(t / 10000^(2i/d))`, entry `2i+1` is `cos(t / 10000^((2i+1)/d))`.
pub fn positional_encoding<T: Real>(position: usize, d: usize) -> Result<Vec<T>, NeuralError> {
    if d % 2 != 0 {
        return Err(NeuralError::OddDimension(d));
    }
    let t = position as f64;
    let df = d as f64;
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let i = i as f64;
        out.push(T::lit((t / 10000f64.powf(2.0 * i / df)).sin()));
        out.push(T::lit((t / 10000f64.powf((2.0 * i + 1.0) / df)).cos()));
    }
    Ok(out)
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row normalization `gamma ⊙ (x − mean)/sqrt(var + eps) + beta` with the
/// biased variance. Returns the normalized (pre-affine) row and `1/std`.
pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], out: &mut [T]) -> (Vec<T>, T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + T::lit(LN_EPS)).sqrt();
    let xhat: Vec<T> = x.iter().map(|v| (*v - mean) * inv).collect();
    for (((o, xh), g), b) in out.iter_mut().zip(&xhat).zip(gamma).zip(beta) {
        *o = *g * *xh + *b;
    }
    (xhat, inv)
}

/// Backward of [`layer_norm`] for one row; accumulates into `dgamma`,
/// `dbeta` and writes `dx`.
pub(crate) fn layer_norm_backward<T: Real>(
    xhat: &[T],
    inv: T,
    gamma: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let n = T::from_usize(xhat.len()).unwrap();
    let mut mean_g = T::zero();
    let mut mean_gx = T::zero();
    for c in 0..xhat.len() {
        dgamma[c] += dy[c] * xhat[c];
        dbeta[c] += dy[c];
        let g = dy[c] * gamma[c];
        mean_g += g;
        mean_gx += g * xhat[c];
    }
    mean_g /= n;
    mean_gx /= n;
    for c in 0..xhat.len() {
        let g = dy[c] * gamma[c];
        dx[c] = inv * (g - mean_g - xhat[c] * mean_gx);
    }
}

pub fn mse_loss<T: Real>(pred: &[T], truth: &[T]) -> Result<T, NeuralError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(NeuralError::LengthMismatch(pred.len(), truth.len()));
    }
    let s = pred.iter().zip(truth).map(|(p, t)| (*p - *t) * (*p - *t)).sum::<T>();
    Ok(s / T::from_usize(pred.len()).unwrap())
}
