use super::ops::{affine, affine_backward, dense_grads, sigmoid};
use super::{forward, Architecture, LstmLayer, NetworkParams, NeuralError, SeqBatch};
use crate::Real;

/// Borrowed gate parameters of one LSTM layer: `w` is the `4H × (H + input)`
/// stack of forget, input, candidate and output gate matrices acting on
/// `[h_prev, x]`, `b` the matching `4H` biases.
#[derive(Debug, Clone, Copy)]
pub struct LstmGates<'a, T> {
    pub w: &'a [T],
    pub b: &'a [T],
    pub input: usize,
    pub hidden: usize,
}

impl<'a, T: Real> LstmGates<'a, T> {
    pub fn new(w: &'a [T], b: &'a [T], input: usize, hidden: usize) -> Result<Self, NeuralError> {
        if w.len() != 4 * hidden * (hidden + input) || b.len() != 4 * hidden {
            return Err(NeuralError::ShapeMismatch(format!(
                "gate block for input {input}, hidden {hidden} got |W|={}, |b|={}",
                w.len(),
                b.len()
            )));
        }
        Ok(Self { w, b, input, hidden })
    }

    /// Gates of layer `l` of a recurrent model.
    pub fn of(params: &'a NetworkParams<T>, l: usize) -> Self {
        let layer = &params.layout.lstm[l];
        Self {
            w: &params.values[layer.w_range()],
            b: &params.values[layer.b_range()],
            input: layer.input,
            hidden: layer.hidden,
        }
    }
}

/// What one step keeps for the backward pass.
pub(crate) struct StepCache<T> {
    hx: Vec<T>,
    /// post-activation f, i, C̃, o
    gates: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

/// One step; returns `(h, c, cache)`.
fn step_cached<T: Real>(g: &LstmGates<T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> (Vec<T>, Vec<T>, StepCache<T>) {
    let hd = g.hidden;
    let mut hx = Vec::with_capacity(hd + g.input);
    hx.extend_from_slice(h_prev);
    hx.extend_from_slice(x);
    let mut gates = vec![T::zero(); 4 * hd];
    affine(g.w, g.b, &hx, &mut gates);
    for (k, v) in gates.iter_mut().enumerate() {
        *v = if k / hd == 2 { v.tanh() } else { sigmoid(*v) };
    }
    let mut c = vec![T::zero(); hd];
    let mut h = vec![T::zero(); hd];
    let mut tanh_c = vec![T::zero(); hd];
    for j in 0..hd {
        let (f, i, cc, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
        c[j] = f * c_prev[j] + i * cc;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    let cache = StepCache {
        hx,
        gates,
        c_prev: c_prev.to_vec(),
        tanh_c,
    };
    (h, c, cache)
}

/// `f = σ(W_f[h,x] + b_f)`, `i = σ(W_i[h,x] + b_i)`, `C̃ = tanh(W_C[h,x] + b_C)`,
/// `o = σ(W_o[h,x] + b_o)`, `c = f⊙c_prev + i⊙C̃`, `h = o⊙tanh(c)`.
pub fn lstm_step<T: Real>(gates: &LstmGates<T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>), NeuralError> {
    if x.len() != gates.input || h_prev.len() != gates.hidden || c_prev.len() != gates.hidden {
        return Err(NeuralError::ShapeMismatch(format!(
            "lstm step expects x[{}], h[{}], c[{}]",
            gates.input, gates.hidden, gates.hidden
        )));
    }
    let (h, c, _) = step_cached(gates, x, h_prev, c_prev);
    Ok((h, c))
}

/// Runs one layer over `steps` rows of `xs`; returns the h sequence.
fn layer_forward<T: Real>(g: &LstmGates<T>, xs: &[T], steps: usize, caches: Option<&mut Vec<StepCache<T>>>) -> Vec<T> {
    let hd = g.hidden;
    let mut h = vec![T::zero(); hd];
    let mut c = vec![T::zero(); hd];
    let mut hs = Vec::with_capacity(steps * hd);
    let mut store = caches;
    for t in 0..steps {
        let (hn, cn, cache) = step_cached(g, &xs[t * g.input..(t + 1) * g.input], &h, &c);
        hs.extend_from_slice(&hn);
        if let Some(s) = store.as_deref_mut() {
            s.push(cache);
        }
        h = hn;
        c = cn;
    }
    hs
}

/// Full BPTT through one layer. `dhs` is the loss gradient with respect to
/// each emitted h; returns the gradient with respect to each input row
/// when `want_dx`.
fn layer_backward<T: Real>(
    layer: &LstmLayer,
    w: &[T],
    caches: &[StepCache<T>],
    dhs: &[T],
    grad: &mut [T],
    want_dx: bool,
) -> Vec<T> {
    let hd = layer.hidden;
    let cols = layer.cols();
    let steps = caches.len();
    let mut dxs = if want_dx { vec![T::zero(); steps * layer.input] } else { Vec::new() };
    let mut dh_next = vec![T::zero(); hd];
    let mut dc_next = vec![T::zero(); hd];
    let mut dz = vec![T::zero(); 4 * hd];
    let mut dhx = vec![T::zero(); cols];
    let (left, right) = grad.split_at_mut(layer.b);
    let dw = &mut left[layer.w..];
    let db = &mut right[..4 * hd];
    for t in (0..steps).rev() {
        let c = &caches[t];
        for j in 0..hd {
            let (f, i, cc, o) = (c.gates[j], c.gates[hd + j], c.gates[2 * hd + j], c.gates[3 * hd + j]);
            let dh = dhs[t * hd + j] + dh_next[j];
            let tc = c.tanh_c[j];
            let dc = dc_next[j] + dh * o * (T::one() - tc * tc);
            dz[j] = dc * c.c_prev[j] * f * (T::one() - f);
            dz[hd + j] = dc * cc * i * (T::one() - i);
            dz[2 * hd + j] = dc * i * (T::one() - cc * cc);
            dz[3 * hd + j] = dh * tc * o * (T::one() - o);
            dc_next[j] = dc * f;
        }
        dhx.iter_mut().for_each(|v| *v = T::zero());
        affine_backward(w, &c.hx, &dz, dw, db, Some(&mut dhx));
        dh_next.copy_from_slice(&dhx[..hd]);
        if want_dx {
            dxs[t * layer.input..(t + 1) * layer.input].copy_from_slice(&dhx[hd..]);
        }
    }
    dxs
}

/// Top-layer h sequence of the LSTM stack.
pub(crate) fn stack_forward_seq<T: Real>(
    p: &NetworkParams<T>,
    x: &[T],
    steps: usize,
    mut caches: Option<&mut Vec<Vec<StepCache<T>>>>,
) -> Vec<T> {
    let mut seq = x.to_vec();
    for l in 0..p.layout.lstm.len() {
        let g = LstmGates::of(p, l);
        let layer_cache = caches.as_deref_mut().map(|c| {
            c.push(Vec::with_capacity(steps));
            c.last_mut().unwrap()
        });
        seq = layer_forward(&g, &seq, steps, layer_cache);
    }
    seq
}

/// Backward through the whole stack given the gradient on the top-layer
/// h sequence.
pub(crate) fn stack_backward<T: Real>(p: &NetworkParams<T>, caches: &[Vec<StepCache<T>>], dtop: Vec<T>, grad: &mut [T]) {
    let mut d = dtop;
    for (l, layer) in p.layout.lstm.iter().enumerate().rev() {
        d = layer_backward(layer, &p.values[layer.w_range()], &caches[l], &d, grad, l > 0);
    }
}

fn head<T: Real>(p: &NetworkParams<T>, h: &[T]) -> T {
    let hd = &p.layout.head;
    let mut y = [T::zero()];
    affine(&p.values[hd.w_range()], &p.values[hd.b_range()], h, &mut y);
    y[0]
}

pub(crate) fn stack_forward_sample<T: Real>(p: &NetworkParams<T>, x: &[T], steps: usize) -> T {
    let hs = stack_forward_seq(p, x, steps, None);
    let hd = p.layout.head.inp;
    head(p, &hs[(steps - 1) * hd..])
}

pub(crate) fn loss_grad_sample<T: Real>(
    p: &NetworkParams<T>,
    x: &[T],
    steps: usize,
    target: T,
    scale: T,
    grad: &mut [T],
) -> T {
    let mut caches = Vec::with_capacity(p.layout.lstm.len());
    let hs = stack_forward_seq(p, x, steps, Some(&mut caches));
    let hd = p.layout.head.inp;
    let last = &hs[(steps - 1) * hd..];
    let err = head(p, last) - target;
    let mut dtop = vec![T::zero(); steps * hd];
    {
        let h = &p.layout.head;
        let (dw, db) = dense_grads(grad, h);
        affine_backward(&p.values[h.w_range()], last, &[scale * err], dw, db, Some(&mut dtop[(steps - 1) * hd..]));
    }
    stack_backward(p, &caches, dtop, grad);
    err * err
}

/// Predictions of a stacked LSTM on `[B][L][input]` windows.
pub fn lstm_forward<T: Real>(params: &NetworkParams<T>, batch: &SeqBatch<T>) -> Result<Vec<T>, NeuralError> {
    if !matches!(params.arch, Architecture::LstmStack { .. }) {
        return Err(NeuralError::ShapeMismatch(format!("{} is not an LSTM stack", params.arch.name())));
    }
    forward(params, batch)
}
