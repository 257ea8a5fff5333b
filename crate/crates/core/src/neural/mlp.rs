use super::ops::{affine, affine_backward, dense_grads};
use super::{forward, Architecture, NetworkParams, NeuralError, SeqBatch};
use crate::Real;

fn omega<T: Real>(p: &NetworkParams<T>) -> T {
    match p.arch {
        Architecture::SirenMlp { omega0, .. } => T::lit(omega0),
        _ => unreachable!("not an MLP"),
    }
}

pub(crate) fn forward_sample<T: Real>(p: &NetworkParams<T>, x: &[T]) -> T {
    let w0 = omega(p);
    let mut a = x.to_vec();
    for d in &p.layout.mlp {
        let mut z = vec![T::zero(); d.out];
        affine(&p.values[d.w_range()], &p.values[d.b_range()], &a, &mut z);
        z.iter_mut().for_each(|v| *v = (w0 * *v).sin());
        a = z;
    }
    let h = &p.layout.head;
    let mut y = [T::zero()];
    affine(&p.values[h.w_range()], &p.values[h.b_range()], &a, &mut y);
    y[0]
}

/// Squared error of one sample; adds `scale · (y − target) · dy/dθ` to `grad`.
pub(crate) fn loss_grad_sample<T: Real>(p: &NetworkParams<T>, x: &[T], target: T, scale: T, grad: &mut [T]) -> T {
    let w0 = omega(p);
    // acts[l] is the input to layer l; zs[l] its pre-activation
    let mut acts = vec![x.to_vec()];
    let mut zs = Vec::with_capacity(p.layout.mlp.len());
    for d in &p.layout.mlp {
        let mut z = vec![T::zero(); d.out];
        affine(&p.values[d.w_range()], &p.values[d.b_range()], acts.last().unwrap(), &mut z);
        acts.push(z.iter().map(|v| (w0 * *v).sin()).collect());
        zs.push(z);
    }
    let h = &p.layout.head;
    let mut y = [T::zero()];
    affine(&p.values[h.w_range()], &p.values[h.b_range()], acts.last().unwrap(), &mut y);
    let err = y[0] - target;

    let mut da = vec![T::zero(); h.inp];
    {
        let (dw, db) = dense_grads(grad, h);
        affine_backward(&p.values[h.w_range()], acts.last().unwrap(), &[scale * err], dw, db, Some(&mut da));
    }
    for (l, d) in p.layout.mlp.iter().enumerate().rev() {
        let dz: Vec<T> = zs[l]
            .iter()
            .zip(&da)
            .map(|(z, g)| *g * w0 * (w0 * *z).cos())
            .collect();
        let mut dprev = vec![T::zero(); d.inp];
        let (dw, db) = dense_grads(grad, d);
        let dx = if l > 0 { Some(dprev.as_mut_slice()) } else { None };
        affine_backward(&p.values[d.w_range()], &acts[l], &dz, dw, db, dx);
        da = dprev;
    }
    err * err
}

/// Predictions of a SIREN MLP (or linear model) on flat rows.
pub fn mlp_forward<T: Real>(params: &NetworkParams<T>, batch: &SeqBatch<T>) -> Result<Vec<T>, NeuralError> {
    if !matches!(params.arch, Architecture::SirenMlp { .. }) {
        return Err(NeuralError::ShapeMismatch(format!("{} is not an MLP", params.arch.name())));
    }
    forward(params, batch)
}
