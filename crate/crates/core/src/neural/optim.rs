use super::{Gradients, NetworkParams, NeuralError};
use crate::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and step counter. `lr` is the rate used by the next step;
/// schedulers overwrite it between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: T,
    pub weight_decay: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, lr: T, weight_decay: T) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            lr,
            weight_decay,
        }
    }

    /// One bias-corrected Adam step with decoupled weight decay
    /// `θ ← θ − η·wd·θ − η·m̂/(√v̂ + ε)`.
    pub fn update(&mut self, grads: &[T], params: &mut [T]) -> Result<(), NeuralError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "adam: {} moments, {} gradients, {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let b1 = T::lit(ADAM_BETA1);
        let b2 = T::lit(ADAM_BETA2);
        let eps = T::lit(ADAM_EPS);
        let t = self.step as i32;
        let c1 = T::one() - T::lit(ADAM_BETA1.powi(t));
        let c2 = T::one() - T::lit(ADAM_BETA2.powi(t));
        let lr = self.lr;
        let decay = lr * self.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - decay * *p - lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn adam_step<T: Real>(state: &mut AdamState<T>, grads: &Gradients<T>, params: &mut NetworkParams<T>) -> Result<(), NeuralError> {
    state.update(&grads.values, &mut params.values)
}
