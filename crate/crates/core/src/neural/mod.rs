//! Forecasting networks with hand-derived gradients.
//!
//! Three architectures share one flat parameter vector format
//! ([`NetworkParams`]): a SIREN MLP on flat rows, a stacked LSTM on
//! sequence windows, and an LSTM stack followed by Transformer encoder
//! layers. [`gradients`] returns the exact derivative of the batch MSE with
//! respect to every parameter; [`train`] runs Adam with an optional
//! learning-rate schedule.

use rayon::prelude::*;
use thiserror::Error;

use crate::Real;

mod arch;
mod lstm;
mod mlp;
mod ops;
mod optim;
mod schedule;
mod train;
mod transformer;

pub use arch::{
    init_params, read_checkpoint, write_checkpoint, xavier_bound, Architecture, Checkpoint, Dense,
    EncoderLayer, Gradients, Layout, LstmLayer, NetworkParams, TensorSpec,
};
pub use lstm::{lstm_forward, lstm_step, LstmGates};
pub use mlp::mlp_forward;
pub use ops::{attention, layer_norm, mse_loss, positional_encoding, sigmoid};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{clr_exp_range, PlateauState, PLATEAU_THRESHOLD};
pub use train::{predict_all, train, SchedulerConfig, TrainConfig, TrainReport};
pub use transformer::hybrid_forward;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("invalid architecture: {0}")]
    BadDescriptor(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("positional encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("invalid learning-rate range: {0}")]
    BadRange(String),
    #[error("loss became non-finite in epoch {epoch} (last finite loss {last})")]
    NonFiniteLoss { epoch: usize, last: f64 },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A batch of `batch` windows of `steps` rows with `features` columns,
/// stored `[batch][steps][features]`. Flat samples use `steps == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch<T> {
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
    pub data: Vec<T>,
    pub targets: Vec<T>,
}

impl<T: Real> SeqBatch<T> {
    pub fn new(batch: usize, steps: usize, features: usize, data: Vec<T>, targets: Vec<T>) -> Self {
        assert_eq!(data.len(), batch * steps * features, "batch data length");
        assert_eq!(targets.len(), batch, "batch target length");
        Self {
            batch,
            steps,
            features,
            data,
            targets,
        }
    }

    /// The `[steps][features]` block of sample `b`.
    #[inline]
    pub fn sample(&self, b: usize) -> &[T] {
        let w = self.steps * self.features;
        &self.data[b * w..(b + 1) * w]
    }
}

/// Anything that can hand out batches by index.
pub trait BatchSource<T> {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn gather(&self, idx: &[usize]) -> SeqBatch<T>;
}

fn check_batch<T: Real>(params: &NetworkParams<T>, batch: &SeqBatch<T>) -> Result<(), NeuralError> {
    let input = params.arch.input();
    if batch.features != input {
        return Err(NeuralError::ShapeMismatch(format!(
            "batch has {} features, network expects {input}",
            batch.features
        )));
    }
    if batch.steps == 0 {
        return Err(NeuralError::ShapeMismatch("empty sequence".into()));
    }
    if matches!(params.arch, Architecture::SirenMlp { .. }) && batch.steps != 1 {
        return Err(NeuralError::ShapeMismatch(format!(
            "MLP takes flat rows, got windows of {}",
            batch.steps
        )));
    }
    if params.values.len() != params.layout.total {
        return Err(NeuralError::ShapeMismatch("parameter vector length".into()));
    }
    Ok(())
}

/// Prediction for one `[steps][features]` sample.
fn predict_one<T: Real>(params: &NetworkParams<T>, x: &[T], steps: usize) -> T {
    match params.arch {
        Architecture::SirenMlp { .. } => mlp::forward_sample(params, x),
        Architecture::LstmStack { .. } => lstm::stack_forward_sample(params, x, steps),
        Architecture::LstmTransformer { .. } => transformer::forward_sample(params, x, steps),
    }
}

/// Accumulates `d loss / d params` for one sample into `grad`, given
/// `dy = d loss / d prediction`.
fn backprop_one<T: Real>(params: &NetworkParams<T>, x: &[T], steps: usize, target: T, scale: T, grad: &mut [T]) -> T {
    match params.arch {
        Architecture::SirenMlp { .. } => mlp::loss_grad_sample(params, x, target, scale, grad),
        Architecture::LstmStack { .. } => lstm::loss_grad_sample(params, x, steps, target, scale, grad),
        Architecture::LstmTransformer { .. } => {
            transformer::loss_grad_sample(params, x, steps, target, scale, grad)
        }
    }
}

/// Network output for every sample of `batch`.
pub fn forward<T: Real>(params: &NetworkParams<T>, batch: &SeqBatch<T>) -> Result<Vec<T>, NeuralError> {
    check_batch(params, batch)?;
    Ok((0..batch.batch)
        .into_par_iter()
        .map(|b| predict_one(params, batch.sample(b), batch.steps))
        .collect())
}

/// Samples per parallel work unit. Fixed so the summation order, and thus
/// the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Batch MSE and its exact gradient with respect to every parameter.
pub fn gradients<T: Real>(
    params: &NetworkParams<T>,
    batch: &SeqBatch<T>,
) -> Result<(T, Gradients<T>), NeuralError> {
    check_batch(params, batch)?;
    if batch.batch == 0 {
        return Err(NeuralError::LengthMismatch(0, 0));
    }
    let n = params.values.len();
    let scale = T::lit(2.0) / T::from_usize(batch.batch).unwrap();
    let partials: Vec<(T, Vec<T>)> = (0..batch.batch)
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![T::zero(); n];
            let mut sq = T::zero();
            for &b in chunk {
                sq += backprop_one(params, batch.sample(b), batch.steps, batch.targets[b], scale, &mut g);
            }
            (sq, g)
        })
        .collect();
    let mut total = vec![T::zero(); n];
    let mut sq = T::zero();
    for (s, g) in partials {
        sq += s;
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    Ok((sq / T::from_usize(batch.batch).unwrap(), Gradients { values: total }))
}
