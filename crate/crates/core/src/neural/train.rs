use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, clr_exp_range, forward, gradients, AdamState, BatchSource, NetworkParams, NeuralError, PlateauState};
use crate::report::{regression_metrics, Metrics};
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerConfig {
    None,
    /// Stepped once per optimizer step.
    ClrExpRange {
        base: f64,
        max: f64,
        step_size: u64,
        gamma: f64,
    },
    /// Stepped once per epoch on the mean training loss of that epoch.
    ReduceOnPlateau {
        factor: f64,
        patience: usize,
        min_lr: f64,
    },
}

impl SchedulerConfig {
    /// `base = lr/10`, `max = lr·10`, 2000-step half cycles, gamma 0.99994.
    pub fn clr_default(lr: f64) -> Self {
        SchedulerConfig::ClrExpRange {
            base: lr / 10.0,
            max: lr * 10.0,
            step_size: 2000,
            gamma: 0.99994,
        }
    }

    pub fn plateau_default() -> Self {
        SchedulerConfig::ReduceOnPlateau {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub scheduler: SchedulerConfig,
    pub batch_size: usize,
    /// Optimizer steps per epoch. `None` means one pass over the training
    /// set; otherwise batches are drawn from a reshuffled stream that
    /// carries over between epochs.
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: String| Err(NeuralError::BadConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.batches_per_epoch == Some(0) {
            return bad("batch size and batches per epoch must be positive".into());
        }
        match self.scheduler {
            SchedulerConfig::None => {}
            SchedulerConfig::ClrExpRange {
                base,
                max,
                step_size,
                gamma,
            } => {
                clr_exp_range(0, base, max, step_size, gamma)?;
            }
            SchedulerConfig::ReduceOnPlateau { factor, patience, min_lr } => {
                if !(factor > 0.0 && factor < 1.0) || patience == 0 || !(min_lr >= 0.0) {
                    return bad(format!("plateau factor {factor}, patience {patience}, min_lr {min_lr}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Sample-weighted mean batch loss of each epoch, measured before each
    /// step's update.
    pub losses: Vec<f64>,
    /// Rate used by the last step of each epoch.
    pub lrs: Vec<f64>,
    pub wall_seconds: f64,
    pub steps: u64,
    pub train_metrics: Option<Metrics<f64>>,
    pub test_metrics: Option<Metrics<f64>>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// `epoch,loss,lr` rows, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for (e, (l, r)) in self.losses.iter().zip(&self.lrs).enumerate() {
            let _ = writeln!(s, "{},{:e},{:e}", e + 1, l, r);
        }
        s
    }
}

/// Endless stream of index batches: a seeded permutation consumed in
/// order and redrawn when exhausted.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cursor {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn restart(&mut self) {
        self.pos = self.order.len();
    }

    fn next(&mut self, size: usize) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let out = &self.order[self.pos..end];
        self.pos = end;
        out
    }
}

/// Predictions and labels for every sample of `source`, in index order.
pub fn predict_all<T: Real, S: BatchSource<T> + ?Sized>(
    params: &NetworkParams<T>,
    source: &S,
    batch_size: usize,
) -> Result<(Vec<T>, Vec<T>), NeuralError> {
    let n = source.len();
    let mut pred = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = source.gather(chunk);
        pred.extend(forward(params, &b)?);
        truth.extend_from_slice(&b.targets);
    }
    Ok((pred, truth))
}

fn metrics_of<T: Real, S: BatchSource<T> + ?Sized>(
    params: &NetworkParams<T>,
    source: &S,
    batch_size: usize,
) -> Result<Option<Metrics<f64>>, NeuralError> {
    if source.is_empty() {
        return Ok(None);
    }
    let (p, t) = predict_all(params, source, batch_size)?;
    let p: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
    let t: Vec<f64> = t.iter().map(|v| v.as_f64()).collect();
    Ok(regression_metrics(&p, &t).ok())
}

/// Trains `params` with Adam. Each epoch draws its batches, accumulates
/// the loss, takes one optimizer step per batch (stepping a cyclical
/// scheduler per step) and then steps a plateau scheduler on the epoch
/// loss. Aborts with [`NeuralError::NonFiniteLoss`] as soon as a batch
/// loss is not finite.
pub fn train<T: Real, S: BatchSource<T> + ?Sized>(
    mut params: NetworkParams<T>,
    train_set: &S,
    test_set: Option<&S>,
    config: &TrainConfig,
) -> Result<(NetworkParams<T>, TrainReport), NeuralError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NeuralError::BadConfig("empty training set".into()));
    }
    let start = Instant::now();
    let n = train_set.len();
    let per_epoch = config.batches_per_epoch.unwrap_or_else(|| n.div_ceil(config.batch_size));
    let mut cursor = Cursor::new(n, config.seed);
    let mut opt = AdamState::new(params.len(), T::lit(config.learning_rate), T::lit(config.weight_decay));
    let mut plateau = match config.scheduler {
        SchedulerConfig::ReduceOnPlateau { factor, patience, min_lr } => {
            Some(PlateauState::new(config.learning_rate, factor, patience, min_lr))
        }
        _ => None,
    };
    let mut losses = Vec::with_capacity(config.epochs);
    let mut lrs = Vec::with_capacity(config.epochs);
    let mut last_finite = f64::NAN;
    for epoch in 0..config.epochs {
        if config.batches_per_epoch.is_none() {
            cursor.restart();
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut lr_used = opt.lr.as_f64();
        for _ in 0..per_epoch {
            let batch = train_set.gather(cursor.next(config.batch_size));
            let (loss, grads) = gradients(&params, &batch)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(NeuralError::NonFiniteLoss {
                    epoch: epoch + 1,
                    last: last_finite,
                });
            }
            last_finite = loss;
            if let SchedulerConfig::ClrExpRange {
                base,
                max,
                step_size,
                gamma,
            } = config.scheduler
            {
                opt.lr = T::lit(clr_exp_range(opt.step, base, max, step_size, gamma)?);
            }
            lr_used = opt.lr.as_f64();
            adam_step(&mut opt, &grads, &mut params)?;
            sum += loss * batch.batch as f64;
            count += batch.batch;
        }
        let epoch_loss = sum / count as f64;
        losses.push(epoch_loss);
        lrs.push(lr_used);
        if let Some(p) = plateau.as_mut() {
            opt.lr = T::lit(p.step(epoch_loss));
        }
    }
    if !params.all_finite() {
        return Err(NeuralError::NonFiniteLoss {
            epoch: config.epochs,
            last: last_finite,
        });
    }
    let eval_batch = config.batch_size.max(256);
    let train_metrics = metrics_of(&params, train_set, eval_batch)?;
    let test_metrics = match test_set {
        Some(t) => metrics_of(&params, t, eval_batch)?,
        None => None,
    };
    let report = TrainReport {
        losses,
        lrs,
        wall_seconds: start.elapsed().as_secs_f64(),
        steps: opt.step,
        train_metrics,
        test_metrics,
    };
    Ok((params, report))
}
