use super::NeuralError;

/// Cyclical learning rate, triangular wave with exponential decay:
/// `cycle = ⌊1 + iter/(2·step)⌋`, `x = |iter/step − 2·cycle + 1|`,
/// `lr = base + (max − base)·max(0, 1 − x)·gamma^iter`.
pub fn clr_exp_range(iter: u64, base: f64, max: f64, step_size: u64, gamma: f64) -> Result<f64, NeuralError> {
    if !(base > 0.0 && max >= base && max.is_finite()) {
        return Err(NeuralError::BadRange(format!("base {base}, max {max}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(NeuralError::BadRange(format!("gamma {gamma}")));
    }
    if step_size == 0 {
        return Err(NeuralError::BadRange("step_size 0".into()));
    }
    let it = iter as f64;
    let s = step_size as f64;
    let cycle = (1.0 + it / (2.0 * s)).floor();
    let x = (it / s - 2.0 * cycle + 1.0).abs();
    Ok(base + (max - base) * (1.0 - x).max(0.0) * gamma.powf(it))
}

/// Relative improvement needed to reset the plateau counter.
pub const PLATEAU_THRESHOLD: f64 = 1e-4;

/// Reduce-on-plateau state. A loss counts as an improvement when it is
/// below `best·(1 − 1e-4)`; after `patience` consecutive evaluations
/// without one the rate is multiplied by `factor` (floored at `min_lr`)
/// and the counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub reductions: usize,
}

impl PlateauState {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            reductions: 0,
        }
    }

    /// Feeds one evaluation and returns the (possibly reduced) rate.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best * (1.0 - PLATEAU_THRESHOLD) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                let next = (self.lr * self.factor).max(self.min_lr);
                if next < self.lr {
                    self.reductions += 1;
                }
                self.lr = next;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
