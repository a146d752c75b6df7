/// Reduce-on-plateau learning-rate schedule driven by a validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    /// Minimum absolute decrease that counts as an improvement.
    pub threshold: f64,
    lr: f64,
    best: Option<f64>,
    since_improvement: usize,
}

impl PlateauScheduler {
    /// Patience 10 epochs, factor 0.1, improvement threshold 1e-8.
    pub fn new(lr: f64) -> Self {
        Self::with_params(lr, 10, 0.1)
    }

    pub fn with_params(lr: f64, patience: usize, factor: f64) -> Self {
        Self { patience, factor, threshold: 1e-8, lr, best: None, since_improvement: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's validation loss and returns the learning rate for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        plateau_step(self, val_loss)
    }
}

pub fn plateau_step(sched: &mut PlateauScheduler, val_loss: f64) -> f64 {
    match sched.best {
        Some(best) if !(val_loss < best - sched.threshold) => {
            sched.since_improvement += 1;
            if sched.since_improvement >= sched.patience {
                sched.lr *= sched.factor;
                sched.since_improvement = 0;
            }
        }
        _ => {
            sched.best = Some(val_loss);
            sched.since_improvement = 0;
        }
    }
    sched.lr
}
