//! Two-phase training: source-modality training of the factorized model,
//! then target-modality training of the augmentation branches only.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::detector::{DetectorGrads, ToyDetector};
use crate::real::Real;
use crate::tensor::PNorm;
use crate::train::adam::AdamState;
use crate::train::objective::{evaluate_loss, summed_objective, LossConfig, LossTerms, Sample};
use crate::train::scheduler::PlateauScheduler;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub omega_c: f64,
    /// `None` omits the complementarity term.
    pub p_norm: Option<PNorm>,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub accum_steps: usize,
    pub patience: usize,
    pub sched_factor: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale settings: 200 epochs, mini-batches of 40 accumulated over
    /// two iterations, lr 1e-5 then 1e-3, ω_c = 0.01.
    pub fn reference() -> Self {
        Self {
            omega_c: 0.01,
            p_norm: None,
            lr_phase1: 1e-5,
            lr_phase2: 1e-3,
            epochs: 200,
            batch_size: 40,
            accum_steps: 2,
            patience: 10,
            sched_factor: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_c >= 0.0 && self.omega_c.is_finite()) {
            return Err(Error::Config(format!("omega_c must be finite and ≥ 0, got {}", self.omega_c)));
        }
        for (name, lr) in [("lr_phase1", self.lr_phase1), ("lr_phase2", self.lr_phase2)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {lr}")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 || self.accum_steps == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size, accum_steps and patience must be positive".into()));
        }
        if !(self.sched_factor > 0.0 && self.sched_factor <= 1.0) {
            return Err(Error::Config(format!("sched_factor must lie in (0, 1], got {}", self.sched_factor)));
        }
        Ok(())
    }
}

/// Desk-scale defaults: fewer epochs and smaller batches than [`TrainConfig::reference`],
/// and a from-scratch learning rate for phase 1.
impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr_phase1: 2e-3, epochs: 30, batch_size: 8, ..Self::reference() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub split: Split,
    pub losses: LossTerms,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {} {}", self.epoch, self.split, self.losses.l_d, self.losses.l_c, self.losses.l_f, self.lr)
    }
}

/// Mean losses of the images that contributed to one optimizer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: LossTerms,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl History {
    /// One `epoch split L_d L_c L_f lr` line per epoch record.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |r| r.split == split)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Checkpoint with the lowest validation `L_d`.
    pub model: ToyDetector<T>,
    /// Weights after the last epoch.
    pub last: ToyDetector<T>,
    pub history: History,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains every parameter of a non-augmented model on source-modality data.
pub fn train_phase1<T: Real>(
    model: &ToyDetector<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if model.layers.iter().any(|l| l.delta().is_some()) {
        return Err(Error::State("phase 1 expects a model without augmentation branches".into()));
    }
    let mut model = model.clone();
    for l in &mut model.layers {
        l.unfreeze_base();
    }
    model.head.frozen = false;
    let loss = LossConfig { omega_c: 0.0, p_norm: None, classes: model.classes };
    run_phase(model, train, val, config, config.lr_phase1, config.seed, &loss)
}

/// Trains the augmentation branches (and head) of an augmented model on
/// target-modality data, with the complementarity term when `p_norm` is set.
pub fn train_phase2<T: Real>(
    model: &ToyDetector<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if !model.is_augmented() {
        return Err(Error::State("phase 2 needs every layer augmented with a frozen base".into()));
    }
    let loss = LossConfig { omega_c: config.omega_c, p_norm: config.p_norm, classes: model.classes };
    run_phase(model.clone(), train, val, config, config.lr_phase2, config.seed ^ 0x5048_4153_4532, &loss)
}

fn run_phase<T: Real>(
    mut model: ToyDetector<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    config: &TrainConfig,
    lr: f64,
    seed: u64,
    loss: &LossConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut adam = AdamState::<T>::new(lr, &model.slot_sizes());
    let mut sched = PlateauScheduler::with_params(lr, config.patience, config.sched_factor);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = History::default();
    let mut best: Option<(f64, usize, ToyDetector<T>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let epoch_lr = sched.lr();
        adam.lr = epoch_lr;
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut epoch_sum = LossTerms::default();
        let mut window = DetectorGrads::zeros_like(&model);
        let mut window_sum = LossTerms::default();
        let (mut window_images, mut window_batches) = (0, 0);

        for (bi, chunk) in batches.iter().enumerate() {
            let refs: Vec<&Sample<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let (sum, grads) = summed_objective(&model, &refs, loss)?;
            if !sum.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {}", bi + 1)));
            }
            window.accumulate(&grads);
            add_terms(&mut window_sum, &sum);
            add_terms(&mut epoch_sum, &sum);
            window_images += chunk.len();
            window_batches += 1;

            if window_batches == config.accum_steps || bi + 1 == batches.len() {
                window.scale(T::from_f64(1.0 / window_images as f64));
                let grads = window.slices();
                if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}")));
                }
                let mut slots = model.param_slots_mut();
                adam.step(&mut slots, &grads)?;
                step += 1;
                history.steps.push(StepRecord { epoch, step, losses: scale_terms(&window_sum, 1.0 / window_images as f64) });
                window = DetectorGrads::zeros_like(&model);
                window_sum = LossTerms::default();
                window_images = 0;
                window_batches = 0;
            }
        }

        let train_terms = scale_terms(&epoch_sum, 1.0 / train.len() as f64);
        let val_terms = if val.is_empty() { train_terms } else { evaluate_loss(&model, val, loss)? };
        if !val_terms.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.epochs.push(EpochRecord { epoch, split: Split::Train, losses: train_terms, lr: epoch_lr });
        history.epochs.push(EpochRecord { epoch, split: Split::Val, losses: val_terms, lr: epoch_lr });
        if best.as_ref().map_or(true, |(b, _, _)| val_terms.l_d < *b) {
            best = Some((val_terms.l_d, epoch, model.clone()));
        }
        sched.step(val_terms.l_d);
    }

    let (best_val_loss, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model: best_model, last: model, history, best_epoch, best_val_loss })
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms) {
    acc.l_d += t.l_d;
    acc.l_c += t.l_c;
    acc.l_f += t.l_f;
}

fn scale_terms(t: &LossTerms, s: f64) -> LossTerms {
    LossTerms { l_d: t.l_d * s, l_c: t.l_c * s, l_f: t.l_f * s }
}
