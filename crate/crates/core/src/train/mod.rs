//! Gradients, losses, optimizer, scheduling and the two-phase protocol.

pub mod adam;
pub mod grad;
pub mod gradcheck;
pub mod loss;
pub mod objective;
pub mod protocol;
pub mod scheduler;

pub use adam::{adam_step, AdamState, ParamMut};
pub use grad::{backward_branches, backward_factorized, GradientSet};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, max_relative_error};
pub use loss::{assign_targets, complementarity_loss, detection_task_loss, total_loss, DetectionLoss, GridTargets};
pub use objective::{LossConfig, LossTerms, Sample};
pub use protocol::{train_phase1, train_phase2, History, TrainConfig, TrainOutcome};
pub use scheduler::{plateau_step, PlateauScheduler};
