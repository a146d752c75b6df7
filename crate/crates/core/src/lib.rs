//! Low-rank factorized convolutions with capacity augmentation for
//! cross-modal transfer.
//!
//! Each convolution kernel is stored as two factor matrices whose product,
//! reshaped, is the kernel. After training on a data-rich source modality
//! the factors are frozen and a small parallel branch (extra factor
//! columns/rows) is trained on the target modality, optionally pushed away
//! from the base branch by a complementarity loss.
//!
//! - [`tensor`]: dense tensors, im2col convolution and its gradients.
//! - [`factorized`]: factorized layers, SVD initialization, augmentation.
//! - [`train`]: losses, backpropagation, ADAM, plateau scheduling, the
//!   two-phase protocol and finite-difference checks.
//! - [`eval`]: IoU, AP, mAP and K-Means++ anchors.
//! - [`harness`]: toy detector, synthetic data, file formats, reports and
//!   the end-to-end experiment.
//! - [`cli`]: the `tensorfact` command line.

pub mod cli;
pub mod error;
pub mod eval;
pub mod factorized;
pub mod harness;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
