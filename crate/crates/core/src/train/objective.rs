//! Per-sample and per-batch training objective for the detector.

use crate::error::{Error, Result};
use crate::eval::GroundTruthBox;
use crate::harness::detector::{DetectorGrads, ToyDetector};
use crate::real::Real;
use crate::tensor::{PNorm, Tensor4};
use crate::train::loss::{branch_distance_grad, detection_task_loss, total_loss, GridTargets};

/// One training image with its grid targets and ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image_id: usize,
    /// `1 × channels × H × W`.
    pub image: Tensor4<T>,
    pub targets: GridTargets,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub omega_c: f64,
    /// `None` disables the complementarity term entirely.
    pub p_norm: Option<PNorm>,
    pub classes: usize,
}

/// Mean loss terms over a set of images.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub l_d: f64,
    pub l_c: f64,
    pub l_f: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.l_d.is_finite() && self.l_c.is_finite() && self.l_f.is_finite()
    }
}

/// Loss and (optionally) gradients for a single image.
///
/// `L_c` is the mean over augmented layers of `−‖K*X − ΔK*X‖_p`, zero when no
/// layer is augmented or `p` is absent. Its gradient enters only when
/// `ω_c ≠ 0`, so an `ω_c = 0` run follows exactly the unregularized path.
pub fn sample_objective<T: Real>(
    model: &ToyDetector<T>,
    sample: &Sample<T>,
    loss: &LossConfig,
    want_grads: bool,
) -> Result<(LossTerms, Option<DetectorGrads<T>>)> {
    let cache = model.forward_cached(&sample.image)?;
    let (parts, d_head) = detection_task_loss(&cache.output, std::slice::from_ref(&sample.targets), loss.classes)?;
    let l_d = parts.total();

    let augmented = cache.branches.iter().filter(|b| b.delta.is_some()).count();
    let mut l_c = 0.0;
    let mut extras: Vec<Option<(Tensor4<T>, Tensor4<T>)>> = vec![None; cache.branches.len()];
    if let (Some(p), true) = (loss.p_norm, augmented > 0) {
        let scale = loss.omega_c / augmented as f64;
        for (slot, b) in extras.iter_mut().zip(&cache.branches) {
            let Some(delta) = &b.delta else { continue };
            let mut d_base = Tensor4::zeros(b.base.dims());
            l_c += branch_distance_grad(b.base.data(), delta.data(), p, scale, d_base.data_mut());
            if loss.omega_c != 0.0 {
                let d_delta = d_base.map(|v| -v);
                *slot = Some((d_base, d_delta));
            }
        }
        l_c /= augmented as f64;
    }
    let terms = LossTerms { l_d, l_c, l_f: total_loss(l_d, l_c, loss.omega_c) };
    if !want_grads {
        return Ok((terms, None));
    }
    let extra = extras.iter().any(Option::is_some).then_some(extras.as_slice());
    let grads = model.backward(&cache, &d_head, extra)?;
    Ok((terms, Some(grads)))
}

/// Mean loss over `samples` and the gradient of that mean. Images are
/// processed in order and summed sequentially, so results are reproducible
/// and the gradient of a concatenated batch equals the size-weighted
/// average of the parts.
pub fn batch_objective<T: Real>(
    model: &ToyDetector<T>,
    samples: &[&Sample<T>],
    loss: &LossConfig,
) -> Result<(LossTerms, DetectorGrads<T>)> {
    let (terms, grads) = summed_objective(model, samples, loss)?;
    let inv = 1.0 / samples.len() as f64;
    let mut grads = grads;
    grads.scale(T::from_f64(inv));
    Ok((LossTerms { l_d: terms.l_d * inv, l_c: terms.l_c * inv, l_f: terms.l_f * inv }, grads))
}

/// Sum (not mean) of per-image losses and gradients.
pub fn summed_objective<T: Real>(
    model: &ToyDetector<T>,
    samples: &[&Sample<T>],
    loss: &LossConfig,
) -> Result<(LossTerms, DetectorGrads<T>)> {
    if samples.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut grads = DetectorGrads::zeros_like(model);
    let mut sum = LossTerms::default();
    for s in samples {
        let (t, g) = sample_objective(model, s, loss, true)?;
        sum.l_d += t.l_d;
        sum.l_c += t.l_c;
        sum.l_f += t.l_f;
        grads.accumulate(&g.expect("requested"));
    }
    Ok((sum, grads))
}

/// Mean loss over `samples` without gradients.
pub fn evaluate_loss<T: Real>(model: &ToyDetector<T>, samples: &[Sample<T>], loss: &LossConfig) -> Result<LossTerms> {
    if samples.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    let mut sum = LossTerms::default();
    for s in samples {
        let (t, _) = sample_objective(model, s, loss, false)?;
        sum.l_d += t.l_d;
        sum.l_c += t.l_c;
        sum.l_f += t.l_f;
    }
    let inv = 1.0 / samples.len() as f64;
    Ok(LossTerms { l_d: sum.l_d * inv, l_c: sum.l_c * inv, l_f: sum.l_f * inv })
}
