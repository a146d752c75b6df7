//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::GroundTruthBox;
use crate::eval::BoundingBox;
use crate::harness::detector::{build_toy_detector, slot_names, DetectorConfig, DetectorGrads, ToyDetector};
use crate::tensor::{PNorm, Tensor4};
use crate::train::loss::assign_targets;
use crate::train::objective::{sample_objective, LossConfig, Sample};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest [`relative_error`] over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` of a scalar function.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + eps;
            let up = f(&probe);
            probe[i] = theta[i] - eps;
            let down = f(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter slot and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares every analytic gradient entry of the full `L_f` against central
/// differences. Runs in 64-bit precision.
pub fn finite_diff_check(model: &ToyDetector<f64>, sample: &Sample<f64>, loss: &LossConfig, eps: f64) -> Result<GradCheckReport> {
    finite_diff_check_with(model, sample, loss, eps, |_| {})
}

/// As [`finite_diff_check`], with `corrupt` applied to the analytic
/// gradients first (checker sensitivity tests).
pub fn finite_diff_check_with(
    model: &ToyDetector<f64>,
    sample: &Sample<f64>,
    loss: &LossConfig,
    eps: f64,
    corrupt: impl FnOnce(&mut DetectorGrads<f64>),
) -> Result<GradCheckReport> {
    let (_, grads) = sample_objective(model, sample, loss, true)?;
    let mut grads = grads.expect("requested");
    corrupt(&mut grads);
    let names = slot_names(model);
    let mut probe = model.clone();
    let eval = |m: &ToyDetector<f64>| -> Result<f64> { Ok(sample_objective(m, sample, loss, false)?.0.l_f) };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (String::new(), 0), analytic: 0.0, numeric: 0.0, checked: 0 };
    for (slot, analytic) in grads.slices().iter().enumerate() {
        for (j, &a) in analytic.iter().enumerate() {
            let orig = probe.param_slots_mut()[slot].values[j];
            probe.param_slots_mut()[slot].values[j] = orig + eps;
            let up = eval(&probe)?;
            probe.param_slots_mut()[slot].values[j] = orig - eps;
            let down = eval(&probe)?;
            probe.param_slots_mut()[slot].values[j] = orig;
            let n = (up - down) / (2.0 * eps);
            let err = relative_error(a, n);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report = GradCheckReport { max_rel_error: err, worst: (names[slot].clone(), j), analytic: a, numeric: n, checked: report.checked };
            }
        }
    }
    Ok(report)
}

/// A tiny augmented detector and one sample, resampled from `seed` until
/// every leaky-rectifier input and every complementarity difference sits at
/// least `margin` away from its kink, so ±ε probes stay on one linear piece.
pub fn gradcheck_fixture(seed: u64, p_norm: PNorm, margin: f64) -> Result<(ToyDetector<f64>, Sample<f64>, LossConfig)> {
    let config = DetectorConfig { channels: vec![1, 2, 3], downsample: vec![1], window: 3, classes: 2, alpha: 0.7 };
    let canvas = (8, 8);
    let loss = LossConfig { omega_c: 0.01, p_norm: Some(p_norm), classes: config.classes };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let base: ToyDetector<f64> = build_toy_detector(&config, rng.gen())?;
        let mut model = base.augment(0.5, rng.gen())?;
        for layer in &mut model.layers {
            let (_, _, delta, _) = layer.params_mut();
            for v in delta.expect("augmented").b.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        for v in model.head.bias.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let image = Tensor4::new([1, 1, canvas.1, canvas.0], (0..canvas.0 * canvas.1).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let boxes: Vec<GroundTruthBox> = (0..2)
            .map(|k| {
                let (x, y) = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0));
                let bbox = BoundingBox::new(x, y, x + rng.gen_range(2.0..4.0), y + rng.gen_range(2.0..4.0)).expect("ordered");
                GroundTruthBox { image_id: 0, class_id: k % config.classes, bbox }
            })
            .collect();
        let grid = model.grid(canvas)?;
        let sample = Sample { image_id: 0, image, targets: assign_targets(&boxes, canvas, grid), boxes };
        let cache = model.forward_cached(&sample.image)?;
        let clear_of_kinks = cache.pre_activations.iter().all(|p| p.data().iter().all(|v| v.abs() > margin))
            && (p_norm != PNorm::L1
                || cache.branches.iter().all(|b| {
                    let d = b.delta.as_ref().expect("augmented");
                    b.base.data().iter().zip(d.data()).all(|(x, y)| (x - y).abs() > margin)
                }));
        if clear_of_kinks {
            return Ok((model, sample, loss));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.3, -1.7, 2.5, 0.01];
        let f = |t: &[f64]| t.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 4.0;
        let theta = [1.0, -2.0, 0.5, 3.0];
        let numeric = numeric_gradient(f, &theta, DEFAULT_EPSILON);
        assert!(max_relative_error(&w, &numeric) <= 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn toy_detector_gradients_match() {
        for (seed, p) in [(1, PNorm::L1), (2, PNorm::L2)] {
            let (model, sample, loss) = gradcheck_fixture(seed, p, 5e-3).unwrap();
            let r = finite_diff_check(&model, &sample, &loss, 1e-4).unwrap();
            assert!(r.max_rel_error <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn central_difference_error_shrinks_quadratically() {
        let (model, sample, loss) = gradcheck_fixture(3, PNorm::L2, 5e-3).unwrap();
        let coarse = finite_diff_check(&model, &sample, &loss, 1e-2).unwrap();
        let fine = finite_diff_check(&model, &sample, &loss, 1e-3).unwrap();
        assert!(coarse.max_rel_error > 1e-5);
        let ratio = coarse.max_rel_error / fine.max_rel_error;
        assert!((50.0..200.0).contains(&ratio), "{coarse:?} {fine:?}");
    }

    #[test]
    fn many_fixtures_agree_up_to_roundoff() {
        for seed in 10..22 {
            let p = if seed % 2 == 0 { PNorm::L1 } else { PNorm::L2 };
            let (model, sample, loss) = gradcheck_fixture(seed, p, 5e-3).unwrap();
            let (_, grads) = sample_objective(&model, &sample, &loss, true).unwrap();
            let grads = grads.unwrap();
            let mut probe = model.clone();
            let f = |m: &ToyDetector<f64>| sample_objective(m, &sample, &loss, false).unwrap().0.l_f;
            for (slot, analytic) in grads.slices().iter().enumerate() {
                for (j, &a) in analytic.iter().enumerate() {
                    let orig = probe.param_slots_mut()[slot].values[j];
                    probe.param_slots_mut()[slot].values[j] = orig + 1e-4;
                    let up = f(&probe);
                    probe.param_slots_mut()[slot].values[j] = orig - 1e-4;
                    let down = f(&probe);
                    probe.param_slots_mut()[slot].values[j] = orig;
                    let n = (up - down) / 2e-4;
                    assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-10, "seed {seed} slot {slot}[{j}]: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (model, sample, loss) = gradcheck_fixture(3, PNorm::L2, 5e-3).unwrap();
        let r = finite_diff_check_with(&model, &sample, &loss, DEFAULT_EPSILON, |g| {
            for v in g.layers[0].d_b.data_mut() {
                *v *= 2.0;
            }
        })
        .unwrap();
        assert!(r.max_rel_error > 0.3, "{r:?}");
    }
}
