//! Training objectives: the detection surrogate `L_d`, the complementarity
//! term `L_c = −‖K*X − ΔK*X‖_p` and their combination `L_f = L_d + ω_c·L_c`.

use crate::error::{shape_err, Error, Result};
use crate::eval::GroundTruthBox;
use crate::real::Real;
use crate::tensor::{conv2d, slice_norm, ConvGeometry, PNorm, Tensor4};

/// Regression target for the cell containing an object's center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub class_id: usize,
    /// `(cx offset in cell, cy offset in cell, w / canvas width, h / canvas height)`, all in `[0, 1]`.
    pub offsets: [f64; 4],
}

/// Per-image target grid (row-major cells).
#[derive(Debug, Clone, PartialEq)]
pub struct GridTargets {
    pub grid: (usize, usize),
    pub cells: Vec<Option<CellTarget>>,
}

impl GridTargets {
    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Assigns each ground-truth box of one image to the grid cell holding its
/// center. When two centers share a cell the first box in input order wins.
pub fn assign_targets(gts: &[GroundTruthBox], canvas: (usize, usize), grid: (usize, usize)) -> GridTargets {
    let (cw, ch) = (canvas.0 as f64, canvas.1 as f64);
    let (gh, gw) = grid;
    let mut cells = vec![None; gh * gw];
    for g in gts {
        let b = &g.bbox;
        let cx = ((b.x_min + b.x_max) / 2.0 / cw).clamp(0.0, 1.0 - 1e-12);
        let cy = ((b.y_min + b.y_max) / 2.0 / ch).clamp(0.0, 1.0 - 1e-12);
        let col = (cx * gw as f64).floor() as usize;
        let row = (cy * gh as f64).floor() as usize;
        let cell = &mut cells[row * gw + col];
        if cell.is_none() {
            *cell = Some(CellTarget {
                class_id: g.class_id,
                offsets: [
                    cx * gw as f64 - col as f64,
                    cy * gh as f64 - row as f64,
                    (b.width() / cw).clamp(0.0, 1.0),
                    (b.height() / ch).clamp(0.0, 1.0),
                ],
            });
        }
    }
    GridTargets { grid, cells }
}

/// Batch-mean detection loss split into its three terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectionLoss {
    pub objectness: f64,
    pub class: f64,
    pub boxes: f64,
}

impl DetectionLoss {
    pub fn total(&self) -> f64 {
        self.objectness + self.class + self.boxes
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Surrogate detection loss on head outputs `N × (5+C) × G_h × G_w`.
///
/// Channel 0 is the objectness logit, channels `1..=C` class logits and the
/// last four raw box offsets (decoded through a sigmoid). Per image:
/// objectness BCE averaged over all cells, class cross-entropy and box
/// squared error averaged over positive cells (zero without positives).
/// The batch loss is the mean over images. Returns the loss and its
/// gradient with respect to `pred`.
pub fn detection_task_loss<T: Real>(pred: &Tensor4<T>, targets: &[GridTargets], classes: usize) -> Result<(DetectionLoss, Tensor4<T>)> {
    let [n, ch, gh, gw] = pred.dims();
    if targets.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if targets.len() != n {
        return shape_err(format!("{} target grids for a batch of {n}", targets.len()));
    }
    if ch != 5 + classes {
        return shape_err(format!("head has {ch} channels, expected {}", 5 + classes));
    }
    let plane = gh * gw;
    let mut grad = Tensor4::zeros(pred.dims());
    let mut total = DetectionLoss::default();
    let batch_scale = 1.0 / n as f64;
    let mut probs = vec![0.0; classes];
    for (i, tg) in targets.iter().enumerate() {
        if tg.grid != (gh, gw) || tg.cells.len() != plane {
            return shape_err("target grid does not match prediction grid");
        }
        let p = pred.item(i);
        let g = grad.item_mut(i);
        let at = |c: usize, cell: usize| p[c * plane + cell].as_f64();
        let npos = tg.positives();
        let obj_scale = batch_scale / plane as f64;
        let pos_scale = if npos > 0 { batch_scale / npos as f64 } else { 0.0 };
        for (cell, target) in tg.cells.iter().enumerate() {
            let z = at(0, cell);
            let y = if target.is_some() { 1.0 } else { 0.0 };
            total.objectness += obj_scale * (softplus(z) - y * z);
            g[cell] = T::from_f64(obj_scale * (sigmoid(z) - y));
            let Some(t) = target else { continue };

            let max = (0..classes).map(|c| at(1 + c, cell)).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (at(1 + c, cell) - max).exp();
                denom += *pr;
            }
            total.class += pos_scale * (denom.ln() - (at(1 + t.class_id, cell) - max));
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == t.class_id { 1.0 } else { 0.0 };
                g[(1 + c) * plane + cell] = T::from_f64(pos_scale * (pr / denom - onehot));
            }

            for (j, &target) in t.offsets.iter().enumerate() {
                let c = 1 + classes + j;
                let s = sigmoid(at(c, cell));
                total.boxes += pos_scale * (s - target).powi(2);
                g[c * plane + cell] = T::from_f64(pos_scale * 2.0 * (s - target) * s * (1.0 - s));
            }
        }
    }
    Ok((total, grad))
}

/// `L_c = −‖K*X − ΔK*X‖_p`.
pub fn complementarity_loss<T: Real>(k: &Tensor4<T>, delta_k: &Tensor4<T>, x: &Tensor4<T>, geom: &ConvGeometry, p: u32) -> Result<T> {
    let p = PNorm::try_from(p)?;
    if k.dims() != delta_k.dims() {
        return shape_err("K and ΔK must have the same shape");
    }
    let diff = conv2d(k, x, geom)?.sub(&conv2d(delta_k, x, geom)?)?;
    Ok(-slice_norm(diff.data(), p))
}

/// Value of `−‖base − delta‖_p` and its gradient with respect to `base`
/// (the gradient w.r.t. `delta` is the negation). The subgradient at a
/// zero difference is taken as zero.
pub(crate) fn branch_distance_grad<T: Real>(base: &[T], delta: &[T], p: PNorm, scale: f64, d_base: &mut [T]) -> f64 {
    let diff: Vec<f64> = base.iter().zip(delta).map(|(&a, &b)| a.as_f64() - b.as_f64()).collect();
    let norm = slice_norm(&diff, p);
    for (g, d) in d_base.iter_mut().zip(&diff) {
        let dn = match p {
            PNorm::L1 => {
                if *d > 0.0 {
                    1.0
                } else if *d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PNorm::L2 => {
                if norm > 0.0 {
                    d / norm
                } else {
                    0.0
                }
            }
        };
        *g = T::from_f64(-scale * dn);
    }
    -norm
}

/// `L_f = L_d + ω_c·L_c`.
pub fn total_loss(l_d: f64, l_c: f64, omega_c: f64) -> f64 {
    l_d + omega_c * l_c
}
