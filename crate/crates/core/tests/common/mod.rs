//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::io::Write;

use rand::Rng;

/// Prints a line to the real stdout, bypassing the test harness capture.
pub fn announce(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Direct nested-loop cross-correlation. `k` is `T×S×D2×D1`, `x` is
/// `S×H×W`; returns `T×H'×W'` with zero padding.
pub fn naive_conv(
    k: &[f64],
    kdims: [usize; 4],
    x: &[f64],
    xdims: [usize; 3],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let [t, s, d2, d1] = kdims;
    let [xs, h, w] = xdims;
    assert_eq!(s, xs);
    let ho = (h + 2 * pad - d2) / stride + 1;
    let wo = (w + 2 * pad - d1) / stride + 1;
    let mut y = vec![0.0; t * ho * wo];
    for ti in 0..t {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for si in 0..s {
                    for a in 0..d2 {
                        for b in 0..d1 {
                            let r = (i * stride + a) as isize - pad as isize;
                            let c = (j * stride + b) as isize - pad as isize;
                            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                continue;
                            }
                            acc += k[((ti * s + si) * d2 + a) * d1 + b] * x[(si * h + r as usize) * w + c as usize];
                        }
                    }
                }
                y[(ti * ho + i) * wo + j] = acc;
            }
        }
    }
    (y, ho, wo)
}

/// Singular values of a row-major `m×n` matrix by one-sided Jacobi
/// rotations, sorted descending.
pub fn jacobi_singular_values(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    // Work on the matrix with more rows than columns so column norms give σ.
    let (rows, cols, mut a) = if m >= n {
        (m, n, data.to_vec())
    } else {
        let mut t = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                t[j * m + i] = data[i * n + j];
            }
        }
        (n, m, t)
    };
    let col = |a: &[f64], j: usize| -> Vec<f64> { (0..rows).map(|i| a[i * cols + j]).collect() };
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let (cp, cq) = (col(&a, p), col(&a, q));
                let alpha: f64 = cp.iter().map(|v| v * v).sum();
                let beta: f64 = cq.iter().map(|v| v * v).sum();
                let gamma: f64 = cp.iter().zip(&cq).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[i * cols + p], a[i * cols + q]);
                    a[i * cols + p] = c * x - s * y;
                    a[i * cols + q] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..cols).map(|j| col(&a, j).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sigma.sort_by(|x, y| y.total_cmp(x));
    sigma
}

/// Box with integer corners.
#[derive(Debug, Clone, Copy)]
pub struct IBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl IBox {
    pub fn area(&self) -> i64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// `(intersection, union)` as exact integer areas.
pub fn int_overlap(a: &IBox, b: &IBox) -> (i64, i64) {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy)]
pub struct ODet {
    pub image: usize,
    pub class: usize,
    pub bbox: IBox,
    pub conf: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OGt {
    pub image: usize,
    pub class: usize,
    pub bbox: IBox,
}

/// TP flags in ranked order for one class at one threshold, recomputed
/// from scratch image by image.
pub fn oracle_labels(dets: &[ODet], gts: &[OGt], class: usize, thr: f64) -> (Vec<(usize, bool)>, usize) {
    let mut ranked: Vec<(usize, &ODet)> = dets.iter().enumerate().filter(|(_, d)| d.class == class).collect();
    ranked.sort_by(|(i, a), (j, b)| b.conf.partial_cmp(&a.conf).unwrap().then(i.cmp(j)));
    let class_gts: Vec<&OGt> = gts.iter().filter(|g| g.class == class).collect();
    let mut taken = vec![false; class_gts.len()];
    let mut out = Vec::new();
    for (idx, d) in ranked {
        let mut pick: Option<usize> = None;
        let mut pick_overlap = (0i64, 1i64);
        for (g, gt) in class_gts.iter().enumerate() {
            if gt.image != d.image || taken[g] {
                continue;
            }
            let (inter, union) = int_overlap(&d.bbox, &gt.bbox);
            if union == 0 || (inter as f64 / union as f64) < thr {
                continue;
            }
            // Strictly larger overlap wins, compared as exact fractions.
            if pick.is_none() || inter * pick_overlap.1 > pick_overlap.0 * union {
                pick = Some(g);
                pick_overlap = (inter, union);
            }
        }
        if let Some(g) = pick {
            taken[g] = true;
        }
        out.push((idx, pick.is_some()));
    }
    (out, class_gts.len())
}

/// All-point interpolated AP: each true positive adds `1/G` times the best
/// precision reached at or after it.
pub fn oracle_ap(flags: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let precisions: Vec<f64> = flags
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            tp += usize::from(f);
            tp as f64 / (i + 1) as f64
        })
        .collect();
    let mut ap = 0.0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            let best = precisions[i..].iter().cloned().fold(0.0, f64::max);
            ap += best / total_gt as f64;
        }
    }
    ap
}

pub fn oracle_map(dets: &[ODet], gts: &[OGt], thresholds: &[f64]) -> f64 {
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &thr in thresholds {
        let mut sum = 0.0;
        for &c in &classes {
            let (labels, n_gt) = oracle_labels(dets, gts, c, thr);
            let flags: Vec<bool> = labels.iter().map(|l| l.1).collect();
            sum += oracle_ap(&flags, n_gt);
        }
        total += sum / classes.len() as f64;
    }
    total / thresholds.len() as f64
}
