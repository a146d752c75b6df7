//! Detection metrics: IoU, greedy matching, PR curves, all-point AP,
//! mAP over IoU thresholds, and K-Means++ anchor estimation.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) || x_min > x_max || y_min > y_max {
            return Err(Error::Argument(format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self { x_min: self.x_min * sx, y_min: self.y_min * sy, x_max: self.x_max * sx, y_max: self.y_max * sy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: usize,
    pub class_id: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub image_id: usize,
    pub class_id: usize,
    pub bbox: BoundingBox,
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Outcome of matching one class at one IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(index into the input detections, is_true_positive)` in confidence order.
    pub labels: Vec<(usize, bool)>,
    pub false_negatives: usize,
    pub total_ground_truth: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.labels.iter().filter(|(_, tp)| *tp).count()
    }

    pub fn false_positives(&self) -> usize {
        self.labels.len() - self.true_positives()
    }
}

/// Greedy matching for one class: detections in descending confidence
/// (ties by input order) each claim the unmatched same-image ground truth
/// with the highest IoU, provided IoU ≥ `iou_threshold`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], iou_threshold: f64, class_id: usize) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class_id == class_id).collect();
    order.sort_by(|&i, &j| dets[j].confidence.total_cmp(&dets[i].confidence));
    let class_gts: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class_id == class_id).collect();
    let mut matched = vec![false; class_gts.len()];
    let mut labels = Vec::with_capacity(order.len());
    for idx in order {
        let det = &dets[idx];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in class_gts.iter().enumerate() {
            if matched[g] || gt.image_id != det.image_id {
                continue;
            }
            let overlap = iou(&det.bbox, &gt.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
        }
        labels.push((idx, best.is_some()));
    }
    let false_negatives = matched.iter().filter(|m| !**m).count();
    MatchResult { labels, false_negatives, total_ground_truth: class_gts.len() }
}

/// Cumulative `(recall, precision)` points over confidence-ordered TP/FP flags.
pub fn pr_curve(tp_flags: &[bool], total_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(tp_flags.len());
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        tp += usize::from(is_tp);
        let recall = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
        points.push((recall, tp as f64 / (i + 1) as f64));
    }
    points
}

/// All-point interpolated AP: precision made non-increasing from the right,
/// integrated over recall steps.
pub fn average_precision(pr: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<f64> = pr.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(recall, _), &p) in pr.iter().zip(&envelope) {
        ap += (recall - prev_recall) * p;
        prev_recall = recall;
    }
    ap
}

/// `[0.5]`.
pub fn map50_thresholds() -> Vec<f64> {
    vec![0.5]
}

/// `0.50, 0.55, …, 0.95`.
pub fn map50_95_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// `(class, AP averaged over thresholds)` for every class with ground truth.
    pub per_class: Vec<(usize, f64)>,
}

/// Mean over classes (those with ≥1 ground-truth box) of AP, averaged over thresholds.
pub fn mean_ap(dets: &[Detection], gts: &[GroundTruthBox], thresholds: &[f64]) -> Result<MapResult> {
    if thresholds.is_empty() {
        return Err(Error::Argument("no IoU thresholds given".into()));
    }
    let classes: BTreeSet<usize> = gts.iter().map(|g| g.class_id).collect();
    if classes.is_empty() {
        return Err(Error::Argument("mAP undefined: no class has ground truth".into()));
    }
    let mut per_class = Vec::with_capacity(classes.len());
    let mut per_threshold = vec![0.0; thresholds.len()];
    for &c in &classes {
        let mut aps = Vec::with_capacity(thresholds.len());
        for (ti, &thr) in thresholds.iter().enumerate() {
            let m = match_detections(dets, gts, thr, c);
            let flags: Vec<bool> = m.labels.iter().map(|l| l.1).collect();
            let ap = average_precision(&pr_curve(&flags, m.total_ground_truth));
            per_threshold[ti] += ap;
            aps.push(ap);
        }
        per_class.push((c, bounded_mean(aps.into_iter())));
    }
    let n_classes = classes.len() as f64;
    let map = bounded_mean(per_threshold.iter().map(|s| s / n_classes));
    Ok(MapResult { map, per_class })
}

/// Arithmetic mean kept inside `[min, max]` of its terms, so equal terms
/// average to exactly that value.
fn bounded_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        sum += v;
        n += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / n as f64).clamp(lo, hi)
}

fn squared_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn nearest(p: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Within-cluster sum of squares of `points` against their nearest centroid.
pub fn within_cluster_ss(points: &[(f64, f64)], centroids: &[(f64, f64)]) -> f64 {
    points.iter().map(|&p| nearest(p, centroids).1).sum()
}

/// Independent K-Means++ runs per call; the lowest within-cluster sum of
/// squares wins.
pub const KMEANS_RESTARTS: usize = 10;

/// K-Means++ seeding, Lloyd iterations and single-point refinement in
/// `(w, h)` space, best of
/// [`KMEANS_RESTARTS`] seeded runs. Returned centroids are sorted by area,
/// smallest first.
pub fn kmeanspp_anchors(sizes: &[(f64, f64)], k: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    if sizes.len() < k {
        return Err(Error::Argument(format!("need at least {k} boxes, got {}", sizes.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let centroids = hartigan(sizes, lloyd(sizes, kmeanspp_seed(sizes, k, &mut rng)));
        let ss = within_cluster_ss(sizes, &centroids);
        if best.as_ref().is_none_or(|(b, _)| ss < *b) {
            best = Some((ss, centroids));
        }
    }
    let mut centroids = best.map(|b| b.1).unwrap_or_default();
    centroids.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    Ok(centroids)
}

/// First centroid uniform, each next one drawn proportionally to the squared
/// distance to the nearest chosen centroid.
fn kmeanspp_seed(sizes: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![sizes[rng.gen_range(0..sizes.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = sizes.iter().map(|&p| nearest(p, &centroids).1).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..sizes.len())
        };
        centroids.push(sizes[pick]);
    }
    centroids
}

/// Lloyd iterations until no centroid moves by 1e-6 or more, at most 100.
fn lloyd(sizes: &[(f64, f64)], mut centroids: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let k = centroids.len();
    for _ in 0..100 {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for &p in sizes {
            let (c, _) = nearest(p, &centroids);
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sums[c].2 += 1;
        }
        let mut shift: f64 = 0.0;
        for (c, (sx, sy, n)) in centroids.iter_mut().zip(sums) {
            if n == 0 {
                continue;
            }
            let next = (sx / n as f64, sy / n as f64);
            shift = shift.max(squared_distance(*c, next).sqrt());
            *c = next;
        }
        if shift < 1e-6 {
            break;
        }
    }
    centroids
}

/// Moves single points between clusters while a move lowers the within-cluster
/// sum of squares (the exact change is `n_b/(n_b+1)·d_b² − n_a/(n_a−1)·d_a²`).
/// Centroids become the means of the final assignment.
fn hartigan(sizes: &[(f64, f64)], centroids: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let k = centroids.len();
    let mut labels: Vec<usize> = sizes.iter().map(|&p| nearest(p, &centroids).0).collect();
    let stats = |labels: &[usize]| {
        let mut s = vec![(0.0, 0.0, 0usize); k];
        for (p, &l) in sizes.iter().zip(labels) {
            s[l].0 += p.0;
            s[l].1 += p.1;
            s[l].2 += 1;
        }
        s
    };
    let mut sums = stats(&labels);
    let mean = |s: (f64, f64, usize)| (s.0 / s.2 as f64, s.1 / s.2 as f64);
    for _ in 0..100 {
        let mut moved = false;
        for (i, &p) in sizes.iter().enumerate() {
            let a = labels[i];
            let na = sums[a].2;
            if na < 2 {
                continue;
            }
            let cost_out = na as f64 / (na - 1) as f64 * squared_distance(p, mean(sums[a]));
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = sums[b].2;
                let cost_in = if nb == 0 { 0.0 } else { nb as f64 / (nb + 1) as f64 * squared_distance(p, mean(sums[b])) };
                if cost_in < cost_out - 1e-12 * cost_out.max(1.0) && best.is_none_or(|(_, c)| cost_in < c) {
                    best = Some((b, cost_in));
                }
            }
            if let Some((b, _)) = best {
                sums[a].0 -= p.0;
                sums[a].1 -= p.1;
                sums[a].2 -= 1;
                sums[b].0 += p.0;
                sums[b].1 += p.1;
                sums[b].2 += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        sums = stats(&labels);
    }
    sums.iter()
        .zip(centroids)
        .map(|(&s, c)| if s.2 == 0 { c } else { mean(s) })
        .collect()
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.bbox;
        write!(f, "{} {} {} {} {} {} {}", self.image_id, self.class_id, b.x_min, b.y_min, b.x_max, b.y_max, self.confidence)
    }
}

impl fmt::Display for GroundTruthBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.bbox;
        write!(f, "{} {} {} {} {} {}", self.image_id, self.class_id, b.x_min, b.y_min, b.x_max, b.y_max)
    }
}

fn split_fields(line: &str, expected: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(Error::Parse(format!("expected {expected} fields, got {} in {line:?}", fields.len())));
    }
    Ok(fields)
}

fn parse_num<N: std::str::FromStr>(field: &str) -> Result<N> {
    field.parse().map_err(|_| Error::Parse(format!("bad number {field:?}")))
}

fn parse_box(fields: &[&str]) -> Result<BoundingBox> {
    BoundingBox::new(parse_num(fields[0])?, parse_num(fields[1])?, parse_num(fields[2])?, parse_num(fields[3])?)
        .map_err(|e| Error::Parse(e.to_string()))
}

/// Parses `image_id class_id x_min y_min x_max y_max confidence`.
pub fn parse_detection_line(line: &str) -> Result<Detection> {
    let f = split_fields(line, 7)?;
    let confidence: f64 = parse_num(f[6])?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Parse(format!("confidence {confidence} outside [0, 1]")));
    }
    Ok(Detection { image_id: parse_num(f[0])?, class_id: parse_num(f[1])?, bbox: parse_box(&f[2..6])?, confidence })
}

/// Parses `image_id class_id x_min y_min x_max y_max`.
pub fn parse_ground_truth_line(line: &str) -> Result<GroundTruthBox> {
    let f = split_fields(line, 6)?;
    Ok(GroundTruthBox { image_id: parse_num(f[0])?, class_id: parse_num(f[1])?, bbox: parse_box(&f[2..6])? })
}

fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    content_lines(text).map(parse_detection_line).collect()
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthBox>> {
    content_lines(text).map(parse_ground_truth_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(image_id: usize, class_id: usize, b: BoundingBox, confidence: f64) -> Detection {
        Detection { image_id, class_id, bbox: b, confidence }
    }

    fn gt(image_id: usize, class_id: usize, b: BoundingBox) -> GroundTruthBox {
        GroundTruthBox { image_id, class_id, bbox: b }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(1.0, 1.0, 3.0, 3.0)), 1.0 / 7.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        let p = bx(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
        assert!(BoundingBox::new(2.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_match_is_true_positive() {
        // IoU 0.6: [0,0,10,10] vs [0,0,10,6].
        let g = [gt(0, 0, bx(0.0, 0.0, 10.0, 10.0))];
        let d = [det(0, 0, bx(0.0, 0.0, 10.0, 6.0), 0.9)];
        let m = match_detections(&d, &g, 0.5, 0);
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives), (1, 0, 0));
    }

    #[test]
    fn double_detection_rule() {
        let g = [gt(0, 0, bx(0.0, 0.0, 10.0, 10.0))];
        let d = [det(0, 0, bx(0.0, 0.0, 10.0, 9.0), 0.8), det(0, 0, bx(0.0, 0.0, 10.0, 8.0), 0.9)];
        let m = match_detections(&d, &g, 0.5, 0);
        assert_eq!(m.labels, vec![(1, true), (0, false)]);
    }

    #[test]
    fn classes_are_separate() {
        let g = [gt(0, 1, bx(0.0, 0.0, 4.0, 4.0))];
        let d = [det(0, 0, bx(0.0, 0.0, 4.0, 4.0), 0.9)];
        let c0 = match_detections(&d, &g, 0.5, 0);
        let c1 = match_detections(&d, &g, 0.5, 1);
        assert_eq!((c0.false_positives(), c0.false_negatives), (1, 0));
        assert_eq!((c1.labels.len(), c1.false_negatives), (0, 1));
    }

    #[test]
    fn pr_and_ap_examples() {
        assert_eq!(average_precision(&pr_curve(&[true], 1)), 1.0);
        assert_eq!(average_precision(&pr_curve(&[false], 1)), 0.0);
        assert_eq!(average_precision(&pr_curve(&[], 3)), 0.0);
        let pr = pr_curve(&[true, false, true], 2);
        assert_eq!(pr, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
        assert_eq!(average_precision(&pr), 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
        assert!((average_precision(&pr) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_detector_map() {
        let g = [gt(0, 0, bx(0.0, 0.0, 4.0, 4.0)), gt(1, 0, bx(2.0, 2.0, 9.0, 5.0))];
        let d: Vec<Detection> = g.iter().map(|g| det(g.image_id, g.class_id, g.bbox, 0.7)).collect();
        assert_eq!(mean_ap(&d, &g, &map50_thresholds()).unwrap().map, 1.0);
        assert_eq!(mean_ap(&d, &g, &map50_95_thresholds()).unwrap().map, 1.0);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        // [0,0,10,10] vs [0,0,10,5.5] has IoU exactly 0.55.
        let g = [gt(0, 0, bx(0.0, 0.0, 10.0, 10.0))];
        let d = [det(0, 0, bx(0.0, 0.0, 10.0, 5.5), 0.9)];
        assert_eq!(iou(&d[0].bbox, &g[0].bbox), 0.55);
        let thresholds = map50_95_thresholds();
        let hits: Vec<bool> = thresholds.iter().map(|&t| match_detections(&d, &g, t, 0).true_positives() == 1).collect();
        assert_eq!(&hits[..3], &[true, true, false]);
        assert!(hits[2..].iter().all(|h| !h));
        let m = mean_ap(&d, &g, &thresholds).unwrap();
        assert!((m.map - 0.2).abs() < 1e-15);
    }

    #[test]
    fn map_errors() {
        let d = [det(0, 0, bx(0.0, 0.0, 1.0, 1.0), 0.5)];
        assert!(matches!(mean_ap(&d, &[], &[0.5]), Err(Error::Argument(_))));
        assert!(matches!(mean_ap(&d, &[gt(0, 0, bx(0.0, 0.0, 1.0, 1.0))], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_gt_classes_excluded_from_mean() {
        let g = [gt(0, 0, bx(0.0, 0.0, 4.0, 4.0))];
        let d = [det(0, 0, bx(0.0, 0.0, 4.0, 4.0), 0.9), det(0, 2, bx(5.0, 5.0, 6.0, 6.0), 0.9)];
        let m = mean_ap(&d, &g, &[0.5]).unwrap();
        assert_eq!(m.map, 1.0);
        assert_eq!(m.per_class, vec![(0, 1.0)]);
    }

    #[test]
    fn kmeans_examples() {
        let mut sizes = vec![(2.0, 3.0); 5];
        sizes.extend(vec![(10.0, 12.0); 7]);
        let anchors = kmeanspp_anchors(&sizes, 2, 1).unwrap();
        assert_eq!(anchors, vec![(2.0, 3.0), (10.0, 12.0)]);
        assert_eq!(kmeanspp_anchors(&[(4.0, 5.0); 6], 1, 3).unwrap(), vec![(4.0, 5.0)]);
        assert!(matches!(kmeanspp_anchors(&sizes[..1], 2, 0), Err(Error::Argument(_))));
        assert_eq!(kmeanspp_anchors(&sizes, 2, 9).unwrap(), kmeanspp_anchors(&sizes, 2, 9).unwrap());
    }

    #[test]
    fn interchange_lines_round_trip() {
        let d = det(3, 1, bx(1.5, 2.0, 8.25, 9.0), 0.75);
        assert_eq!(parse_detection_line(&d.to_string()).unwrap(), d);
        let g = gt(4, 2, bx(0.0, 0.5, 3.0, 4.0));
        assert_eq!(parse_ground_truth_line(&g.to_string()).unwrap(), g);
        assert!(parse_detection_line("1 0 0 0 1 1").is_err());
        assert!(parse_detection_line("1 0 0 0 1 1 1.5").is_err());
        assert!(parse_ground_truth_line("1 0 2 0 1 1").is_err());
        let parsed = parse_detections("# comment\n\n0 0 0 0 1 1 0.5\n").unwrap();
        assert_eq!(parsed.len(), 1);
    }
}
