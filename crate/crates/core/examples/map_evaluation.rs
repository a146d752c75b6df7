//! Scores a handful of detections against ground truth: matching, the PR
//! curve, all-point AP and mAP at 0.5 and 0.5:0.95.

use tensorfact::eval::{
    average_precision, map50_95_thresholds, map50_thresholds, match_detections, mean_ap, pr_curve, BoundingBox, Detection,
    GroundTruthBox,
};

fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn main() -> tensorfact::Result<()> {
    let gts = vec![
        GroundTruthBox { image_id: 0, class_id: 0, bbox: b(0.0, 0.0, 10.0, 10.0) },
        GroundTruthBox { image_id: 0, class_id: 0, bbox: b(20.0, 20.0, 30.0, 30.0) },
        GroundTruthBox { image_id: 1, class_id: 1, bbox: b(5.0, 5.0, 15.0, 12.0) },
    ];
    let dets = vec![
        Detection { image_id: 0, class_id: 0, bbox: b(0.0, 0.0, 10.0, 10.0), confidence: 0.9 },
        Detection { image_id: 0, class_id: 0, bbox: b(50.0, 50.0, 60.0, 60.0), confidence: 0.8 },
        Detection { image_id: 0, class_id: 0, bbox: b(21.0, 20.0, 30.0, 31.0), confidence: 0.7 },
        Detection { image_id: 1, class_id: 1, bbox: b(6.0, 5.0, 15.0, 13.0), confidence: 0.6 },
    ];

    let m = match_detections(&dets, &gts, 0.5, 0);
    let flags: Vec<bool> = m.labels.iter().map(|l| l.1).collect();
    let pr = pr_curve(&flags, m.total_ground_truth);
    println!("class 0 labels {flags:?}");
    println!("class 0 PR {pr:?}");
    println!("class 0 AP50 {}", average_precision(&pr));

    let m50 = mean_ap(&dets, &gts, &map50_thresholds())?;
    let m5095 = mean_ap(&dets, &gts, &map50_95_thresholds())?;
    println!("mAP50 {:.4}  mAP50-95 {:.4}", m50.map, m5095.map);
    for (c, ap) in m5095.per_class {
        println!("  class {c}: AP50-95 {ap:.4}");
    }
    Ok(())
}
