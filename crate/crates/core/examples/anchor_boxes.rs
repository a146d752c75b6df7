//! Estimates anchor sizes from the synthetic dataset's ground truth with
//! K-Means++.

use tensorfact::eval::{kmeanspp_anchors, within_cluster_ss};
use tensorfact::harness::data::{generate_dataset, Modality, SceneSpec};

fn main() -> tensorfact::Result<()> {
    let spec = SceneSpec::with_canvas(128);
    let images = generate_dataset(&spec, Modality::A, 300, 11)?;
    let sizes: Vec<(f64, f64)> = images.iter().flat_map(|i| i.boxes.iter().map(|g| (g.bbox.width(), g.bbox.height()))).collect();
    println!("{} boxes", sizes.len());
    for k in 1..=5 {
        let anchors = kmeanspp_anchors(&sizes, k, 0)?;
        let pretty: Vec<String> = anchors.iter().map(|(w, h)| format!("{w:.1}x{h:.1}")).collect();
        println!("k={k}: wcss {:>10.1}  anchors {}", within_cluster_ss(&sizes, &anchors), pretty.join(" "));
    }
    Ok(())
}
