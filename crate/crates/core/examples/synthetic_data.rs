//! Writes a few paired modality-A / modality-B scenes as PGM images with
//! YOLO-style annotation files.
//!
//! ```text
//! cargo run --example synthetic_data -- /tmp/scenes
//! ```

use std::path::PathBuf;

use tensorfact::harness::data::{generate_dataset, write_dataset, Modality, SceneSpec};

fn main() -> tensorfact::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tensorfact-scenes"));
    let spec = SceneSpec::with_canvas(128);
    for (name, modality) in [("a", Modality::A), ("b", Modality::B)] {
        let images = generate_dataset(&spec, modality, 8, 42)?;
        write_dataset(&out.join(name), &images)?;
        let mean: f64 = images[0].pixels.iter().map(|&p| p as f64).sum::<f64>() / images[0].pixels.len() as f64 / 255.0;
        println!("modality {name}: image 0 has {} objects, mean intensity {mean:.3}", images[0].boxes.len());
    }
    println!("{}", generate_dataset(&spec, Modality::A, 1, 42)?[0].annotation_text());
    println!("wrote {}", out.display());
    Ok(())
}
