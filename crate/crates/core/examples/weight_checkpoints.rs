//! Saves an augmented detector in the binary weight format and loads it back.

use tensorfact::harness::detector::{build_toy_detector, DetectorConfig, ToyDetector};
use tensorfact::harness::weights::{decode_weights, encode_weights, load_weights, save_weights};

fn main() -> tensorfact::Result<()> {
    let cfg = DetectorConfig::default();
    let model: ToyDetector<f32> = build_toy_detector(&cfg, 2)?.augment(0.25, 3)?;
    let path = std::env::temp_dir().join("tensorfact-example.tfw");
    save_weights(&model, &path)?;
    let back = load_weights(&path, &cfg)?;
    println!("{} bytes, round trip equal: {}", std::fs::metadata(&path)?.len(), back == model);

    let bytes = encode_weights(&model);
    match decode_weights(&bytes[..bytes.len() - 1], &cfg) {
        Ok(_) => println!("truncated file accepted?"),
        Err(e) => println!("truncated file rejected: {e}"),
    }
    let mut bumped = bytes.clone();
    bumped[3] = b'9';
    if let Err(e) = decode_weights(&bumped, &cfg) {
        println!("{e}");
    }
    Ok(())
}
