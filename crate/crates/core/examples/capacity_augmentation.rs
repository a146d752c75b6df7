//! Adds augmentation branches to a toy detector and shows that the
//! function is unchanged while only the branches (and head) stay trainable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorfact::harness::detector::{build_toy_detector, DetectorConfig, ToyDetector};
use tensorfact::tensor::Tensor4;

fn main() -> tensorfact::Result<()> {
    let cfg = DetectorConfig::default();
    let model: ToyDetector<f32> = build_toy_detector(&cfg, 7)?;
    let augmented = model.augment(1.0 / 9.0, 8)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor4::new([1, 1, 64, 64], (0..64 * 64).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let same = model.forward(&x)?.data().iter().zip(augmented.forward(&x)?.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("outputs bit-identical after augmentation: {same}");

    for (l, layer) in augmented.layers.iter().enumerate() {
        let c = layer.param_counts();
        println!(
            "layer {l}: shape {:?} r={} Δr={} base={} delta={} dense={}",
            layer.shape().dims(),
            layer.rank(),
            layer.delta_rank(),
            c.factored_base,
            c.factored_delta,
            c.dense
        );
    }
    println!("total {} -> {}", model.total_params(), augmented.total_params());
    println!("trainable after augmentation: {}", augmented.trainable_params());
    Ok(())
}
