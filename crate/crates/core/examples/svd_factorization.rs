//! Factorizes a random 3×3 kernel bank at several ranks and compares the
//! reconstruction error with the discarded singular values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorfact::factorized::{rank_for_alpha, sorted_svd, svd_initialize, KernelShape};
use tensorfact::tensor::{compose_factors, flatten_from_kernel, ConvGeometry, Tensor4};

fn main() -> tensorfact::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = [32, 16, 3, 3];
    let values: Vec<f64> = (0..dims.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kernel = Tensor4::new(dims, values)?;
    let shape = KernelShape::new(32, 16, 3, 3)?;
    let m = flatten_from_kernel(&kernel);
    let sigma = sorted_svd(&m)?.sigma;

    println!("{:>6} {:>5} {:>8} {:>12} {:>12}", "alpha", "rank", "params", "‖M-AB‖_F", "tail σ");
    for alpha in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
        let layer = svd_initialize(&kernel, alpha, ConvGeometry::same((3, 3)))?;
        let r = rank_for_alpha(shape, alpha)?;
        let approx = compose_factors(layer.a(), layer.b())?;
        let err: f64 = approx.data().iter().zip(m.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let tail: f64 = sigma[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        println!("{alpha:>6} {r:>5} {:>8} {err:>12.6} {tail:>12.6}", shape.factored_params(r));
    }
    println!("dense kernel: {} weights", shape.dense_params());
    Ok(())
}
