//! The complementarity term on a single layer: zero when both branches
//! agree, increasingly negative as their activations diverge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorfact::tensor::{ConvGeometry, Tensor4};
use tensorfact::train::{complementarity_loss, total_loss};

fn main() -> tensorfact::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut random = |dims: [usize; 4]| Tensor4::<f64>::new(dims, (0..dims.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let k = random([4, 2, 3, 3])?;
    let noise = random([4, 2, 3, 3])?;
    let x = random([1, 2, 8, 8])?;
    let geom = ConvGeometry::same((3, 3));

    for t in [0.0, 0.25, 0.5, 1.0] {
        let delta = k.add(&noise.scaled(t))?;
        let l1 = complementarity_loss(&k, &delta, &x, &geom, 1)?;
        let l2 = complementarity_loss(&k, &delta, &x, &geom, 2)?;
        println!("perturbation {t:<4}: L_c(p=1) {l1:>9.4}  L_c(p=2) {l2:>8.4}  L_f {:>8.4}", total_loss(1.0, l2, 0.01));
    }
    Ok(())
}
