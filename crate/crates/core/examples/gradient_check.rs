//! Central-difference check of every gradient of the full training objective
//! (detection loss plus complementarity term) on small 64-bit detectors.

use tensorfact::tensor::PNorm;
use tensorfact::train::gradcheck::{finite_diff_check, gradcheck_fixture};

fn main() -> tensorfact::Result<()> {
    for seed in 1..=4 {
        for p in [PNorm::L1, PNorm::L2] {
            let (model, sample, loss) = gradcheck_fixture(seed, p, 5e-3)?;
            let report = finite_diff_check(&model, &sample, &loss, 1e-4)?;
            println!(
                "seed {seed} p={} entries={} max_rel_error={:.2e} worst={}[{}]",
                p.order(),
                report.checked,
                report.max_rel_error,
                report.worst.0,
                report.worst.1
            );
        }
    }
    Ok(())
}
