//! Compression accounting from published parameter counts and from a layer
//! manifest.

use tensorfact::harness::report::{compression_percent, compression_percent_2dp, compression_report, LayerManifest};

const MANIFEST: &str = "\
# T S D2 D1
32 3 3 3
64 32 3 3
128 64 3 3
256 128 3 3
512 256 3 3
";

fn main() -> tensorfact::Result<()> {
    let baseline = 37_205_480;
    for params in [35_400_800, 33_594_257] {
        println!("{params} of {baseline}: {}%", compression_percent(params, baseline)?);
    }
    for trainable in [1_856_343, 3_662_886] {
        println!("{trainable} trainable of {baseline}: {}%", compression_percent_2dp(trainable, baseline)?);
    }

    let manifest = LayerManifest::parse(MANIFEST)?;
    let dense = manifest.dense_params() + 1_000;
    for alpha in [0.9, 0.5, 0.2] {
        print!("{}", compression_report(&manifest, alpha, dense, Some(1.0 / 9.0))?.render());
    }
    Ok(())
}
