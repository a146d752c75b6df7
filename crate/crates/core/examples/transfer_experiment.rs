//! The two-phase transfer protocol end to end on a reduced configuration:
//! train on modality A, augment, fine-tune on 1% of modality B, evaluate.
//!
//! Pass `--full` for the reference configuration (a few minutes).

use tensorfact::harness::config::ExperimentConfig;
use tensorfact::harness::experiment::run_experiment;

fn main() -> tensorfact::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let cfg = if full {
        ExperimentConfig::default()
    } else {
        ExperimentConfig::from_text("canvas = 48\nepochs = 5\np_norm = 2\n")?
    };
    let outcome = run_experiment(&cfg, None)?;
    println!("phase 1 best epoch {} (val L_d {:.4})", outcome.phase1.best_epoch, outcome.phase1.best_val_loss);
    for (name, run) in &outcome.phase2 {
        println!("{name}: best epoch {} (val L_d {:.4})", run.best_epoch, run.best_val_loss);
    }
    print!("{}", outcome.report.render());
    Ok(())
}
