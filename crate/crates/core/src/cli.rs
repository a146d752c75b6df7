//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (bad files, configs,
//! shapes, state), 3 numeric error (non-finite values or a failed gradient
//! check).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{map50_95_thresholds, map50_thresholds, mean_ap, GroundTruthBox};
use crate::harness::config::{parse_p_norm, ExperimentConfig};
use crate::harness::data::{read_dataset, write_dataset, GeneratedImage};
use crate::harness::experiment::{detect, run_experiment, selected_b_indices, stream_images, Stream};
use crate::harness::report::{compression_percent, compression_percent_2dp, compression_report, LayerManifest};
use crate::harness::weights::{load_weights, save_weights};
use crate::harness::detector::build_toy_detector;
use crate::tensor::PNorm;
use crate::train::gradcheck::{finite_diff_check, gradcheck_fixture};
use crate::train::objective::Sample;
use crate::train::protocol::{train_phase1, train_phase2, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Step size used by the `gradcheck` subcommand.
pub const GRADCHECK_EPSILON: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "tensorfact", about = "Factorized convolutions with capacity augmentation for cross-modal detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the five dataset splits (train_a, val_a, train_b, val_b, test_b).
    GenData(Common),
    /// Phase 1: train on modality A.
    TrainRgb {
        #[command(flatten)]
        common: Common,
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Add augmentation branches to phase-1 weights and freeze the base.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Phase 2: train the augmentation branches on scarce modality-B data.
    TrainIr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate weights on a dataset split (mAP 50 and mAP 50-95).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// A split directory containing .pgm/.txt pairs.
        #[arg(long)]
        data: PathBuf,
    },
    /// Compression accounting.
    Report {
        #[command(flatten)]
        common: Common,
        /// Kernel manifest (`T S D2 D1` per line).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        baseline: u64,
        /// Augmentation rank ratio for the trainable-delta row.
        #[arg(long)]
        delta_ratio: Option<f64>,
        /// Report a given parameter count instead of a manifest.
        #[arg(long)]
        params: Option<u64>,
    },
    /// Finite-difference check of the toy detector's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// `1`, `2` or `both`.
        #[arg(long, default_value = "both")]
        p: String,
    },
    /// Full experiment: data, phase 1, augmentation, phase 2, evaluation, report.
    RunAll(Common),
}

/// Runs the CLI on `args` (without the program name) and returns the exit code.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("tensorfact".to_string()).chain(args.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_text(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn to_samples(images: &[GeneratedImage], cfg: &ExperimentConfig) -> Result<Vec<Sample<f32>>> {
    let grid = cfg.detector().grid((cfg.canvas, cfg.canvas))?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            if img.canvas != (cfg.canvas, cfg.canvas) {
                return Err(Error::Parse(format!("image {i} is {:?}, config canvas is {}", img.canvas, cfg.canvas)));
            }
            let mut s = img.to_sample::<f32>(grid);
            s.image_id = i;
            Ok(s)
        })
        .collect()
}

fn read_split(dir: &Path, split: &str, cfg: &ExperimentConfig) -> Result<Vec<Sample<f32>>> {
    to_samples(&read_dataset(&dir.join(split))?, cfg)
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::GenData(common) => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let range = |n: usize| (0..n).collect::<Vec<_>>();
            let splits = [
                ("train_a", Stream::TrainA, range(cfg.n_train_a)),
                ("val_a", Stream::ValA, range(cfg.n_val_a)),
                ("train_b", Stream::PoolB, selected_b_indices(&cfg)),
                ("val_b", Stream::ValB, range(cfg.n_val_b)),
                ("test_b", Stream::TestB, range(cfg.n_test_b)),
            ];
            for (name, stream, idx) in splits {
                let images = stream_images(&cfg, stream, &idx)?;
                write_dataset(&dir.join(name), &images)?;
                writeln!(out, "{name}: {} images", images.len())?;
            }
        }
        Command::TrainRgb { common, data } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let train = read_split(&data, "train_a", &cfg)?;
            let val = read_split(&data, "val_a", &cfg)?;
            let initial = build_toy_detector::<f32>(&cfg.detector(), cfg.train.seed)?;
            let run = train_phase1(&initial, &train, &val, &cfg.train)?;
            save_weights(&run.model, &dir.join("phase1.tfw"))?;
            fs::write(dir.join("history_phase1.log"), run.history.to_log())?;
            writeln!(out, "best epoch {} val L_d {}", run.best_epoch, run.best_val_loss)?;
        }
        Command::Augment { common, weights } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let model = load_weights(&weights, &cfg.detector())?;
            let mut aug = model.augment(cfg.delta_ratio, cfg.train.seed ^ 0x4155_474D)?;
            aug.head.frozen = cfg.freeze_head_phase2;
            save_weights(&aug, &dir.join("augmented.tfw"))?;
            writeln!(out, "params {} trainable {}", aug.total_params(), aug.trainable_params())?;
        }
        Command::TrainIr { common, weights, data } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let model = load_weights(&weights, &cfg.detector())?;
            let train = read_split(&data, "train_b", &cfg)?;
            let val = read_split(&data, "val_b", &cfg)?;
            let tc = TrainConfig { epochs: cfg.epochs_phase2, ..cfg.train.clone() };
            let run = train_phase2(&model, &train, &val, &tc)?;
            save_weights(&run.model, &dir.join("phase2.tfw"))?;
            fs::write(dir.join("history_phase2.log"), run.history.to_log())?;
            writeln!(out, "best epoch {} val L_d {}", run.best_epoch, run.best_val_loss)?;
        }
        Command::Eval { common, weights, data } => {
            let cfg = load_config(&common)?;
            let model = load_weights(&weights, &cfg.detector())?;
            let samples = to_samples(&read_dataset(&data)?, &cfg)?;
            let dets = detect(&model, &samples)?;
            let gts: Vec<GroundTruthBox> = samples.iter().flat_map(|s| s.boxes.iter().copied()).collect();
            let m50 = mean_ap(&dets, &gts, &map50_thresholds())?;
            let m5095 = mean_ap(&dets, &gts, &map50_95_thresholds())?;
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                let text: String = dets.iter().map(|d| format!("{d}\n")).collect();
                fs::write(dir.join("detections.txt"), text)?;
            }
            writeln!(out, "images={} detections={}", samples.len(), dets.len())?;
            writeln!(out, "map50={:.6}", m50.map)?;
            writeln!(out, "map50_95={:.6}", m5095.map)?;
        }
        Command::Report { common: _, manifest, alpha, baseline, delta_ratio, params } => match (manifest, params) {
            (Some(path), None) => {
                let alpha = alpha.ok_or_else(|| Error::Argument("--manifest needs --alpha".into()))?;
                let m = LayerManifest::parse(&fs::read_to_string(path)?)?;
                write!(out, "{}", compression_report(&m, alpha, baseline, delta_ratio)?.render())?;
            }
            (None, Some(p)) => {
                writeln!(out, "params={p} baseline={baseline}")?;
                writeln!(out, "compression={}", compression_percent(p, baseline)?)?;
                writeln!(out, "compression_2dp={}", compression_percent_2dp(p, baseline)?)?;
            }
            _ => return Err(Error::Argument("report needs exactly one of --manifest or --params".into())),
        },
        Command::Gradcheck { common, p } => {
            let seed = common.seed.unwrap_or(0);
            let norms: Vec<PNorm> = match p.as_str() {
                "both" => vec![PNorm::L1, PNorm::L2],
                other => vec![parse_p_norm(other)?.ok_or_else(|| Error::Argument("gradcheck needs p = 1, 2 or both".into()))?],
            };
            let mut worst: f64 = 0.0;
            for p in norms {
                let (model, sample, loss) = gradcheck_fixture(seed, p, 5e-3)?;
                let r = finite_diff_check(&model, &sample, &loss, GRADCHECK_EPSILON)?;
                writeln!(out, "p={} max_rel_error={:e} worst={}[{}] checked={}", p.order(), r.max_rel_error, r.worst.0, r.worst.1, r.checked)?;
                worst = worst.max(r.max_rel_error);
            }
            writeln!(out, "max_rel_error={worst:e}")?;
            if worst > GRADCHECK_TOLERANCE {
                return Err(Error::Numeric(format!("gradient check error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}")));
            }
        }
        Command::RunAll(common) => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common)?;
            let outcome = run_experiment(&cfg, Some(&dir))?;
            write!(out, "{}", outcome.report.render())?;
        }
    }
    Ok(EXIT_OK)
}
