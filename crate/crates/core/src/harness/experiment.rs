//! The end-to-end transfer experiment: phase 1 on abundant modality-A data,
//! capacity augmentation, phase 2 on scarce modality-B data, evaluation of
//! the frozen phase-1 model and each phase-2 variant on held-out
//! modality-B images.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::{map50_95_thresholds, map50_thresholds, mean_ap, Detection, GroundTruthBox};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{generate_image, image_seed, GeneratedImage, Modality, SceneSpec};
use crate::harness::detector::{build_toy_detector, decode_detections, ToyDetector};
use crate::harness::report::{compression_percent, ExperimentReport, ModelReport};
use crate::harness::weights::save_weights;
use crate::real::Real;
use crate::tensor::PNorm;
use crate::train::objective::Sample;
use crate::train::protocol::{train_phase1, train_phase2, TrainConfig, TrainOutcome};

pub const OBJECTNESS_THRESHOLD: f64 = 0.5;

/// Dataset streams, each with its own seed derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainA,
    ValA,
    PoolB,
    ValB,
    TestB,
}

impl Stream {
    pub fn modality(self) -> Modality {
        match self {
            Stream::TrainA | Stream::ValA => Modality::A,
            _ => Modality::B,
        }
    }

    pub fn seed(self, run_seed: u64) -> u64 {
        image_seed(run_seed, 0x5354_5245_414D_0000 + self as u64)
    }
}

pub fn scene_spec(config: &ExperimentConfig) -> SceneSpec {
    let mut spec = SceneSpec::with_canvas(config.canvas);
    spec.class_weights.truncate(config.classes);
    spec.class_bands.truncate(config.classes);
    spec
}

/// Images `indices` of a stream; image ids are positions in `indices`.
pub fn stream_images(config: &ExperimentConfig, stream: Stream, indices: &[usize]) -> Result<Vec<GeneratedImage>> {
    let spec = scene_spec(config);
    let seed = stream.seed(config.train.seed);
    indices
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let mut img = generate_image(&spec, stream.modality(), seed, i)?;
            for b in &mut img.boxes {
                b.image_id = pos;
            }
            Ok(img)
        })
        .collect()
}

/// Sorted pool indices of the modality-B phase-2 training images.
pub fn selected_b_indices(config: &ExperimentConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(config.train.seed, 0x5345_4C45_4354));
    let mut idx = sample(&mut rng, config.n_pool_b, config.n_train_b()).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone)]
pub struct Datasets<T> {
    pub train_a: Vec<Sample<T>>,
    pub val_a: Vec<Sample<T>>,
    pub train_b: Vec<Sample<T>>,
    pub val_b: Vec<Sample<T>>,
    pub test_b: Vec<Sample<T>>,
    pub b_indices: Vec<usize>,
}

pub fn build_datasets<T: Real>(config: &ExperimentConfig) -> Result<Datasets<T>> {
    let grid = config.detector().grid((config.canvas, config.canvas))?;
    let samples = |stream, indices: &[usize]| -> Result<Vec<Sample<T>>> {
        Ok(stream_images(config, stream, indices)?.iter().enumerate().map(|(i, img)| with_id(img.to_sample(grid), i)).collect())
    };
    let range = |n: usize| (0..n).collect::<Vec<_>>();
    let b_indices = selected_b_indices(config);
    Ok(Datasets {
        train_a: samples(Stream::TrainA, &range(config.n_train_a))?,
        val_a: samples(Stream::ValA, &range(config.n_val_a))?,
        train_b: samples(Stream::PoolB, &b_indices)?,
        val_b: samples(Stream::ValB, &range(config.n_val_b))?,
        test_b: samples(Stream::TestB, &range(config.n_test_b))?,
        b_indices,
    })
}

fn with_id<T>(mut s: Sample<T>, id: usize) -> Sample<T> {
    s.image_id = id;
    for b in &mut s.boxes {
        b.image_id = id;
    }
    s
}

/// Decoded detections for every sample (image id = sample id).
pub fn detect<T: Real>(model: &ToyDetector<T>, samples: &[Sample<T>]) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for s in samples {
        let [_, _, h, w] = s.image.dims();
        let out = model.forward(&s.image)?;
        dets.extend(decode_detections(&out, model.classes, s.image_id, (w, h), OBJECTNESS_THRESHOLD)?);
    }
    Ok(dets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub map50: f64,
    pub map50_95: f64,
    /// AP at IoU 0.5 per class id; `None` for classes without ground truth.
    pub per_class_ap50: Vec<Option<f64>>,
}

pub fn evaluate<T: Real>(model: &ToyDetector<T>, samples: &[Sample<T>]) -> Result<Evaluation> {
    let dets = detect(model, samples)?;
    let gts: Vec<GroundTruthBox> = samples.iter().flat_map(|s| s.boxes.iter().copied()).collect();
    let m50 = mean_ap(&dets, &gts, &map50_thresholds())?;
    let m5095 = mean_ap(&dets, &gts, &map50_95_thresholds())?;
    let mut per_class_ap50 = vec![None; model.classes];
    for (c, ap) in m50.per_class {
        per_class_ap50[c] = Some(ap);
    }
    Ok(Evaluation { map50: m50.map, map50_95: m5095.map, per_class_ap50 })
}

fn p_label(p: Option<PNorm>) -> &'static str {
    match p {
        None => "augmented",
        Some(PNorm::L1) => "augmented-L1",
        Some(PNorm::L2) => "augmented-L2",
    }
}

/// Phase-2 variants run for a config: always the unregularized run, plus
/// the regularized one when `p_norm` is set.
pub fn phase2_variants(config: &ExperimentConfig) -> Vec<Option<PNorm>> {
    let mut v = vec![None];
    if let Some(p) = config.train.p_norm {
        v.push(Some(p));
    }
    v
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub phase1: TrainOutcome<f32>,
    pub phase2: Vec<(String, TrainOutcome<f32>)>,
}

fn model_report(name: &str, model: &ToyDetector<f32>, eval: Evaluation, dense: u64) -> Result<ModelReport> {
    Ok(ModelReport {
        name: name.into(),
        total_params: model.total_params() as u64,
        trainable_params: model.trainable_params() as u64,
        compression: compression_percent(model.total_params() as u64, dense)?,
        map50: eval.map50,
        map50_95: eval.map50_95,
        per_class_ap50: eval.per_class_ap50,
    })
}

/// Runs the whole protocol; with `out` set, writes the report, config,
/// training histories and weights there.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let data = build_datasets::<f32>(config)?;
    let initial: ToyDetector<f32> = build_toy_detector(&config.detector(), config.train.seed)?;
    let phase1 = train_phase1(&initial, &data.train_a, &data.val_a, &config.train)?;
    let mut frozen = phase1.model.clone();
    for l in &mut frozen.layers {
        l.freeze_base();
    }
    frozen.head.frozen = true;
    let dense = frozen.dense_equivalent_params() as u64;
    let mut models = vec![model_report("phase1-frozen", &frozen, evaluate(&frozen, &data.test_b)?, dense)?];

    let mut phase2 = Vec::new();
    if !config.baseline_only {
        let mut augmented = phase1.model.augment(config.delta_ratio, config.train.seed ^ 0x4155_474D)?;
        augmented.head.frozen = config.freeze_head_phase2;
        for p in phase2_variants(config) {
            let cfg = TrainConfig { p_norm: p, epochs: config.epochs_phase2, ..config.train.clone() };
            let run = train_phase2(&augmented, &data.train_b, &data.val_b, &cfg)?;
            let name = p_label(p);
            models.push(model_report(name, &run.model, evaluate(&run.model, &data.test_b)?, dense)?);
            phase2.push((name.to_string(), run));
        }
    }

    let report = ExperimentReport { seed: config.train.seed, config_hash: config.hash(), dense_baseline: dense, models };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), config.to_text())?;
        fs::write(dir.join("report.txt"), report.render())?;
        fs::write(dir.join("history_phase1.log"), phase1.history.to_log())?;
        save_weights(&phase1.model, &dir.join("phase1.tfw"))?;
        for (name, run) in &phase2 {
            fs::write(dir.join(format!("history_{name}.log")), run.history.to_log())?;
            save_weights(&run.model, &dir.join(format!("{name}.tfw")))?;
        }
    }
    Ok(ExperimentOutcome { report, phase1, phase2 })
}
