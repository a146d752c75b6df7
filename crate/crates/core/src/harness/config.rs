//! Experiment configuration and its flat `key = value` file format.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::detector::DetectorConfig;
use crate::tensor::PNorm;
use crate::train::protocol::TrainConfig;

/// Keys accepted in a config file, in canonical order.
pub const CONFIG_KEYS: [&str; 15] = [
    "alpha",
    "delta_ratio",
    "omega_c",
    "p_norm",
    "lr_phase1",
    "lr_phase2",
    "epochs",
    "batch_size",
    "accum_steps",
    "patience",
    "sched_factor",
    "seed",
    "canvas",
    "classes",
    "train_frac_b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub delta_ratio: f64,
    pub train: TrainConfig,
    /// Square canvas side in pixels.
    pub canvas: usize,
    pub classes: usize,
    /// Fraction of the modality-B pool used for phase-2 training.
    pub train_frac_b: f64,
    pub channels: Vec<usize>,
    pub downsample: Vec<usize>,
    pub n_train_a: usize,
    pub n_val_a: usize,
    pub n_pool_b: usize,
    pub n_val_b: usize,
    pub n_test_b: usize,
    /// Phase-2 epochs; the file's `epochs` key sets phase 1.
    pub epochs_phase2: usize,
    /// Keep the detection head fixed during phase 2.
    pub freeze_head_phase2: bool,
    /// Stop after evaluating the phase-1 model.
    pub baseline_only: bool,
}

impl Default for ExperimentConfig {
    /// The desk-scale reference configuration.
    fn default() -> Self {
        Self {
            alpha: 0.9,
            delta_ratio: 1.0 / 9.0,
            train: TrainConfig { p_norm: Some(PNorm::L1), ..TrainConfig::default() },
            canvas: 64,
            classes: 3,
            train_frac_b: 0.01,
            channels: vec![1, 16, 32, 64, 64, 64, 64],
            downsample: vec![1, 2, 3],
            n_train_a: 1000,
            n_val_a: 100,
            n_pool_b: 5000,
            n_val_b: 100,
            n_test_b: 200,
            epochs_phase2: 30,
            freeze_head_phase2: false,
            baseline_only: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub fn parse_p_norm(value: &str) -> Result<Option<PNorm>> {
    match value {
        "none" => Ok(None),
        "1" => Ok(Some(PNorm::L1)),
        "2" => Ok(Some(PNorm::L2)),
        other => Err(Error::Config(format!("p_norm must be none, 1 or 2, got {other:?}"))),
    }
}

fn p_norm_text(p: Option<PNorm>) -> &'static str {
    match p {
        None => "none",
        Some(PNorm::L1) => "1",
        Some(PNorm::L2) => "2",
    }
}

impl ExperimentConfig {
    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown or repeated keys are errors.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            seen.push(key);
            self.set(key, value)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::default().apply_text(text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "alpha" => self.alpha = parse_num(key, v)?,
            "delta_ratio" => self.delta_ratio = parse_num(key, v)?,
            "omega_c" => t.omega_c = parse_num(key, v)?,
            "p_norm" => t.p_norm = parse_p_norm(v)?,
            "lr_phase1" => t.lr_phase1 = parse_num(key, v)?,
            "lr_phase2" => t.lr_phase2 = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "accum_steps" => t.accum_steps = parse_num(key, v)?,
            "patience" => t.patience = parse_num(key, v)?,
            "sched_factor" => t.sched_factor = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "canvas" => self.canvas = parse_num(key, v)?,
            "classes" => self.classes = parse_num(key, v)?,
            "train_frac_b" => self.train_frac_b = parse_num(key, v)?,
            _ => unreachable!("key checked against CONFIG_KEYS"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.detector().validate()?;
        if !(self.delta_ratio > 0.0 && self.delta_ratio <= 1.0) {
            return Err(Error::Config(format!("delta_ratio must lie in (0, 1], got {}", self.delta_ratio)));
        }
        if !(self.train_frac_b > 0.0 && self.train_frac_b <= 1.0) {
            return Err(Error::Config(format!("train_frac_b must lie in (0, 1], got {}", self.train_frac_b)));
        }
        if !(1..=3).contains(&self.classes) {
            return Err(Error::Config(format!("classes must be 1..=3, got {}", self.classes)));
        }
        crate::harness::experiment::scene_spec(self)
            .validate()
            .map_err(|e| Error::Config(format!("canvas {}: {e}", self.canvas)))?;
        if self.n_train_a == 0 || self.n_pool_b == 0 || self.n_test_b == 0 || self.epochs_phase2 == 0 {
            return Err(Error::Config("dataset sizes and phase-2 epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            channels: self.channels.clone(),
            downsample: self.downsample.clone(),
            window: 3,
            classes: self.classes,
            alpha: self.alpha,
        }
    }

    /// Number of modality-B images used for phase-2 training (at least one).
    pub fn n_train_b(&self) -> usize {
        ((self.train_frac_b * self.n_pool_b as f64).round() as usize).clamp(1, self.n_pool_b)
    }

    /// Canonical file text: every key, in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let values = [
            self.alpha.to_string(),
            self.delta_ratio.to_string(),
            t.omega_c.to_string(),
            p_norm_text(t.p_norm).to_string(),
            t.lr_phase1.to_string(),
            t.lr_phase2.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.accum_steps.to_string(),
            t.patience.to_string(),
            t.sched_factor.to_string(),
            t.seed.to_string(),
            self.canvas.to_string(),
            self.classes.to_string(),
            self.train_frac_b.to_string(),
        ];
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("write to String");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical text plus the
    /// settings that have no file key.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text());
        h.update(format!(
            "channels={:?} downsample={:?} sizes={},{},{},{},{} epochs_phase2={} freeze_head_phase2={} baseline_only={}",
            self.channels,
            self.downsample,
            self.n_train_a,
            self.n_val_a,
            self.n_pool_b,
            self.n_val_b,
            self.n_test_b,
            self.epochs_phase2,
            self.freeze_head_phase2,
            self.baseline_only
        ));
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = ExperimentConfig::default();
        c.train.p_norm = Some(PNorm::L2);
        c.train.seed = 42;
        c.delta_ratio = 0.25;
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn parses_partial_files_with_comments() {
        let c = ExperimentConfig::from_text("# demo\nalpha = 0.8\n\np_norm = none  # off\nseed=3\n").unwrap();
        assert_eq!(c.alpha, 0.8);
        assert_eq!(c.train.p_norm, None);
        assert_eq!(c.train.seed, 3);
    }

    #[test]
    fn rejects_bad_files() {
        for text in ["alpah = 0.9", "alpha 0.9", "alpha = x", "p_norm = 3", "alpha = 0.9\nalpha = 0.8", "omega_c = -1", "epochs = 0"] {
            assert!(matches!(ExperimentConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn one_percent_of_pool() {
        assert_eq!(ExperimentConfig::default().n_train_b(), 50);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
