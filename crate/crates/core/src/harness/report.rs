//! Compression accounting and experiment reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::factorized::{rank_for_alpha, KernelShape};

/// Convolution kernel shapes `(T, S, D2, D1)` of some architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerManifest {
    pub layers: Vec<KernelShape>,
}

impl LayerManifest {
    /// One `T S D2 D1` line per layer; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let dims: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("manifest line {}: {line:?}", n + 1)))?;
            if dims.len() != 4 {
                return Err(Error::Parse(format!("manifest line {}: expected T S D2 D1", n + 1)));
            }
            let shape = KernelShape::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| Error::Parse(format!("manifest line {}: {e}", n + 1)))?;
            layers.push(shape);
        }
        if layers.is_empty() {
            return Err(Error::Parse("manifest lists no layers".into()));
        }
        Ok(Self { layers })
    }

    /// Weight count of the unfactorized kernels.
    pub fn dense_params(&self) -> u64 {
        self.layers.iter().map(|s| s.dense_params() as u64).sum()
    }

    /// Weight count with every kernel factorized at rank `rank_for_alpha(α)`.
    pub fn factored_params(&self, alpha: f64) -> Result<u64> {
        self.layers.iter().map(|s| Ok(s.factored_params(rank_for_alpha(*s, alpha)?) as u64)).sum()
    }

    /// Weight count of augmentation branches with `Δr = max(1, ⌊ratio·r⌋)`.
    pub fn delta_params(&self, alpha: f64, delta_ratio: f64) -> Result<u64> {
        self.layers
            .iter()
            .map(|s| {
                let dr = crate::factorized::delta_rank_for_ratio(rank_for_alpha(*s, alpha)?, delta_ratio)?;
                Ok(s.factored_params(dr) as u64)
            })
            .sum()
    }
}

/// Compression `(1 − params/baseline)·100` in units of 10⁻⁴ percent,
/// rounded half away from zero with exact integer arithmetic.
fn compression_ten_thousandths(params: u64, baseline: u64) -> Result<i128> {
    if baseline == 0 {
        return Err(Error::Argument("baseline parameter count must be positive".into()));
    }
    let num = (baseline as i128 - params as i128) * 1_000_000;
    Ok(div_round_half_away(num, baseline as i128))
}

fn div_round_half_away(num: i128, den: i128) -> i128 {
    let (q, r) = (num / den, num % den);
    if 2 * r.abs() >= den {
        q + num.signum()
    } else {
        q
    }
}

fn fixed(units: i128, scale: i128, digits: usize) -> String {
    let sign = if units < 0 { "-" } else { "" };
    let a = units.abs();
    format!("{sign}{}.{:0digits$}", a / scale, a % scale)
}

/// Compression percentage to 4 decimal places, e.g. `4.8506`.
pub fn compression_percent(params: u64, baseline: u64) -> Result<String> {
    Ok(fixed(compression_ten_thousandths(params, baseline)?, 10_000, 4))
}

/// Two-decimal compression percentage, obtained by rounding the 4-decimal
/// value (so 3,662,886 of 37,205,480 gives 90.1550 → `90.16`).
pub fn compression_percent_2dp(params: u64, baseline: u64) -> Result<String> {
    let four = compression_ten_thousandths(params, baseline)?;
    Ok(fixed(div_round_half_away(four, 100), 100, 2))
}

/// Table-style compression row for a manifest factorized at `alpha`.
///
/// `baseline` is the full model's parameter count; parameters outside the
/// listed kernels (biases, normalization, …) are taken as
/// `baseline − dense kernel weights` and kept unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionRow {
    pub alpha_text: String,
    pub baseline: u64,
    pub params: u64,
    pub trainable_delta: Option<u64>,
    pub percent: String,
    pub trainable_percent_2dp: Option<String>,
}

pub fn compression_report(manifest: &LayerManifest, alpha: f64, baseline: u64, delta_ratio: Option<f64>) -> Result<CompressionRow> {
    let dense = manifest.dense_params();
    if dense > baseline {
        return Err(Error::Argument(format!("manifest kernels hold {dense} weights, more than the baseline {baseline}")));
    }
    let params = baseline - dense + manifest.factored_params(alpha)?;
    let trainable_delta = delta_ratio.map(|r| manifest.delta_params(alpha, r)).transpose()?;
    Ok(CompressionRow {
        alpha_text: alpha.to_string(),
        baseline,
        params,
        trainable_delta,
        percent: compression_percent(params, baseline)?,
        trainable_percent_2dp: trainable_delta.map(|t| compression_percent_2dp(t, baseline)).transpose()?,
    })
}

impl CompressionRow {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<8} {:>14} {:>16}", "alpha", "params", "compression(%)").unwrap();
        writeln!(out, "{:<8} {:>14} {:>16}", "baseline", self.baseline, "0.0000").unwrap();
        writeln!(out, "{:<8} {:>14} {:>16}", self.alpha_text, self.params, self.percent).unwrap();
        if let (Some(t), Some(p)) = (self.trainable_delta, &self.trainable_percent_2dp) {
            writeln!(out, "{:<8} {:>14} {:>16}", "delta", t, p).unwrap();
        }
        out
    }
}

/// Metrics and parameter counts for one evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub name: String,
    pub total_params: u64,
    pub trainable_params: u64,
    /// Against the dense twin of the same architecture.
    pub compression: String,
    pub map50: f64,
    pub map50_95: f64,
    pub per_class_ap50: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config_hash: String,
    pub dense_baseline: u64,
    pub models: Vec<ModelReport>,
}

impl ExperimentReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Human-readable table followed by a `key=value` block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seed {}  config {}  dense baseline {} params", self.seed, self.config_hash, self.dense_baseline).unwrap();
        writeln!(out, "{:<16} {:>10} {:>10} {:>12} {:>8} {:>10}  AP50 per class", "model", "params", "trainable", "compress(%)", "mAP50", "mAP50-95").unwrap();
        for m in &self.models {
            let per_class: Vec<String> = m.per_class_ap50.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.4}"))).collect();
            writeln!(
                out,
                "{:<16} {:>10} {:>10} {:>12} {:>8.4} {:>10.4}  {}",
                m.name,
                m.total_params,
                m.trainable_params,
                m.compression,
                m.map50,
                m.map50_95,
                per_class.join(" ")
            )
            .unwrap();
        }
        out.push('\n');
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "config_hash={}", self.config_hash).unwrap();
        writeln!(out, "dense_baseline={}", self.dense_baseline).unwrap();
        for m in &self.models {
            let k = &m.name;
            writeln!(out, "{k}.params={}", m.total_params).unwrap();
            writeln!(out, "{k}.trainable={}", m.trainable_params).unwrap();
            writeln!(out, "{k}.compression={}", m.compression).unwrap();
            writeln!(out, "{k}.map50={:.6}", m.map50).unwrap();
            writeln!(out, "{k}.map50_95={:.6}", m.map50_95).unwrap();
            for (c, ap) in m.per_class_ap50.iter().enumerate() {
                writeln!(out, "{k}.ap50.class{c}={}", ap.map_or("none".into(), |v| format!("{v:.6}"))).unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASELINE: u64 = 37_205_480;

    #[test]
    fn published_compression_figures() {
        assert_eq!(compression_percent(35_400_800, BASELINE).unwrap(), "4.8506");
        assert_eq!(compression_percent(33_594_257, BASELINE).unwrap(), "9.7062");
        assert_eq!(compression_percent_2dp(1_856_343, BASELINE).unwrap(), "95.01");
        assert_eq!(compression_percent_2dp(3_662_886, BASELINE).unwrap(), "90.16");
        assert_eq!(compression_percent(BASELINE, BASELINE).unwrap(), "0.0000");
    }

    #[test]
    fn rounding_edges() {
        assert_eq!(compression_percent(0, 1).unwrap(), "100.0000");
        assert_eq!(compression_percent(2, 1).unwrap(), "-100.0000");
        // 1/3 → 66.666…%
        assert_eq!(compression_percent(1, 3).unwrap(), "66.6667");
        assert_eq!(compression_percent_2dp(1, 3).unwrap(), "66.67");
        // 1 − 1/8 = 87.5% exactly.
        assert_eq!(compression_percent_2dp(1, 8).unwrap(), "87.50");
        assert!(matches!(compression_percent(1, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn manifest_parsing_and_counts() {
        let m = LayerManifest::parse("# toy\n16 1 3 3\n32 16 3 3\n").unwrap();
        assert_eq!(m.dense_params(), 144 + 4608);
        // r = 8 for both: 16·8 + 8·9 = 200; 512·8 + 8·9 = 4168.
        assert_eq!(m.factored_params(0.9).unwrap(), 200 + 4168);
        assert_eq!(m.delta_params(0.9, 1.0 / 9.0).unwrap(), 25 + 521);
        assert!(LayerManifest::parse("16 1 3").is_err());
        assert!(LayerManifest::parse("16 0 3 3").is_err());
        assert!(LayerManifest::parse("# nothing\n").is_err());
        let row = compression_report(&m, 0.9, 10_000, Some(1.0 / 9.0)).unwrap();
        assert_eq!(row.params, 10_000 - 4752 + 4368);
        assert_eq!(row.percent, "3.8400");
    }
}
