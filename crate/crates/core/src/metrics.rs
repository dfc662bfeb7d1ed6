//! Full-reference image quality metrics and dataset-level evaluation.
//!
//! MSE and PSNR are computed on the 8-bit scale (intensities times 255).
//! SSIM uses an 11x11 Gaussian window with sigma 1.5, `K1 = 0.01`,
//! `K2 = 0.03` and dynamic range 255 over the valid (unpadded) region,
//! computed per channel and averaged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Image, SourceSet, CHANNELS};

pub const PEAK: f64 = 255.0;
/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (x - y) * PEAK;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Valid-region separable filtering of a single plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn channel_plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(CHANNELS).map(|v| v * PEAK).collect()
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let x = channel_plane(a, c);
        let y = channel_plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, h, w, &taps);
        let mu_y = filter_valid(&y, h, w, &taps);
        let e_xx = filter_valid(&xx, h, w, &taps);
        let e_yy = filter_valid(&yy, h, w, &taps);
        let e_xy = filter_valid(&xy, h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / CHANNELS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl Scores {
    pub fn between(pred: &Image, truth: &Image) -> Result<Self> {
        let mse = mse(pred, truth)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse),
            ssim: ssim(pred, truth)?,
        })
    }

    fn mean(items: &[Scores]) -> Self {
        let n = items.len().max(1) as f64;
        Self {
            mse: items.iter().map(|s| s.mse).sum::<f64>() / n,
            psnr: items.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: items.iter().map(|s| s.ssim).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: String,
    pub per_stain: Vec<Scores>,
    /// Average over stains.
    pub mean: Scores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: Option<String>,
    pub checkpoint: Option<String>,
    pub config_hash: Option<String>,
}

/// Describes how aggregate values were formed.
pub const AGGREGATION: &str = "per-patch metrics averaged over stains, then arithmetic mean over samples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub meta: ReportMeta,
    pub aggregation: String,
    pub stain_names: Vec<String>,
    /// Sorted by id.
    pub samples: Vec<SampleScores>,
    pub per_stain_mean: Vec<Scores>,
    pub mean: Scores,
    pub missing_predictions: Vec<String>,
    pub missing_truth: Vec<String>,
}

/// Scores method outputs against ground truth, matched by sample id and
/// stain index. Ids present on only one side are listed and skipped.
pub fn evaluate(
    method: &str,
    outputs: &[(String, SourceSet)],
    truths: &[(String, SourceSet)],
    meta: ReportMeta,
) -> Result<MetricsReport> {
    let pred: BTreeMap<&str, &SourceSet> = outputs.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let truth: BTreeMap<&str, &SourceSet> = truths.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let pred_ids: BTreeSet<&str> = pred.keys().copied().collect();
    let truth_ids: BTreeSet<&str> = truth.keys().copied().collect();
    let mut samples = Vec::new();
    let mut stain_names: Option<Vec<String>> = None;
    for id in pred_ids.intersection(&truth_ids) {
        let (p, t) = (pred[id], truth[id]);
        if p.len() != t.len() {
            return Err(Error::param(format!(
                "sample {id}: {} predicted sources but {} in truth",
                p.len(),
                t.len()
            )));
        }
        let per_stain = p
            .sources()
            .iter()
            .zip(t.sources())
            .map(|(a, b)| Scores::between(a, b))
            .collect::<Result<Vec<_>>>()?;
        if let Some(names) = &stain_names {
            if names.len() != t.len() {
                return Err(Error::param(format!("sample {id} has a different stain count")));
            }
        } else {
            stain_names = Some(t.stain_names().to_vec());
        }
        samples.push(SampleScores {
            id: id.to_string(),
            mean: Scores::mean(&per_stain),
            per_stain,
        });
    }
    let stain_names = stain_names.unwrap_or_default();
    let per_stain_mean = (0..stain_names.len())
        .map(|k| Scores::mean(&samples.iter().map(|s| s.per_stain[k]).collect::<Vec<_>>()))
        .collect();
    let mean = Scores::mean(&samples.iter().map(|s| s.mean).collect::<Vec<_>>());
    Ok(MetricsReport {
        method: method.to_string(),
        meta,
        aggregation: AGGREGATION.to_string(),
        stain_names,
        samples,
        per_stain_mean,
        mean,
        missing_predictions: truth_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
        missing_truth: pred_ids.difference(&truth_ids).map(|s| s.to_string()).collect(),
    })
}

/// Methods side by side, best value per metric marked with `*`.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<6}", "");
    for r in reports {
        let _ = write!(out, " | {:>16}", r.method);
    }
    out.push('\n');
    type Pick = fn(&Scores) -> f64;
    let rows: [(&str, Pick, bool); 3] = [
        ("MSE", |s| s.mse, false),
        ("PSNR", |s| s.psnr, true),
        ("SSIM", |s| s.ssim, true),
    ];
    for (name, pick, higher_better) in rows {
        let values: Vec<f64> = reports.iter().map(|r| pick(&r.mean)).collect();
        let best = values
            .iter()
            .copied()
            .reduce(|a, b| if (b > a) == higher_better { b } else { a });
        let _ = write!(out, "{name:<6}");
        for v in &values {
            let mark = if Some(*v) == best { "*" } else { " " };
            let _ = write!(out, " | {:>15.4}{mark}", v);
        }
        out.push('\n');
    }
    out
}

/// Human-readable summary for a single report.
pub fn summary_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", report.method);
    let _ = writeln!(out, "samples evaluated: {}", report.samples.len());
    let _ = writeln!(out, "aggregation: {}", report.aggregation);
    if !report.missing_predictions.is_empty() {
        let _ = writeln!(out, "missing predictions: {}", report.missing_predictions.join(", "));
    }
    if !report.missing_truth.is_empty() {
        let _ = writeln!(out, "missing ground truth: {}", report.missing_truth.join(", "));
    }
    let _ = writeln!(out, "{:<12} {:>10} {:>10} {:>8}", "stain", "MSE", "PSNR", "SSIM");
    for (name, s) in report.stain_names.iter().zip(&report.per_stain_mean) {
        let _ = writeln!(out, "{name:<12} {:>10.4} {:>10.4} {:>8.4}", s.mse, s.psnr, s.ssim);
    }
    let m = report.mean;
    let _ = writeln!(out, "{:<12} {:>10.4} {:>10.4} {:>8.4}", "mean", m.mse, m.psnr, m.ssim);
    out
}
