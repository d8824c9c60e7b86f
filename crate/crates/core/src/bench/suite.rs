//! Batch experiments over synthetic images.

use std::time::Instant;

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::metrics::MetricSet;
use super::synth::{generate, SynthSpec};
use crate::decompose::{run_psd_2d, Decomposition2D, PsdConfig};
use crate::error::{Error, Result};
use crate::geometry::{build_reference, ReferenceOptions, ReferenceResult};
use crate::scoring::{
    score_direct, score_normalized_distance, threshold_mask, DetectionReport, ScoringParams,
};

/// Outcome of one image in a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub index: usize,
    pub label: String,
    pub metrics: Option<MetricSet>,
    pub converged: Option<bool>,
    pub outer_iterations: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

/// The four rates without counts, used for means and deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(rename = "FOR")]
    pub false_omission_rate: f64,
    #[serde(rename = "FNR")]
    pub false_negative_rate: f64,
    #[serde(rename = "BA")]
    pub balanced_accuracy: f64,
    #[serde(rename = "DICE")]
    pub dice: f64,
}

impl MetricSummary {
    fn of(m: &MetricSet) -> Self {
        Self {
            false_omission_rate: m.false_omission_rate,
            false_negative_rate: m.false_negative_rate,
            balanced_accuracy: m.balanced_accuracy,
            dice: m.dice,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [
            self.false_omission_rate,
            self.false_negative_rate,
            self.balanced_accuracy,
            self.dice,
        ]
    }

    fn from_array(v: [f64; 4]) -> Self {
        Self {
            false_omission_rate: v[0],
            false_negative_rate: v[1],
            balanced_accuracy: v[2],
            dice: v[3],
        }
    }
}

/// Mean and population standard deviation over the successful images.
///
/// Returns `None` when no image produced metrics.
pub fn summarize(results: &[ImageResult]) -> Option<(MetricSummary, MetricSummary)> {
    let rows: Vec<[f64; 4]> = results
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .map(|m| MetricSummary::of(m).as_array())
        .collect();
    if rows.is_empty() {
        return None;
    }
    let count = rows.len() as f64;
    let mut mean = [0.0; 4];
    for r in &rows {
        for (acc, v) in mean.iter_mut().zip(r) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);
    let mut var = [0.0; 4];
    for r in &rows {
        for ((acc, v), mu) in var.iter_mut().zip(r).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var.map(|v| (v / count).sqrt());
    Some((MetricSummary::from_array(mean), MetricSummary::from_array(std)))
}

/// Structured result of [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: PsdConfig,
    pub threshold: f64,
    pub images: Vec<ImageResult>,
    pub mean: Option<MetricSummary>,
    pub std_dev: Option<MetricSummary>,
    pub failures: usize,
    pub total_seconds: f64,
}

impl SuiteReport {
    pub fn from_results(
        config: PsdConfig,
        threshold: f64,
        images: Vec<ImageResult>,
        total_seconds: f64,
    ) -> Self {
        let summary = summarize(&images);
        let failures = images.iter().filter(|r| r.error.is_some()).count();
        Self {
            config,
            threshold,
            mean: summary.map(|s| s.0),
            std_dev: summary.map(|s| s.1),
            images,
            failures,
            total_seconds,
        }
    }
}

/// Decomposes `observed`, scores its anomaly component directly and
/// thresholds the score, evaluating against `gt` when given.
pub fn detect_direct(
    observed: ArrayView2<f64>,
    gt: Option<ArrayView2<bool>>,
    cfg: &PsdConfig,
    threshold: f64,
) -> Result<(Decomposition2D, DetectionReport)> {
    let decomposition = run_psd_2d(observed, cfg)?;
    let mut report = threshold_mask(score_direct(decomposition.anomalies.view()), threshold);
    if let Some(gt) = gt {
        report = report.evaluate(gt)?;
    }
    Ok((decomposition, report))
}

/// The real-image path: builds the reference, scores the original against
/// it with the patch-normalized distance and thresholds the score.
///
/// Pixels the reference cannot cover keep score 0.
pub fn detect_patch(
    observed: ArrayView2<f64>,
    gt: Option<ArrayView2<bool>>,
    cfg: &PsdConfig,
    opts: &ReferenceOptions,
    params: &ScoringParams,
    threshold: f64,
) -> Result<(ReferenceResult, DetectionReport)> {
    params.validate()?;
    let reference = build_reference(observed, cfg, opts)?;
    let map = score_normalized_distance(
        observed,
        reference.reference.view(),
        Some(reference.validity.view()),
        params,
    )?;
    let mut report = threshold_mask(map, threshold);
    if let Some(gt) = gt {
        report = report.evaluate(gt)?;
    }
    Ok((reference, report))
}

/// Runs [`detect_direct`] on one image and packages the outcome, turning
/// errors into a recorded failure.
pub fn evaluate_image(
    index: usize,
    label: String,
    observed: ArrayView2<f64>,
    gt: ArrayView2<bool>,
    cfg: &PsdConfig,
    threshold: f64,
) -> ImageResult {
    let start = Instant::now();
    let outcome = detect_direct(observed, Some(gt), cfg, threshold);
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((dec, report)) => {
            log::info!(
                "image {index} ({label}): {} outer iterations, {seconds:.2}s",
                dec.trace.len()
            );
            ImageResult {
                index,
                label,
                metrics: report.metrics,
                converged: Some(dec.converged),
                outer_iterations: dec.trace.len(),
                seconds,
                error: None,
            }
        }
        Err(err) => {
            log::warn!("image {index} ({label}) failed: {err}");
            ImageResult {
                index,
                label,
                metrics: None,
                converged: None,
                outer_iterations: 0,
                seconds,
                error: Some(err.to_string()),
            }
        }
    }
}

/// Generates each spec, runs the direct detection path and collects
/// per-image metrics plus their mean and standard deviation.
///
/// A failing image is recorded in the report and the suite moves on.
pub fn run_suite(specs: &[SynthSpec], cfg: &PsdConfig, threshold: f64) -> Result<SuiteReport> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("suite needs at least one image".into()));
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut images = Vec::with_capacity(specs.len());
    for (index, spec) in specs.iter().enumerate() {
        let label = format!("seed-{}", spec.seed);
        match generate(spec) {
            Ok((observed, truth)) => images.push(evaluate_image(
                index,
                label,
                observed.view(),
                truth.anomaly_mask.view(),
                cfg,
                threshold,
            )),
            Err(err) => images.push(ImageResult {
                index,
                label,
                metrics: None,
                converged: None,
                outer_iterations: 0,
                seconds: 0.0,
                error: Some(err.to_string()),
            }),
        }
    }
    Ok(SuiteReport::from_results(
        cfg.clone(),
        threshold,
        images,
        start.elapsed().as_secs_f64(),
    ))
}

/// Noise level and reconstruction error of a reference image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    /// Population standard deviation of the noise matrix.
    pub sigma_e: f64,
    pub max_e: f64,
    /// Mean of `clean − reference`.
    pub mu_r: f64,
    pub sigma_r: f64,
    pub max_diff: f64,
}

fn mean_and_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var.sqrt())
}

pub fn reconstruction_stats(
    clean: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<ReconstructionStats> {
    if clean.dim() != reference.dim() || clean.dim() != noise.dim() {
        return Err(Error::Dimension(format!(
            "clean {:?}, reference {:?}, noise {:?}",
            clean.dim(),
            reference.dim(),
            noise.dim()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Dimension("empty image".into()));
    }
    let diff = Zip::from(clean).and(reference).map_collect(|&c, &r| c - r);
    let (_, sigma_e) = mean_and_std(noise.iter().copied());
    let (mu_r, sigma_r) = mean_and_std(diff.iter().copied());
    Ok(ReconstructionStats {
        sigma_e,
        max_e: noise.iter().fold(0.0, |m, v| m.max(v.abs())),
        mu_r,
        sigma_r,
        max_diff: diff.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identical_reference_has_zero_error() {
        let c = Array2::from_shape_fn((4, 4), |(i, j)| (i * j) as f64 * 0.1);
        let e = array![[1.0, -1.0, 1.0, -1.0]].broadcast((4, 4)).unwrap().to_owned();
        let s = reconstruction_stats(c.view(), c.view(), e.view()).unwrap();
        assert_eq!(s.mu_r, 0.0);
        assert_eq!(s.sigma_r, 0.0);
        assert_eq!(s.sigma_e, 1.0);
        assert_eq!(s.max_e, 1.0);
    }

    #[test]
    fn summary_is_arithmetic_mean() {
        let mk = |ba: f64| ImageResult {
            index: 0,
            label: String::new(),
            metrics: Some(MetricSet {
                false_omission_rate: 0.0,
                false_negative_rate: 0.0,
                balanced_accuracy: ba,
                dice: 1.0,
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 0,
            }),
            converged: Some(true),
            outer_iterations: 1,
            seconds: 0.0,
            error: None,
        };
        let mut failed = mk(0.0);
        failed.metrics = None;
        failed.error = Some("boom".into());
        let (mean, std) = summarize(&[mk(0.8), mk(1.0), failed]).unwrap();
        assert!((mean.balanced_accuracy - 0.9).abs() < 1e-15);
        assert!((std.balanced_accuracy - 0.1).abs() < 1e-15);
        assert!(summarize(&[]).is_none());
    }
}
