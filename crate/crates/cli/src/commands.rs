use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use psd::bench::{
    compute_metrics, detect_direct, detect_patch, generate, ImageResult, MetricSet, SuiteReport,
};
use psd::decompose::IterationRecord;
use psd::scoring::DetectionReport;
use psd::{run_psd_1d, run_psd_2d};
use serde::Serialize;

use crate::config::{Method, RunConfig};
use crate::error::CliError;
use crate::io;

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::input(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

pub fn synth(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let spec = cfg.synth_spec();
    let (observed, truth) = generate(&spec)?;
    let dir = prepare_out(cfg)?;
    io::write_csv(&dir.join("observed.csv"), observed.view())?;
    io::write_gray_png(&dir.join("observed.png"), observed.view())?;
    io::write_csv(&dir.join("clean.csv"), truth.clean.view())?;
    io::write_gray_png(&dir.join("clean.png"), truth.clean.view())?;
    io::write_csv(&dir.join("noise.csv"), truth.noise.view())?;
    io::write_csv(&dir.join("anomalies.csv"), truth.anomaly_values.view())?;
    io::write_mask_csv(&dir.join("mask.csv"), truth.anomaly_mask.view())?;
    io::write_mask_png(&dir.join("mask.png"), truth.anomaly_mask.view())?;
    write_json(&dir.join("spec.json"), &spec)?;
    Ok(dir)
}

#[derive(Serialize)]
struct DecomposeSummary<'a> {
    command: &'a str,
    input: String,
    size: Vec<usize>,
    converged: bool,
    outer_iterations: usize,
    trace: &'a [IterationRecord],
    wall_seconds: f64,
    config: &'a RunConfig,
}

fn finish(dir: &Path, converged: bool) -> Result<PathBuf, CliError> {
    if converged {
        Ok(dir.to_path_buf())
    } else {
        Err(CliError::NotConverged(dir.display().to_string()))
    }
}

pub fn decompose1d(input: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let y = io::read_signal(input)?;
    let start = Instant::now();
    let dec = run_psd_1d(y.view(), &cfg.psd())?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let dir = prepare_out(cfg)?;
    io::write_vector_csv(&dir.join("periodic.csv"), dec.periodic.view())?;
    io::write_vector_csv(&dir.join("anomalies.csv"), dec.anomalies.view())?;
    io::write_vector_csv(&dir.join("noise.csv"), dec.noise.view())?;
    io::write_vector_csv(&dir.join("lambda.csv"), dec.lambda.values().view())?;
    write_json(
        &dir.join("summary.json"),
        &DecomposeSummary {
            command: "decompose1d",
            input: input.display().to_string(),
            size: vec![y.len()],
            converged: dec.converged,
            outer_iterations: dec.trace.len(),
            trace: &dec.trace,
            wall_seconds,
            config: cfg,
        },
    )?;
    finish(&dir, dec.converged)
}

pub fn decompose2d(input: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let y = io::read_square(input)?;
    let start = Instant::now();
    let dec = run_psd_2d(y.view(), &cfg.psd())?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let dir = prepare_out(cfg)?;
    io::write_csv(&dir.join("periodic.csv"), dec.periodic.view())?;
    io::write_gray_png(&dir.join("periodic.png"), dec.periodic.view())?;
    io::write_csv(&dir.join("anomalies.csv"), dec.anomalies.view())?;
    io::write_csv(&dir.join("noise.csv"), dec.noise.view())?;
    io::write_vector_csv(&dir.join("lambda1.csv"), dec.lambda1.values().view())?;
    io::write_vector_csv(&dir.join("lambda2.csv"), dec.lambda2.values().view())?;
    write_json(
        &dir.join("summary.json"),
        &DecomposeSummary {
            command: "decompose2d",
            input: input.display().to_string(),
            size: vec![y.nrows(), y.ncols()],
            converged: dec.converged,
            outer_iterations: dec.trace.len(),
            trace: &dec.trace,
            wall_seconds,
            config: cfg,
        },
    )?;
    finish(&dir, dec.converged)
}

/// Everything one detection run produces at working resolution.
pub struct Detection {
    pub report: DetectionReport,
    pub reference: Array2<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub estimated_angle: Option<f64>,
    pub applied_angle: f64,
    intermediates: Vec<(&'static str, Array2<f64>)>,
    lambdas: [ndarray::Array1<f64>; 2],
}

pub fn run_detection(img: ArrayView2<f64>, cfg: &RunConfig) -> Result<Detection, CliError> {
    let work = io::downsample(img, cfg.downsample);
    match cfg.method {
        Method::Patch => {
            let (reference, report) = detect_patch(
                work.view(),
                None,
                &cfg.psd(),
                &cfg.reference(),
                &cfg.scoring(),
                cfg.threshold(),
            )?;
            let dec = &reference.decomposition;
            Ok(Detection {
                converged: dec.converged,
                outer_iterations: dec.trace.len(),
                estimated_angle: reference.estimated_angle,
                applied_angle: reference.plan.angle_degrees,
                lambdas: [dec.lambda1.values().clone(), dec.lambda2.values().clone()],
                intermediates: vec![
                    ("rotated", reference.rotated.clone()),
                    ("periodic", dec.periodic.clone()),
                    ("anomalies", dec.anomalies.clone()),
                    ("noise", dec.noise.clone()),
                    ("expanded", reference.expanded.data.clone()),
                    ("validity", reference.validity.mapv(|b| if b { 1.0 } else { 0.0 })),
                ],
                reference: reference.reference,
                report,
            })
        }
        Method::Direct => {
            let (dec, report) = detect_direct(work.view(), None, &cfg.psd(), cfg.threshold())?;
            Ok(Detection {
                converged: dec.converged,
                outer_iterations: dec.trace.len(),
                estimated_angle: None,
                applied_angle: 0.0,
                lambdas: [dec.lambda1.values().clone(), dec.lambda2.values().clone()],
                intermediates: vec![
                    ("anomalies", dec.anomalies.clone()),
                    ("noise", dec.noise.clone()),
                ],
                reference: dec.periodic,
                report,
            })
        }
    }
}

/// Metrics of a working-resolution mask against a full-resolution truth.
fn full_resolution_metrics(
    det: &Detection,
    gt: ArrayView2<bool>,
    factor: usize,
) -> Result<MetricSet, CliError> {
    let mask = io::upsample_mask(det.report.mask.view(), factor, gt.dim());
    Ok(compute_metrics(mask.view(), gt)?)
}

#[derive(Serialize)]
struct DetectSummary<'a> {
    command: &'a str,
    input: String,
    method: Method,
    threshold: f64,
    working_size: usize,
    estimated_angle: Option<f64>,
    applied_angle: f64,
    converged: bool,
    outer_iterations: usize,
    flagged_pixels: usize,
    wall_seconds: f64,
    config: &'a RunConfig,
}

pub fn detect(input: &Path, gt: Option<&Path>, cfg: &RunConfig, debug: bool) -> Result<PathBuf, CliError> {
    let img = io::read_square(input)?;
    let truth = match gt {
        Some(p) => {
            let m = io::center_square(io::read_mask(p)?, p);
            if m.dim() != img.dim() {
                return Err(CliError::input(format!(
                    "ground truth {:?} does not match image {:?}",
                    m.dim(),
                    img.dim()
                )));
            }
            Some(m)
        }
        None => None,
    };
    let start = Instant::now();
    let det = run_detection(img.view(), cfg)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let dir = prepare_out(cfg)?;
    let threshold = cfg.threshold();
    let scores = &det.report.score_map.scores;
    io::write_csv(&dir.join("reference.csv"), det.reference.view())?;
    io::write_gray_png(&dir.join("reference.png"), det.reference.view())?;
    io::write_csv(&dir.join("score.csv"), scores.view())?;
    // Mid-gray marks the threshold.
    let scale = if threshold.is_finite() && threshold > 0.0 { 2.0 * threshold } else { 1.0 };
    io::write_gray_png(&dir.join("score.png"), scores.mapv(|s| s / scale).view())?;
    io::write_mask_csv(&dir.join("mask.csv"), det.report.mask.view())?;
    io::write_mask_png(&dir.join("mask.png"), det.report.mask.view())?;
    if let Some(truth) = &truth {
        let metrics = full_resolution_metrics(&det, truth.view(), cfg.downsample)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
    }
    if debug {
        for (name, m) in &det.intermediates {
            io::write_csv(&dir.join(format!("{name}.csv")), m.view())?;
        }
        io::write_vector_csv(&dir.join("lambda1.csv"), det.lambdas[0].view())?;
        io::write_vector_csv(&dir.join("lambda2.csv"), det.lambdas[1].view())?;
    }
    write_json(
        &dir.join("summary.json"),
        &DetectSummary {
            command: "detect",
            input: input.display().to_string(),
            method: cfg.method,
            threshold,
            working_size: det.report.mask.nrows(),
            estimated_angle: det.estimated_angle,
            applied_angle: det.applied_angle,
            converged: det.converged,
            outer_iterations: det.outer_iterations,
            flagged_pixels: det.report.mask.iter().filter(|&&b| b).count(),
            wall_seconds,
            config: cfg,
        },
    )?;
    finish(&dir, det.converged)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "csv"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    for name in [format!("{stem}_mask"), stem.to_string()] {
        for ext in IMAGE_EXTENSIONS {
            let p = gt_dir.join(format!("{name}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

/// Per-category and overall results of [`eval`].
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub method: Method,
    pub threshold: f64,
    pub categories: Vec<(String, SuiteReport)>,
    pub overall: SuiteReport,
}

fn evaluate_file(index: usize, label: String, image: &Path, mask: Option<&Path>, cfg: &RunConfig) -> ImageResult {
    let start = Instant::now();
    let outcome = (|| -> Result<(Detection, MetricSet), CliError> {
        let img = io::read_square(image)?;
        let gt = match mask {
            Some(p) => io::center_square(io::read_mask(p)?, p),
            None => Array2::from_elem(img.dim(), false),
        };
        if gt.dim() != img.dim() {
            return Err(CliError::input(format!("mask {:?} vs image {:?}", gt.dim(), img.dim())));
        }
        let det = run_detection(img.view(), cfg)?;
        let metrics = full_resolution_metrics(&det, gt.view(), cfg.downsample)?;
        Ok((det, metrics))
    })();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((det, metrics)) => {
            log::info!("{label}: {seconds:.2}s, DICE {:.4}", metrics.dice);
            ImageResult {
                index,
                label,
                metrics: Some(metrics),
                converged: Some(det.converged),
                outer_iterations: det.outer_iterations,
                seconds,
                error: None,
            }
        }
        Err(err) => {
            log::warn!("{label} failed: {err}");
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

/// Evaluates an MVTec-style tree: `test/<category>/<image>` with masks at
/// `ground_truth/<category>/<image stem>_mask.<ext>`. Images without a mask
/// have no anomalous pixels. Without a `test` folder the dataset root itself
/// holds the categories.
pub fn eval(dataset: &Path, cfg: &RunConfig) -> Result<(PathBuf, EvalReport), CliError> {
    if !dataset.is_dir() {
        return Err(CliError::input(format!("{} is not a directory", dataset.display())));
    }
    let test_root = if dataset.join("test").is_dir() { dataset.join("test") } else { dataset.to_path_buf() };
    let gt_root = dataset.join("ground_truth");
    let threshold = cfg.threshold();
    let start = Instant::now();
    let mut categories = Vec::new();
    let mut all = Vec::new();
    for cat_dir in sorted_entries(&test_root)? {
        if !cat_dir.is_dir() || cat_dir == gt_root {
            continue;
        }
        let name = cat_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let images: Vec<PathBuf> = sorted_entries(&cat_dir)?.into_iter().filter(|p| is_image(p)).collect();
        if images.is_empty() {
            continue;
        }
        let cat_start = Instant::now();
        let mut results = Vec::with_capacity(images.len());
        for (index, image) in images.iter().enumerate() {
            let stem = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let mask = find_mask(&gt_root.join(&name), &stem);
            let file = image.file_name().unwrap_or_default().to_string_lossy();
            results.push(evaluate_file(index, format!("{name}/{file}"), image, mask.as_deref(), cfg));
        }
        all.extend(results.iter().cloned());
        categories.push((
            name,
            SuiteReport::from_results(cfg.psd(), threshold, results, cat_start.elapsed().as_secs_f64()),
        ));
    }
    if all.is_empty() {
        return Err(CliError::input(format!("no images found under {}", test_root.display())));
    }
    let report = EvalReport {
        method: cfg.method,
        threshold,
        categories,
        overall: SuiteReport::from_results(cfg.psd(), threshold, all, start.elapsed().as_secs_f64()),
    };
    let dir = prepare_out(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    fs::write(dir.join("report.txt"), render_table(&report))?;
    Ok((dir, report))
}

pub fn render_table(report: &EvalReport) -> String {
    let mut out = format!(
        "{:<24} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "category", "images", "failed", "FOR", "FNR", "BA", "DICE"
    );
    let rows = report
        .categories
        .iter()
        .map(|(n, r)| (n.as_str(), r))
        .chain(std::iter::once(("overall", &report.overall)));
    for (name, r) in rows {
        let m = r.mean.unwrap_or_default();
        out += &format!(
            "{:<24} {:>6} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            name,
            r.images.len(),
            r.failures,
            m.false_omission_rate,
            m.false_negative_rate,
            m.balanced_accuracy,
            m.dice
        );
    }
    out
}
