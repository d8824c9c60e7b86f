//! Direction estimation, rotation, expansion and the reference image.
//!
//! Angles are in degrees. Rotating by `θ` turns image content by `θ` about
//! the pixel center `((n−1)/2, (n−1)/2)`; [`estimate_direction`] applied to
//! an axis-aligned pattern rotated by `θ` returns `θ` (folded into
//! `(−45, 45]`), so aligning an image means rotating it by the negated
//! estimate.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::decompose::{run_psd_2d, Decomposition2D, PsdConfig};
use crate::error::{Error, Result};
use crate::periodic::PeriodicPatternVector;

/// Radius (in unpadded frequency bins) around DC ignored by the peak search.
const DC_EXCLUSION: f64 = 2.0;
/// Dominant peak must exceed the median magnitude by this factor.
const PEAK_TO_MEDIAN: f64 = 10.0;
/// Peaks whose directions differ by less than this are treated as collinear.
const COLLINEAR_DEGREES: f64 = 15.0;
/// Number of strongest spectral maxima used in the mirror-symmetry score.
const SYMMETRY_PEAKS: usize = 16;
/// Relative margin an alternative lattice axis needs to beat the dominant peak.
const SYMMETRY_MARGIN: f64 = 0.05;
const EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
}

/// Integer square `top..top+size`, `left..left+size` inside the rotated
/// frame (same size and center as the input).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

/// Angle and crop used to align an `n × n` image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationPlan {
    /// Estimated content direction; alignment rotates by the negation.
    pub angle_degrees: f64,
    pub interpolation: Interpolation,
    pub crop_rect: CropRect,
}

impl RotationPlan {
    /// Plan for aligning an `n × n` image whose content lies at
    /// `angle_degrees`, using the largest fully valid inscribed square.
    pub fn new(n: usize, angle_degrees: f64) -> Result<Self> {
        if !angle_degrees.is_finite() || angle_degrees.abs() > 45.0 {
            return Err(Error::InvalidConfig(format!(
                "rotation angle {angle_degrees} outside [-45, 45]"
            )));
        }
        let size = inscribed_size(n, angle_degrees);
        if size == 0 {
            return Err(Error::TooSmall { edge: n, required: 1 });
        }
        let top = (n - size) / 2;
        Ok(Self {
            angle_degrees,
            interpolation: Interpolation::Bilinear,
            crop_rect: CropRect { top, left: top, size },
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            angle_degrees: 0.0,
            interpolation: Interpolation::Bilinear,
            crop_rect: CropRect { top: 0, left: 0, size: n },
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle_degrees == 0.0
    }
}

fn fold_degrees(a: f64) -> f64 {
    let mut f = a - 90.0 * (a / 90.0).round();
    if f <= -45.0 {
        f += 90.0;
    }
    if f > 45.0 {
        f -= 90.0;
    }
    f
}

/// Source coordinates `(row, col)` of output pixel `(i, j)` when content is
/// rotated by `angle` and the output center `c_out` maps to `c_in`.
fn source_position(i: f64, j: f64, sin: f64, cos: f64, c_in: f64, c_out: f64) -> (f64, f64) {
    let x = j - c_out;
    let y = i - c_out;
    (-sin * x + cos * y + c_in, cos * x + sin * y + c_in)
}

fn inside(v: f64, len: usize) -> bool {
    v >= -EDGE_TOLERANCE && v <= len as f64 - 1.0 + EDGE_TOLERANCE
}

/// Bilinear sample at a continuous position; positions outside the image
/// are clamped onto it (nearest valid pixel).
pub fn bilinear(img: ArrayView2<f64>, row: f64, col: f64) -> f64 {
    let (h, w) = img.dim();
    let r = row.clamp(0.0, h as f64 - 1.0);
    let c = col.clamp(0.0, w as f64 - 1.0);
    let r0 = (r.floor() as usize).min(h.saturating_sub(2));
    let c0 = (c.floor() as usize).min(w.saturating_sub(2));
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let top = img[[r0, c0]] * (1.0 - fc) + img[[r0, c1]] * fc;
    let bottom = img[[r1, c0]] * (1.0 - fc) + img[[r1, c1]] * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Rotates `img` by `angle_degrees` into an `out × out` frame sharing its
/// center. Returns the image and the mask of pixels sampled from inside
/// the input; the rest hold the nearest input pixel.
pub fn rotate(img: ArrayView2<f64>, angle_degrees: f64, out: usize) -> (Array2<f64>, Array2<bool>) {
    let n = img.nrows();
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let c_in = (n as f64 - 1.0) / 2.0;
    let c_out = (out as f64 - 1.0) / 2.0;
    let mut valid = Array2::from_elem((out, out), true);
    let rotated = Array2::from_shape_fn((out, out), |(i, j)| {
        let (r, c) = source_position(i as f64, j as f64, sin, cos, c_in, c_out);
        if !(inside(r, n) && inside(c, n)) {
            valid[[i, j]] = false;
        }
        bilinear(img, r, c)
    });
    (rotated, valid)
}

fn square_is_valid(n: usize, size: usize, sin: f64, cos: f64) -> bool {
    let c_in = (n as f64 - 1.0) / 2.0;
    let c_out = (size as f64 - 1.0) / 2.0;
    let last = size as f64 - 1.0;
    [(0.0, 0.0), (0.0, last), (last, 0.0), (last, last)]
        .iter()
        .all(|&(i, j)| {
            let (r, c) = source_position(i, j, sin, cos, c_in, c_out);
            inside(r, n) && inside(c, n)
        })
}

/// Edge of the largest axis-aligned square, centered in the frame, whose
/// pixels all sample inside an `n × n` image rotated by `angle_degrees`.
pub fn inscribed_size(n: usize, angle_degrees: f64) -> usize {
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let mut size = ((n as f64) / (cos.abs() + sin.abs())).floor() as usize;
    size = size.min(n);
    while size > 0 && !square_is_valid(n, size, sin, cos) {
        size -= 1;
    }
    size
}

/// Aligns `img` by rotating it by `−plan.angle_degrees` and cropping to the
/// plan's square. A zero angle returns an exact copy.
pub fn rotate_and_crop(img: ArrayView2<f64>, plan: &RotationPlan) -> Result<Array2<f64>> {
    let (h, w) = img.dim();
    if h != w {
        return Err(Error::Dimension(format!("image must be square, got {h}x{w}")));
    }
    if plan.angle_degrees.abs() > 45.0 {
        return Err(Error::InvalidConfig(format!(
            "rotation angle {} outside [-45, 45]",
            plan.angle_degrees
        )));
    }
    if plan.is_identity() {
        return Ok(img.to_owned());
    }
    let (rotated, valid) = rotate(img, -plan.angle_degrees, plan.crop_rect.size);
    debug_assert!(valid.iter().all(|&v| v));
    Ok(rotated)
}

fn fft2(data: &mut Array2<Complex<f64>>) {
    let mut planner = FftPlanner::<f64>::new();
    for axis in [Axis(1), Axis(0)] {
        let len = data.len_of(axis);
        let fft = planner.plan_fft_forward(len);
        let mut buffer = vec![Complex::new(0.0, 0.0); len];
        for mut lane in data.lanes_mut(axis) {
            for (b, v) in buffer.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            fft.process(&mut buffer);
            for (v, b) in lane.iter_mut().zip(buffer.iter()) {
                *v = *b;
            }
        }
    }
}

struct Spectrum {
    magnitude: Array2<f64>,
    size: usize,
}

impl Spectrum {
    fn of(img: ArrayView2<f64>) -> Self {
        let n = img.nrows();
        let size = (4 * n).next_power_of_two();
        let mean = img.mean().unwrap_or(0.0);
        let hann: Vec<f64> = (0..n)
            .map(|k| {
                if n == 1 {
                    1.0
                } else {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n as f64 - 1.0)).cos()
                }
            })
            .collect();
        let mut data = Array2::from_elem((size, size), Complex::new(0.0, 0.0));
        for ((i, j), &v) in img.indexed_iter() {
            data[[i, j]] = Complex::new((v - mean) * hann[i] * hann[j], 0.0);
        }
        fft2(&mut data);
        Self {
            magnitude: data.mapv(|c| c.norm()),
            size,
        }
    }

    fn freq(&self, index: usize) -> f64 {
        if index < self.size / 2 {
            index as f64
        } else {
            index as f64 - self.size as f64
        }
    }

    fn at(&self, fy: isize, fx: isize) -> f64 {
        let p = self.size as isize;
        self.magnitude[[fy.rem_euclid(p) as usize, fx.rem_euclid(p) as usize]]
    }

    /// Bilinear magnitude at a fractional frequency.
    fn sample(&self, fy: f64, fx: f64) -> f64 {
        let y0 = fy.floor();
        let x0 = fx.floor();
        let dy = fy - y0;
        let dx = fx - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        (1.0 - dy) * ((1.0 - dx) * self.at(y0, x0) + dx * self.at(y0, x0 + 1))
            + dy * ((1.0 - dx) * self.at(y0 + 1, x0) + dx * self.at(y0 + 1, x0 + 1))
    }

    /// Local maxima outside the DC disc, strongest first, as
    /// `(magnitude, fy, fx)` with sub-bin refinement.
    fn peaks(&self, n: usize) -> Vec<(f64, f64, f64)> {
        let dc = DC_EXCLUSION * self.size as f64 / n as f64;
        let mut found = Vec::new();
        for ((u, v), &m) in self.magnitude.indexed_iter() {
            let (fy, fx) = (self.freq(u), self.freq(v));
            if fy.hypot(fx) <= dc || m <= 0.0 {
                continue;
            }
            let (iy, ix) = (fy as isize, fx as isize);
            let is_max = (-1..=1).all(|dy| (-1..=1).all(|dx| self.at(iy + dy, ix + dx) <= m));
            if is_max {
                found.push((m, fy + self.offset(iy, ix, true), fx + self.offset(iy, ix, false)));
            }
        }
        found.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        found
    }

    /// Parabolic sub-bin offset on log magnitude along one axis.
    fn offset(&self, iy: isize, ix: isize, vertical: bool) -> f64 {
        let (a, b) = if vertical {
            (self.at(iy - 1, ix), self.at(iy + 1, ix))
        } else {
            (self.at(iy, ix - 1), self.at(iy, ix + 1))
        };
        let c = self.at(iy, ix);
        if a <= 0.0 || b <= 0.0 {
            return 0.0;
        }
        let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
        let denom = la - 2.0 * lc + lb;
        if denom >= 0.0 {
            return 0.0;
        }
        (0.5 * (la - lb) / denom).clamp(-0.5, 0.5)
    }

    fn median(&self) -> f64 {
        let mut all: Vec<f64> = self.magnitude.iter().copied().collect();
        let mid = all.len() / 2;
        all.select_nth_unstable_by(mid, f64::total_cmp);
        all[mid]
    }

    /// How well the strongest maxima map onto the spectrum after mirroring
    /// about the axis at `angle` degrees.
    fn mirror_score(&self, peaks: &[(f64, f64, f64)], angle: f64) -> f64 {
        let (s2, c2) = (2.0 * angle.to_radians()).sin_cos();
        let mut hit = 0.0;
        let mut norm = 0.0;
        for &(m, fy, fx) in peaks {
            let mx = c2 * fx + s2 * fy;
            let my = s2 * fx - c2 * fy;
            hit += m * self.sample(my, mx);
            norm += m * m;
        }
        if norm > 0.0 {
            hit / norm
        } else {
            0.0
        }
    }
}

fn direction(fy: f64, fx: f64) -> f64 {
    fy.atan2(fx).to_degrees()
}

fn line_separation(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Direction of the periodic lattice of a square image, in `(−45, 45]`.
///
/// The strongest spectral peak outside the DC region gives the first
/// candidate. When the two strongest non-collinear peaks are diagonal to
/// the lattice (as for a checkerboard), their sum and difference point
/// along it; the candidate whose mirror axis best matches the spectrum is
/// kept, with the dominant peak winning near-ties.
pub fn estimate_direction(img: ArrayView2<f64>) -> Result<f64> {
    let (h, w) = img.dim();
    if h != w {
        return Err(Error::Dimension(format!("image must be square, got {h}x{w}")));
    }
    if h < 8 {
        return Err(Error::TooSmall { edge: h, required: 8 });
    }
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("image contains non-finite values".into()));
    }
    let spectrum = Spectrum::of(img);
    let peaks = spectrum.peaks(h);
    let Some(&(top, fy1, fx1)) = peaks.first() else {
        return Err(Error::NoPeriodicity);
    };
    if top <= 1e-9 * (h * h) as f64 || top < PEAK_TO_MEDIAN * spectrum.median() {
        return Err(Error::NoPeriodicity);
    }
    let dominant = direction(fy1, fx1);
    let mut candidates = vec![dominant];
    if let Some(&(_, fy2, fx2)) = peaks
        .iter()
        .skip(1)
        .find(|p| line_separation(direction(p.1, p.2), dominant) > COLLINEAR_DEGREES)
    {
        candidates.push(direction(fy2, fx2));
        candidates.push(direction(fy1 + fy2, fx1 + fx2));
        candidates.push(direction(fy1 - fy2, fx1 - fx2));
    }
    let strongest = &peaks[..peaks.len().min(SYMMETRY_PEAKS)];
    let mut best = dominant;
    let mut best_score = spectrum.mirror_score(strongest, dominant);
    for &cand in &candidates[1..] {
        let score = spectrum.mirror_score(strongest, cand);
        if score > best_score * (1.0 + SYMMETRY_MARGIN) {
            best = cand;
            best_score = score;
        }
    }
    Ok(fold_degrees(best))
}

/// A matrix grown around an original block, with the block's position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expanded {
    pub data: Array2<f64>,
    /// Row of the original block's first row inside `data`.
    pub top: usize,
    /// Column of the original block's first column inside `data`.
    pub left: usize,
}

fn weighted_line(
    lambda: ArrayView1<f64>,
    normalizer: f64,
    lines: ArrayView2<f64>,
    from_start: bool,
) -> ndarray::Array1<f64> {
    let m = lambda.len();
    let count = lines.nrows();
    let mut out = ndarray::Array1::<f64>::zeros(lines.ncols());
    for k in 1..m {
        let weight = lambda[k];
        if weight == 0.0 {
            continue;
        }
        let idx = if from_start { k - 1 } else { count - k };
        out.scaled_add(weight, &lines.row(idx));
    }
    out / normalizer
}

fn grow_rows(
    data: Array2<f64>,
    lambda: &PeriodicPatternVector,
    add_top: usize,
    add_bottom: usize,
) -> Result<Array2<f64>> {
    let m = lambda.len();
    if data.nrows() < m - 1 {
        return Err(Error::Dimension(format!(
            "pattern length {m} needs at least {} lines, got {}",
            m - 1,
            data.nrows()
        )));
    }
    let normalizer: f64 = lambda.values().sum();
    if normalizer.abs() <= 1e-12 {
        return Err(Error::DegeneratePattern(
            "pattern vector sums to zero, cannot expand".into(),
        ));
    }
    let lambda = lambda.values().view();
    let cols = data.ncols();
    let mut current = data;
    let (mut t, mut b) = (0, 0);
    while t < add_top || b < add_bottom {
        if t < add_top && (t <= b || b >= add_bottom) {
            let window = current.slice(s![..m - 1, ..]);
            let row = weighted_line(lambda, normalizer, window, true);
            let mut next = Array2::zeros((current.nrows() + 1, cols));
            next.row_mut(0).assign(&row);
            next.slice_mut(s![1.., ..]).assign(&current);
            current = next;
            t += 1;
        } else {
            let start = current.nrows() - (m - 1);
            let window = current.slice(s![start.., ..]);
            let row = weighted_line(lambda, normalizer, window, false);
            current.push_row(row.view()).expect("row length matches");
            b += 1;
        }
    }
    Ok(current)
}

/// Grows `reference` (an `m × m` periodic image) to at least
/// `target_rows × target_cols`, one line at a time.
///
/// Each new top row is `Σ_{k≥1} λ1_k · row_{k−1} / Σ λ1` over the first
/// `m−1` rows of the current matrix, each new bottom row the mirror image
/// of that rule; top and bottom alternate. Columns are then added the same
/// way with `λ2`. Extra lines are split as evenly as possible between the
/// two sides, the surplus going to the top/left.
pub fn expand_reference(
    reference: ArrayView2<f64>,
    lambda1: &PeriodicPatternVector,
    lambda2: &PeriodicPatternVector,
    target_rows: usize,
    target_cols: usize,
) -> Result<Expanded> {
    let (rows, cols) = reference.dim();
    let top = target_rows.saturating_sub(rows).div_ceil(2);
    let left = target_cols.saturating_sub(cols).div_ceil(2);
    let bottom = target_rows.saturating_sub(rows) - top;
    let right = target_cols.saturating_sub(cols) - left;
    expand_sides(reference, lambda1, lambda2, [top, bottom, left, right])
}

/// Like [`expand_reference`] with explicit line counts
/// `[top, bottom, left, right]`.
pub fn expand_sides(
    reference: ArrayView2<f64>,
    lambda1: &PeriodicPatternVector,
    lambda2: &PeriodicPatternVector,
    sides: [usize; 4],
) -> Result<Expanded> {
    let (rows, cols) = reference.dim();
    if lambda1.len() != rows || lambda2.len() != cols {
        return Err(Error::Dimension(format!(
            "pattern lengths ({}, {}) do not match image {rows}x{cols}",
            lambda1.len(),
            lambda2.len()
        )));
    }
    let [top, bottom, left, right] = sides;
    let grown = grow_rows(reference.to_owned(), lambda1, top, bottom)?;
    let grown = grow_rows(grown.reversed_axes().as_standard_layout().to_owned(), lambda2, left, right)?
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    Ok(Expanded { data: grown, top, left })
}

/// Options of the reference pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceOptions {
    pub enable_rotation: bool,
    /// Estimated angles with smaller magnitude are treated as zero.
    pub min_rotation_degrees: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            enable_rotation: true,
            min_rotation_degrees: 0.5,
        }
    }
}

/// Every intermediate of the reference pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResult {
    pub plan: RotationPlan,
    /// Angle returned by the estimator before the minimum-angle cut.
    pub estimated_angle: Option<f64>,
    pub rotated: Array2<f64>,
    pub decomposition: Decomposition2D,
    pub expanded: Expanded,
    /// Reference in the input frame.
    pub reference: Array2<f64>,
    /// False where the reference had to be filled from the nearest pixel
    /// of the expanded support.
    pub validity: Array2<bool>,
}

/// Rotates the image into alignment, decomposes it, expands the periodic
/// part and rotates it back into the input frame.
pub fn build_reference(
    img: ArrayView2<f64>,
    cfg: &PsdConfig,
    opts: &ReferenceOptions,
) -> Result<ReferenceResult> {
    let (n, w) = img.dim();
    if n != w {
        return Err(Error::Dimension(format!("image must be square, got {n}x{w}")));
    }
    cfg.validate()?;
    let estimated_angle = if opts.enable_rotation {
        Some(estimate_direction(img).map_err(|e| Error::at_stage("direction estimation", e))?)
    } else {
        None
    };
    let angle = match estimated_angle {
        Some(a) if a.abs() >= opts.min_rotation_degrees => a,
        _ => 0.0,
    };
    let align = |e| Error::at_stage("alignment", e);
    let plan = if angle == 0.0 {
        RotationPlan::identity(n)
    } else {
        RotationPlan::new(n, angle).map_err(align)?
    };
    let m = plan.crop_rect.size;
    let guard = cfg.guard_for(m);
    if m < 4 * guard {
        return Err(align(Error::TooSmall { edge: m, required: 4 * guard }));
    }
    let rotated = rotate_and_crop(img, &plan).map_err(align)?;
    let decomposition =
        run_psd_2d(rotated.view(), cfg).map_err(|e| Error::at_stage("decomposition", e))?;

    if plan.is_identity() {
        let reference = decomposition.periodic.clone();
        return Ok(ReferenceResult {
            plan,
            estimated_angle,
            rotated,
            expanded: Expanded {
                data: reference.clone(),
                top: 0,
                left: 0,
            },
            decomposition,
            reference,
            validity: Array2::from_elem((n, n), true),
        });
    }

    let (sin, cos) = angle.to_radians().sin_cos();
    let c_in = (n as f64 - 1.0) / 2.0;
    let c_out = (m as f64 - 1.0) / 2.0;
    let reach = c_in * (cos.abs() + sin.abs());
    let extra = (reach - c_out).max(0.0).ceil() as usize + 1;
    let expanded = expand_sides(
        decomposition.periodic.view(),
        &decomposition.lambda1,
        &decomposition.lambda2,
        [extra; 4],
    )
    .map_err(|e| Error::at_stage("reference expansion", e))?;

    let (eh, ew) = expanded.data.dim();
    let row0 = expanded.top as f64 + c_out;
    let col0 = expanded.left as f64 + c_out;
    let mut validity = Array2::from_elem((n, n), true);
    let reference = Array2::from_shape_fn((n, n), |(i, j)| {
        // Inverse of the alignment rotation: content goes back by +angle.
        let x = j as f64 - c_in;
        let y = i as f64 - c_in;
        let xr = cos * x + sin * y;
        let yr = -sin * x + cos * y;
        let (r, c) = (yr + row0, xr + col0);
        if !(inside(r, eh) && inside(c, ew)) {
            validity[[i, j]] = false;
        }
        bilinear(expanded.data.view(), r, c)
    });

    Ok(ReferenceResult {
        plan,
        estimated_angle,
        rotated,
        decomposition,
        expanded,
        reference,
        validity,
    })
}
