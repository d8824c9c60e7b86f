//! Pixel-level anomaly scores.
//!
//! Two scoring paths are provided. [`score_direct`] turns the sparse
//! component of a decomposition into a normalized magnitude map. The patch
//! path ([`score_normalized_distance`]) compares the original image with a
//! reconstructed reference: for every reference patch it finds the `K` most
//! similar reference patches, gathers the original-image patches at those
//! locations, and measures how far the original deviates from their
//! per-pixel mean in units of their per-pixel standard deviation.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::bench::metrics::{compute_metrics, MetricSet};
use crate::error::{Error, Result};

/// Threshold for the direct score on synthetic data.
pub const DIRECT_THRESHOLD: f64 = 3.0;
/// Threshold for the patch score on real images.
pub const PATCH_THRESHOLD: f64 = 2.0;

/// Per-pixel scores plus the pixels that are allowed to carry evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub scores: Array2<f64>,
    pub validity: Array2<bool>,
}

impl ScoreMap {
    /// Wraps a score matrix with every pixel valid.
    pub fn all_valid(scores: Array2<f64>) -> Self {
        let validity = Array2::from_elem(scores.dim(), true);
        Self { scores, validity }
    }

    /// Zeroes the score of every pixel outside `validity` and stores the mask.
    pub fn restrict(mut self, validity: ArrayView2<bool>) -> Result<Self> {
        if validity.dim() != self.scores.dim() {
            return Err(Error::Dimension(format!(
                "validity {:?} vs scores {:?}",
                validity.dim(),
                self.scores.dim()
            )));
        }
        Zip::from(&mut self.scores)
            .and(&mut self.validity)
            .and(validity)
            .for_each(|s, v, &ok| {
                *v = *v && ok;
                if !*v {
                    *s = 0.0;
                }
            });
        Ok(self)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.scores.dim()
    }
}

/// `Sc_ij = |A_ij| · n / ‖A‖_F` for an `n × n` anomaly matrix.
///
/// An all-zero input produces an all-zero map.
pub fn score_direct(a: ArrayView2<f64>) -> ScoreMap {
    let n = a.nrows() as f64;
    let fro = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scores = if fro > 0.0 {
        a.mapv(|v| v.abs() * n / fro)
    } else {
        Array2::zeros(a.dim())
    };
    ScoreMap::all_valid(scores)
}

/// Square patches cut from an image on a regular grid.
///
/// `patches` holds one flattened (row-major) patch per row, in the same
/// order as `origins`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_edge: usize,
    pub stride: usize,
    pub image_dim: (usize, usize),
    pub origins: Vec<(usize, usize)>,
    pub patches: Array2<f64>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn patch(&self, index: usize) -> ArrayView1<'_, f64> {
        self.patches.row(index)
    }
}

fn grid_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().expect("at least one start") != last {
        starts.push(last);
    }
    starts
}

/// Cuts `img` into `patch_edge × patch_edge` patches every `stride` pixels.
///
/// When the stride does not land on the far border an extra row/column of
/// patches is added flush with it, so every pixel is covered.
pub fn extract_patches(img: ArrayView2<f64>, patch_edge: usize, stride: usize) -> Result<PatchGrid> {
    let (rows, cols) = img.dim();
    if patch_edge == 0 || stride == 0 {
        return Err(Error::InvalidConfig("patch edge and stride must be at least 1".into()));
    }
    if patch_edge > rows || patch_edge > cols {
        return Err(Error::Dimension(format!(
            "patch edge {patch_edge} exceeds image {rows}x{cols}"
        )));
    }
    let row_starts = grid_starts(rows, patch_edge, stride);
    let col_starts = grid_starts(cols, patch_edge, stride);
    let m = patch_edge * patch_edge;
    let mut origins = Vec::with_capacity(row_starts.len() * col_starts.len());
    let mut patches = Array2::zeros((row_starts.len() * col_starts.len(), m));
    for &r in &row_starts {
        for &c in &col_starts {
            let k = origins.len();
            let window = img.slice(s![r..r + patch_edge, c..c + patch_edge]);
            for (dst, &src) in patches.row_mut(k).iter_mut().zip(window.iter()) {
                *dst = src;
            }
            origins.push((r, c));
        }
    }
    Ok(PatchGrid {
        patch_edge,
        stride,
        image_dim: (rows, cols),
        origins,
        patches,
    })
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` reference patches closest to patch `query` (itself
/// included), ordered by distance with ties broken by index.
pub fn knn_patches(query: usize, grid: &PatchGrid, k: usize) -> Result<Vec<usize>> {
    knn_patches_separated(query, grid, k, 0)
}

/// [`knn_patches`] restricted to candidates whose origin differs from the
/// query's by at least `min_offset` pixels along some axis. The query
/// itself is always a candidate. If too few candidates remain, the
/// restriction is dropped.
pub fn knn_patches_separated(
    query: usize,
    grid: &PatchGrid,
    k: usize,
    min_offset: usize,
) -> Result<Vec<usize>> {
    if query >= grid.len() {
        return Err(Error::Dimension(format!(
            "query {query} outside grid of {}",
            grid.len()
        )));
    }
    if k == 0 || k > grid.len() {
        return Err(Error::InvalidConfig(format!(
            "K = {k} must lie in 1..={}",
            grid.len()
        )));
    }
    let q = grid.patch(query);
    let (qr, qc) = grid.origins[query];
    let separated = |j: usize| {
        let (r, c) = grid.origins[j];
        j == query || r.abs_diff(qr) >= min_offset || c.abs_diff(qc) >= min_offset
    };
    let available = (0..grid.len()).filter(|&j| separated(j)).count();
    let keep = |j: usize| available < k || separated(j);
    let mut ranked: Vec<(f64, usize)> = (0..grid.len())
        .filter(|&j| keep(j))
        .map(|j| (squared_distance(q, grid.patch(j)), j))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance);
        ranked.truncate(k);
    }
    ranked.sort_by(by_distance);
    Ok(ranked.into_iter().map(|(_, j)| j).collect())
}

/// Per-position sample mean and standard deviation over the patches of
/// `grid` listed in `indices`. The deviation is floored at `eps_sigma`.
pub fn patch_statistics(
    indices: &[usize],
    grid: &PatchGrid,
    eps_sigma: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if indices.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "patch statistics need at least 2 patches, got {}",
            indices.len()
        )));
    }
    let m = grid.patches.ncols();
    let k = indices.len() as f64;
    let mut mean = Array1::<f64>::zeros(m);
    for &j in indices {
        mean += &grid.patch(j);
    }
    mean /= k;
    let mut var = Array1::<f64>::zeros(m);
    for &j in indices {
        Zip::from(&mut var)
            .and(grid.patch(j))
            .and(&mean)
            .for_each(|v, &x, &mu| *v += (x - mu) * (x - mu));
    }
    let sigma = var.mapv(|v| (v / (k - 1.0)).sqrt().max(eps_sigma));
    Ok((mean, sigma))
}

/// `|p − μ| / σ`, elementwise.
pub fn normalized_distance(
    p: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    sigma: ArrayView1<f64>,
) -> Array1<f64> {
    Zip::from(p)
        .and(mu)
        .and(sigma)
        .map_collect(|&x, &m, &s| (x - m).abs() / s)
}

fn reflect(idx: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let mut i = idx.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Array1<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Array1<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = taps.sum();
    taps /= total;
    taps
}

/// Separable Gaussian smoothing with mirrored borders (`d c b a | a b c d`).
pub fn gaussian_smooth(map: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let (rows, cols) = map.dim();
    let mut horizontal = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let jj = reflect(j as isize + t as isize - radius, cols);
                acc += w * map[[i, jj]];
            }
            horizontal[[i, j]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let ii = reflect(i as isize + t as isize - radius, rows);
                acc += w * horizontal[[ii, j]];
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Spreads per-patch distance vectors back onto pixels, averages where
/// patches overlap, and smooths the result with a Gaussian of width
/// `kernel_sigma`.
///
/// `distances` has one row per patch of `grid`, flattened row-major.
pub fn aggregate_scores(
    distances: ArrayView2<f64>,
    grid: &PatchGrid,
    kernel_sigma: f64,
) -> Result<ScoreMap> {
    let m = grid.patch_edge * grid.patch_edge;
    if distances.dim() != (grid.len(), m) {
        return Err(Error::Dimension(format!(
            "distances {:?} vs grid ({}, {m})",
            distances.dim(),
            grid.len()
        )));
    }
    let mut sum = Array2::<f64>::zeros(grid.image_dim);
    let mut hits = Array2::<u32>::zeros(grid.image_dim);
    for (k, &(r, c)) in grid.origins.iter().enumerate() {
        let d = distances.row(k);
        for di in 0..grid.patch_edge {
            for dj in 0..grid.patch_edge {
                sum[[r + di, c + dj]] += d[di * grid.patch_edge + dj];
                hits[[r + di, c + dj]] += 1;
            }
        }
    }
    let fused = Zip::from(&sum)
        .and(&hits)
        .map_collect(|&s, &h| if h > 0 { s / h as f64 } else { 0.0 });
    Ok(ScoreMap::all_valid(gaussian_smooth(fused.view(), kernel_sigma)?))
}

/// Knobs of the patch score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringParams {
    pub patch_edge: usize,
    pub stride: usize,
    pub k: usize,
    pub eps_sigma: f64,
    pub kernel_sigma: f64,
    /// Skip neighbor patches that overlap the query patch.
    pub separate_neighbors: bool,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            patch_edge: 8,
            stride: 4,
            k: 16,
            eps_sigma: 1e-3,
            kernel_sigma: 2.0,
            separate_neighbors: true,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_edge == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("patch_edge and stride must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig("k must be at least 2".into()));
        }
        if !(self.eps_sigma > 0.0) || !(self.kernel_sigma > 0.0) {
            return Err(Error::InvalidConfig(
                "eps_sigma and kernel_sigma must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Patch-KNN normalized-distance score of `original` against `reference`.
///
/// Neighbors are searched among reference patches; the statistics come from
/// the original-image patches at the neighbor locations. Pixels outside
/// `validity` (when given) end with score 0.
pub fn score_normalized_distance(
    original: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    validity: Option<ArrayView2<bool>>,
    params: &ScoringParams,
) -> Result<ScoreMap> {
    params.validate()?;
    if original.dim() != reference.dim() {
        return Err(Error::Dimension(format!(
            "original {:?} vs reference {:?}",
            original.dim(),
            reference.dim()
        )));
    }
    let ref_grid = extract_patches(reference, params.patch_edge, params.stride)?;
    let orig_grid = extract_patches(original, params.patch_edge, params.stride)?;
    let k = params.k.min(ref_grid.len());
    if k < 2 {
        return Err(Error::TooSmall {
            edge: original.nrows(),
            required: params.patch_edge + params.stride,
        });
    }
    let m = params.patch_edge * params.patch_edge;
    let min_offset = if params.separate_neighbors { params.patch_edge } else { 0 };
    let mut distances = Array2::<f64>::zeros((ref_grid.len(), m));
    for i in 0..ref_grid.len() {
        let neighbors = knn_patches_separated(i, &ref_grid, k, min_offset)?;
        let (mu, sigma) = patch_statistics(&neighbors, &orig_grid, params.eps_sigma)?;
        let d = normalized_distance(orig_grid.patch(i), mu.view(), sigma.view());
        distances.row_mut(i).assign(&d);
    }
    let map = aggregate_scores(distances.view(), &ref_grid, params.kernel_sigma)?;
    match validity {
        Some(v) => map.restrict(v),
        None => Ok(map),
    }
}

/// `|original − reference|`, the unnormalized residual map.
pub fn absolute_difference(original: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<ScoreMap> {
    if original.dim() != reference.dim() {
        return Err(Error::Dimension(format!(
            "original {:?} vs reference {:?}",
            original.dim(),
            reference.dim()
        )));
    }
    Ok(ScoreMap::all_valid(
        Zip::from(original)
            .and(reference)
            .map_collect(|&a, &b| (a - b).abs()),
    ))
}

/// A thresholded score map with optional evaluation against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub score_map: ScoreMap,
    pub threshold: f64,
    pub mask: Array2<bool>,
    pub metrics: Option<MetricSet>,
}

impl DetectionReport {
    /// Fills in `metrics` by comparing the mask with `gt`.
    pub fn evaluate(mut self, gt: ArrayView2<bool>) -> Result<Self> {
        self.metrics = Some(compute_metrics(self.mask.view(), gt)?);
        Ok(self)
    }
}

/// `mask = scores > threshold` on valid pixels.
pub fn threshold_mask(score_map: ScoreMap, threshold: f64) -> DetectionReport {
    let mask = Zip::from(&score_map.scores)
        .and(&score_map.validity)
        .map_collect(|&s, &v| v && s > threshold);
    DetectionReport {
        score_map,
        threshold,
        mask,
        metrics: None,
    }
}

/// Largest threshold whose mask misses at most `max_fnr` of the anomalous
/// pixels in `gt`.
///
/// Anomalous pixels outside the validity mask always count as misses, so
/// the target can be out of reach; the result is then `-∞`. With no
/// anomalous pixels at all the result is `+∞`.
pub fn threshold_for_fnr(score_map: &ScoreMap, gt: ArrayView2<bool>, max_fnr: f64) -> Result<f64> {
    if gt.dim() != score_map.dim() {
        return Err(Error::Dimension(format!(
            "ground truth {:?} vs scores {:?}",
            gt.dim(),
            score_map.dim()
        )));
    }
    let mut positives: Vec<f64> = Vec::new();
    let mut unreachable = 0usize;
    Zip::from(&score_map.scores)
        .and(&score_map.validity)
        .and(gt)
        .for_each(|&s, &v, &g| match (g, v) {
            (true, true) => positives.push(s),
            (true, false) => unreachable += 1,
            _ => {}
        });
    let total = positives.len() + unreachable;
    if total == 0 {
        return Ok(f64::INFINITY);
    }
    let allowed = (max_fnr.clamp(0.0, 1.0) * total as f64 + 1e-9).floor() as usize;
    if allowed < unreachable {
        return Ok(f64::NEG_INFINITY);
    }
    let misses = allowed - unreachable;
    if misses >= positives.len() {
        return Ok(f64::INFINITY);
    }
    positives.sort_by(f64::total_cmp);
    // Scores at or below the threshold are misses: stay just under the
    // first score that must be detected.
    Ok(positives[misses].next_down())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fnr_matched_threshold() {
        let map = ScoreMap::all_valid(array![[0.1, 0.5, 0.9, 2.0]]);
        let gt = array![[false, true, true, true]];
        let t = threshold_for_fnr(&map, gt.view(), 0.0).unwrap();
        assert!(t < 0.5 && t > 0.1);
        let t = threshold_for_fnr(&map, gt.view(), 0.34).unwrap();
        assert!(t >= 0.5 && t < 0.9);
        let m = threshold_mask(map.clone(), t).evaluate(gt.view()).unwrap().metrics.unwrap();
        assert_eq!(m.fn_, 1);
        assert_eq!(threshold_for_fnr(&map, gt.view(), 1.0).unwrap(), f64::INFINITY);
        let none = array![[false; 4]];
        assert_eq!(threshold_for_fnr(&map, none.view(), 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn direct_score_by_hand() {
        let a = array![[2.0, 0.0], [0.0, 0.0]];
        assert_eq!(score_direct(a.view()).scores, array![[2.0, 0.0], [0.0, 0.0]]);
        let c = Array2::from_elem((5, 5), -0.3);
        for v in score_direct(c.view()).scores.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let z = Array2::<f64>::zeros((3, 3));
        assert!(score_direct(z.view()).scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_layout() {
        let img = Array2::from_shape_fn((4, 4), |(i, j)| (4 * i + j) as f64);
        let g = extract_patches(img.view(), 2, 2).unwrap();
        assert_eq!(g.origins, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(g.patch(1).to_vec(), vec![2.0, 3.0, 6.0, 7.0]);

        let img5 = Array2::<f64>::zeros((5, 5));
        let g5 = extract_patches(img5.view(), 2, 2).unwrap();
        let rows: Vec<usize> = g5.origins.iter().map(|o| o.0).collect();
        assert_eq!(&rows[..], &[0, 0, 0, 2, 2, 2, 3, 3, 3]);
        assert_eq!(g5.origins.last(), Some(&(3, 3)));

        let dense = extract_patches(img5.view(), 2, 1).unwrap();
        assert_eq!(dense.len(), 16);
        assert!(extract_patches(img.view(), 5, 1).is_err());
    }

    #[test]
    fn knn_finds_duplicates() {
        let img = Array2::from_shape_fn((4, 8), |(i, j)| if j < 4 { (i + j) as f64 } else { (i + j - 4) as f64 });
        let g = extract_patches(img.view(), 4, 4).unwrap();
        assert_eq!(knn_patches(0, &g, 2).unwrap(), vec![0, 1]);
        assert_eq!(knn_patches(1, &g, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn statistics_by_hand() {
        let img = array![[0.0, 0.0, 2.0, 2.0]];
        let wide = extract_patches(img.view(), 1, 1).unwrap();
        let (mu, sigma) = patch_statistics(&[0, 2], &wide, 1e-3).unwrap();
        assert_eq!(mu[0], 1.0);
        assert!((sigma[0] - 2f64.sqrt()).abs() < 1e-15);
        let (_, flat) = patch_statistics(&[0, 1], &wide, 1e-3).unwrap();
        assert_eq!(flat[0], 1e-3);
        assert!(patch_statistics(&[0], &wide, 1e-3).is_err());
    }

    #[test]
    fn distance_by_hand() {
        let d = normalized_distance(array![5.0].view(), array![1.0].view(), array![2.0].view());
        assert_eq!(d[0], 2.0);
    }

    #[test]
    fn smoothing_preserves_constants_and_spreads_deltas() {
        let c = Array2::from_elem((9, 9), 0.7);
        for v in gaussian_smooth(c.view(), 2.0).unwrap().iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let mut delta = Array2::<f64>::zeros((21, 21));
        delta[[10, 10]] = 1.0;
        let out = gaussian_smooth(delta.view(), 2.0).unwrap();
        let k = gaussian_kernel(2.0);
        assert!((out[[10, 10]] - k[6] * k[6]).abs() < 1e-15);
        assert!((out[[10, 13]] - k[6] * k[9]).abs() < 1e-15);
        assert!((out.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infinite_threshold_is_empty() {
        let map = ScoreMap::all_valid(Array2::from_elem((3, 3), 1e300));
        assert!(threshold_mask(map, f64::INFINITY).mask.iter().all(|&m| !m));
    }

    #[test]
    fn invalid_pixels_never_fire() {
        let mut valid = Array2::from_elem((2, 2), true);
        valid[[0, 1]] = false;
        let map = ScoreMap::all_valid(Array2::from_elem((2, 2), 5.0))
            .restrict(valid.view())
            .unwrap();
        assert_eq!(map.scores[[0, 1]], 0.0);
        let report = threshold_mask(map, 1.0);
        assert_eq!(report.mask, array![[true, false], [true, true]]);
    }
}
