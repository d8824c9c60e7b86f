//! Reading and writing matrices as CSV and 8-bit grayscale images.
//!
//! CSV files hold one matrix row per line and print every value with
//! Rust's shortest round-trip formatting, so re-reading them yields the
//! same `f64` bit patterns. Images are for viewing: intensities are clamped
//! to `[0, 1]` and quantized to 8 bits.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::CliError;

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

pub fn read_csv(path: &Path) -> Result<Array2<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| {
                    CliError::input(format!("{}:{}: bad value {field:?}: {e}", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::input(format!("{} holds no values", path.display())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let rows = flat.len() / cols;
    Array2::from_shape_vec((rows, cols), flat)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_csv(path: &Path, m: ArrayView2<f64>) -> Result<(), CliError> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    for row in m.rows() {
        writer
            .write_record(row.iter().map(|v| format!("{v}")))
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    }
    writer.flush()?;
    Ok(())
}

/// A vector as a single CSV column.
pub fn write_vector_csv(path: &Path, v: ArrayView1<f64>) -> Result<(), CliError> {
    write_csv(path, v.insert_axis(ndarray::Axis(1)))
}

pub fn write_mask_csv(path: &Path, mask: ArrayView2<bool>) -> Result<(), CliError> {
    write_csv(path, mask.mapv(|b| if b { 1.0 } else { 0.0 }).view())
}

/// Reads a 1-D signal stored as a single CSV row or column.
pub fn read_signal(path: &Path) -> Result<Array1<f64>, CliError> {
    let m = read_csv(path)?;
    match m.dim() {
        (1, _) => Ok(m.row(0).to_owned()),
        (_, 1) => Ok(m.column(0).to_owned()),
        (r, c) => Err(CliError::input(format!(
            "{}: expected a single row or column, found {r}x{c}",
            path.display()
        ))),
    }
}

fn read_gray(path: &Path) -> Result<GrayImage, CliError> {
    let img = ImageReader::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?
        .with_guessed_format()
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?
        .decode()
        .map_err(|e| CliError::input(format!("cannot decode {}: {e}", path.display())))?;
    Ok(img.to_luma8())
}

/// Loads a CSV matrix or an 8-bit image mapped to `[0, 1]` by `/255`.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>, CliError> {
    if extension(path) == "csv" {
        return read_csv(path);
    }
    let img = read_gray(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
    }))
}

/// Center crop to the largest square.
pub fn center_square<T: Clone>(m: Array2<T>, what: &Path) -> Array2<T> {
    let (h, w) = m.dim();
    if h == w {
        return m;
    }
    let e = h.min(w);
    let (top, left) = ((h - e) / 2, (w - e) / 2);
    log::warn!(
        "{} is {h}x{w}; using the centered {e}x{e} square",
        what.display()
    );
    m.slice(s![top..top + e, left..left + e]).to_owned()
}

pub fn read_square(path: &Path) -> Result<Array2<f64>, CliError> {
    Ok(center_square(read_matrix(path)?, path))
}

/// Ground truth: any nonzero pixel or value is anomalous.
pub fn read_mask(path: &Path) -> Result<Array2<bool>, CliError> {
    if extension(path) == "csv" {
        return Ok(read_csv(path)?.mapv(|v| v != 0.0));
    }
    let img = read_gray(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] != 0
    }))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_gray_png(path: &Path, m: ArrayView2<f64>) -> Result<(), CliError> {
    let (h, w) = m.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([quantize(m[[y as usize, x as usize]])]));
    img.save(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_mask_png(path: &Path, mask: ArrayView2<bool>) -> Result<(), CliError> {
    write_gray_png(path, mask.mapv(|b| if b { 1.0 } else { 0.0 }).view())
}

/// Averages `factor × factor` blocks, dropping incomplete trailing blocks.
pub fn downsample(m: ArrayView2<f64>, factor: usize) -> Array2<f64> {
    if factor == 1 {
        return m.to_owned();
    }
    let (h, w) = m.dim();
    let area = (factor * factor) as f64;
    Array2::from_shape_fn((h / factor, w / factor), |(i, j)| {
        m.slice(s![i * factor..(i + 1) * factor, j * factor..(j + 1) * factor])
            .sum()
            / area
    })
}

/// Nearest-neighbor upsampling back to `dim`; pixels past the last full
/// block take the closest block.
pub fn upsample_mask(mask: ArrayView2<bool>, factor: usize, dim: (usize, usize)) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn(dim, |(i, j)| {
        mask[[(i / factor).min(h - 1), (j / factor).min(w - 1)]]
    })
}
