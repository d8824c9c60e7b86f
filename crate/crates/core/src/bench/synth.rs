//! Synthetic periodic images with planted anomalies and Gaussian noise.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic background families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    /// `offset + amplitude·(sin 2πi/T₁ + cos 2πj/T₂)`.
    Sinusoidal {
        t1: f64,
        t2: f64,
        amplitude: f64,
        offset: f64,
    },
    /// Checkerboard of `width × height` cells alternating `hi` and `lo`.
    Rectangles {
        width: f64,
        height: f64,
        hi: f64,
        lo: f64,
    },
    /// Bright lines of thickness `line` on a dark field, one every
    /// `period_x` columns and `period_y` rows.
    Grid {
        period_x: f64,
        period_y: f64,
        line: f64,
        hi: f64,
        lo: f64,
    },
}

impl Background {
    /// Sum of a sine and a cosine rescaled from `[-2, 2]` to `[0, 1]`.
    pub fn sinusoidal(t1: f64, t2: f64) -> Self {
        Background::Sinusoidal {
            t1,
            t2,
            amplitude: 0.25,
            offset: 0.5,
        }
    }

    /// `0.15·(sin 2πi/40 + cos 2πj/50) + 0.5`.
    pub fn smooth() -> Self {
        Background::Sinusoidal {
            t1: 40.0,
            t2: 50.0,
            amplitude: 0.15,
            offset: 0.5,
        }
    }

    /// 25 × 20 checkerboard with values 0.8 / 0.2.
    pub fn rectangles() -> Self {
        Background::Rectangles {
            width: 25.0,
            height: 20.0,
            hi: 0.8,
            lo: 0.2,
        }
    }

    /// Mesh of 3-pixel bright lines every 16 pixels on a dark field.
    pub fn grid() -> Self {
        Background::Grid {
            period_x: 16.0,
            period_y: 16.0,
            line: 3.0,
            hi: 0.8,
            lo: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Background::Sinusoidal { t1, t2, amplitude, offset } => {
                t1 >= 2.0 && t2 >= 2.0 && amplitude.is_finite() && offset.is_finite()
            }
            Background::Rectangles { width, height, hi, lo } => {
                width >= 1.0 && height >= 1.0 && hi.is_finite() && lo.is_finite()
            }
            Background::Grid { period_x, period_y, line, hi, lo } => {
                period_x >= 2.0
                    && period_y >= 2.0
                    && line > 0.0
                    && line < period_x.min(period_y)
                    && hi.is_finite()
                    && lo.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid background {self:?}")))
        }
    }

    /// Value at continuous row `i`, column `j`.
    pub fn value(&self, i: f64, j: f64) -> f64 {
        match *self {
            Background::Sinusoidal { t1, t2, amplitude, offset } => {
                offset + amplitude * ((2.0 * PI * i / t1).sin() + (2.0 * PI * j / t2).cos())
            }
            Background::Rectangles { width, height, hi, lo } => {
                let parity = (i / height).floor() as i64 + (j / width).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    hi
                } else {
                    lo
                }
            }
            Background::Grid { period_x, period_y, line, hi, lo } => {
                if i.rem_euclid(period_y) < line || j.rem_euclid(period_x) < line {
                    hi
                } else {
                    lo
                }
            }
        }
    }

    fn is_piecewise_constant(&self) -> bool {
        !matches!(self, Background::Sinusoidal { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyShape {
    /// Axis-aligned rectangle with `size = [height, width]`.
    Rect,
    /// Disk with diameter `size[0]`.
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub shape: AnomalyShape,
    /// `[row, col]` of the top-left corner (rect) or bounding-box corner (disk).
    pub origin: [usize; 2],
    pub size: [usize; 2],
    pub amplitude: f64,
}

impl AnomalySpec {
    fn contains(&self, i: usize, j: usize) -> bool {
        let [r0, c0] = self.origin;
        match self.shape {
            AnomalyShape::Rect => {
                i >= r0 && i < r0 + self.size[0] && j >= c0 && j < c0 + self.size[1]
            }
            AnomalyShape::Disk => {
                let d = self.size[0] as f64;
                let c = (d - 1.0) / 2.0;
                let di = i as f64 - r0 as f64 - c;
                let dj = j as f64 - c0 as f64 - c;
                di * di + dj * dj <= (d / 2.0) * (d / 2.0)
            }
        }
    }

    fn extent(&self) -> [usize; 2] {
        match self.shape {
            AnomalyShape::Rect => self.size,
            AnomalyShape::Disk => [self.size[0], self.size[0]],
        }
    }
}

/// Everything needed to regenerate one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub background: Background,
    /// Rotation of the background lattice, in degrees.
    #[serde(default)]
    pub angle_degrees: f64,
    /// Relative amplitude of a linear multiplicative illumination ramp.
    #[serde(default)]
    pub shading: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
    pub seed: u64,
}

/// The known components of a generated image.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub clean: Array2<f64>,
    pub noise: Array2<f64>,
    pub anomaly_mask: Array2<bool>,
    pub anomaly_values: Array2<f64>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::InvalidSpec(format!("n = {} is too small", self.n)));
        }
        self.background.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec("noise_sigma must be >= 0".into()));
        }
        if !self.angle_degrees.is_finite() || !self.shading.is_finite() {
            return Err(Error::InvalidSpec("angle and shading must be finite".into()));
        }
        for (k, a) in self.anomalies.iter().enumerate() {
            let [h, w] = a.extent();
            if h == 0 || w == 0 || a.origin[0] + h > self.n || a.origin[1] + w > self.n {
                return Err(Error::InvalidSpec(format!("anomaly {k} does not fit the frame")));
            }
            if !a.amplitude.is_finite() {
                return Err(Error::InvalidSpec(format!("anomaly {k} has non-finite amplitude")));
            }
        }
        Ok(())
    }
}

/// Renders the noise-free background (with rotation and shading applied).
pub fn render_background(spec: &SynthSpec) -> Array2<f64> {
    let n = spec.n;
    let (sin, cos) = spec.angle_degrees.to_radians().sin_cos();
    let c = (n as f64 - 1.0) / 2.0;
    let sub: &[f64] = if spec.background.is_piecewise_constant() && spec.angle_degrees != 0.0 {
        &[-1.0 / 3.0, 0.0, 1.0 / 3.0]
    } else {
        &[0.0]
    };
    Array2::from_shape_fn((n, n), |(i, j)| {
        let mut acc = 0.0;
        for &di in sub {
            for &dj in sub {
                // Content is rotated by +angle: sample the unrotated pattern
                // at the inversely rotated position.
                let x = j as f64 + dj - c;
                let y = i as f64 + di - c;
                let xs = cos * x + sin * y + c;
                let ys = -sin * x + cos * y + c;
                acc += spec.background.value(ys, xs);
            }
        }
        let v = acc / (sub.len() * sub.len()) as f64;
        let ramp = ((i + j) as f64 / (2.0 * (n as f64 - 1.0))) * 2.0 - 1.0;
        v * (1.0 + spec.shading * ramp)
    })
}

/// Generates the observed image and its ground truth.
///
/// `observed = clean + anomaly_values + noise` holds exactly.
pub fn generate(spec: &SynthSpec) -> Result<(Array2<f64>, GroundTruth)> {
    spec.validate()?;
    let n = spec.n;
    let clean = render_background(spec);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        Array2::from_shape_simple_fn((n, n), || normal.sample(&mut rng))
    } else {
        Array2::zeros((n, n))
    };

    let mut anomaly_values = Array2::<f64>::zeros((n, n));
    let mut anomaly_mask = Array2::from_elem((n, n), false);
    for a in &spec.anomalies {
        let [r0, c0] = a.origin;
        let [h, w] = a.extent();
        for i in r0..r0 + h {
            for j in c0..c0 + w {
                if a.contains(i, j) {
                    anomaly_values[[i, j]] += a.amplitude;
                    anomaly_mask[[i, j]] = true;
                }
            }
        }
    }

    // Evaluated as (clean + anomaly) + noise, the same order used to
    // check the identity.
    let observed = ndarray::Zip::from(&clean)
        .and(&anomaly_values)
        .and(&noise)
        .map_collect(|&c, &a, &e| c + a + e);

    Ok((
        observed,
        GroundTruth {
            clean,
            noise,
            anomaly_mask,
            anomaly_values,
        },
    ))
}

/// Places `count` non-overlapping rectangles (edges in `edge_range`) with
/// amplitudes `±amplitude` at uniformly random positions.
pub fn plant_rectangles<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    count: usize,
    edge_range: (usize, usize),
    amplitude: f64,
) -> Vec<AnomalySpec> {
    let mut out: Vec<AnomalySpec> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 1000 {
        attempts += 1;
        let h = rng.random_range(edge_range.0..=edge_range.1);
        let w = rng.random_range(edge_range.0..=edge_range.1);
        if h >= n || w >= n {
            continue;
        }
        let r0 = rng.random_range(0..=n - h);
        let c0 = rng.random_range(0..=n - w);
        // one pixel of clearance between rectangles
        let overlaps = out.iter().any(|o| {
            r0 < o.origin[0] + o.size[0] + 1
                && o.origin[0] < r0 + h + 1
                && c0 < o.origin[1] + o.size[1] + 1
                && o.origin[1] < c0 + w + 1
        });
        if overlaps {
            continue;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        out.push(AnomalySpec {
            shape: AnomalyShape::Rect,
            origin: [r0, c0],
            size: [h, w],
            amplitude: sign * amplitude,
        });
    }
    out
}

/// A sinusoidal test image with periods drawn from `U(period_range)` and
/// 1–3 planted rectangles of edge 8–20 and amplitude ±0.5.
pub fn random_sinusoidal_spec(
    n: usize,
    period_range: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let t1 = rng.random_range(period_range.0..period_range.1);
    let t2 = rng.random_range(period_range.0..period_range.1);
    let count = rng.random_range(1..=3);
    let anomalies = plant_rectangles(&mut rng, n, count, (8, 20), 0.5);
    SynthSpec {
        n,
        background: Background::sinusoidal(t1, t2),
        angle_degrees: 0.0,
        shading: 0.0,
        noise_sigma,
        anomalies,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean_spec(background: Background) -> SynthSpec {
        SynthSpec {
            n: 64,
            background,
            angle_degrees: 0.0,
            shading: 0.0,
            noise_sigma: 0.0,
            anomalies: vec![],
            seed: 1,
        }
    }

    #[test]
    fn sinusoid_at_origin() {
        // sin 0 + cos 0 = 1, rescaled (1 + 2) / 4
        let (obs, gt) = generate(&clean_spec(Background::sinusoidal(50.0, 60.0))).unwrap();
        assert_eq!(gt.clean[[0, 0]], 0.75);
        assert_eq!(obs[[0, 0]], 0.75);
    }

    #[test]
    fn integer_period_repeats() {
        let (_, gt) = generate(&clean_spec(Background::sinusoidal(16.0, 8.0))).unwrap();
        for i in 0..48 {
            for j in 0..56 {
                assert!((gt.clean[[i + 16, j]] - gt.clean[[i, j]]).abs() < 1e-12);
                assert!((gt.clean[[i, j + 8]] - gt.clean[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkerboard_values() {
        let (_, gt) = generate(&clean_spec(Background::rectangles())).unwrap();
        assert_eq!(gt.clean[[0, 0]], 0.8);
        assert_eq!(gt.clean[[0, 25]], 0.2);
        assert_eq!(gt.clean[[20, 0]], 0.2);
        assert_eq!(gt.clean[[20, 25]], 0.8);
        assert_eq!(gt.clean[[19, 24]], 0.8);
    }

    #[test]
    fn injection_is_exact_and_seeded() {
        let mut spec = random_sinusoidal_spec(64, (10.0, 20.0), 0.05, 9);
        spec.anomalies.push(AnomalySpec {
            shape: AnomalyShape::Disk,
            origin: [40, 40],
            size: [9, 9],
            amplitude: -0.3,
        });
        let (obs, gt) = generate(&spec).unwrap();
        let (obs2, gt2) = generate(&spec).unwrap();
        assert_eq!(obs, obs2);
        assert_eq!(gt.anomaly_mask, gt2.anomaly_mask);
        for ((i, j), &o) in obs.indexed_iter() {
            assert_eq!(gt.clean[[i, j]] + gt.anomaly_values[[i, j]] + gt.noise[[i, j]], o);
            if !gt.anomaly_mask[[i, j]] {
                assert_eq!(gt.anomaly_values[[i, j]], 0.0);
            }
        }
        assert!(gt.anomaly_mask.iter().any(|&m| m));
    }

    #[test]
    fn planted_rectangles_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let rects = plant_rectangles(&mut rng, 128, 3, (8, 20), 0.5);
            assert_eq!(rects.len(), 3);
            let spec = SynthSpec {
                anomalies: rects,
                ..clean_spec(Background::sinusoidal(30.0, 30.0))
            };
            let spec = SynthSpec { n: 128, ..spec };
            let (_, gt) = generate(&spec).unwrap();
            let planted: usize = spec.anomalies.iter().map(|a| a.size[0] * a.size[1]).sum();
            assert_eq!(gt.anomaly_mask.iter().filter(|&&m| m).count(), planted);
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = clean_spec(Background::sinusoidal(1.0, 30.0));
        assert!(generate(&spec).is_err());
        spec.background = Background::sinusoidal(30.0, 30.0);
        spec.anomalies.push(AnomalySpec {
            shape: AnomalyShape::Rect,
            origin: [60, 60],
            size: [8, 8],
            amplitude: 1.0,
        });
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
    }
}
