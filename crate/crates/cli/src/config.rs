//! Flat run configuration shared by every command.

use std::path::{Path, PathBuf};

use psd::adam::AdamParams;
use psd::bench::synth::{plant_rectangles, random_sinusoidal_spec};
use psd::bench::{Background, SynthSpec};
use psd::geometry::ReferenceOptions;
use psd::scoring::{ScoringParams, DIRECT_THRESHOLD, PATCH_THRESHOLD};
use psd::PsdConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// How `detect` and `eval` turn an image into scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Reference image plus patch-normalized distance.
    Patch,
    /// Magnitude of the decomposition's anomaly component.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Sinusoidal,
    Smooth,
    Rectangles,
    Grid,
}

/// Every knob of the pipeline as one flat document.
///
/// Missing keys take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rho1: f64,
    pub rho2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub guard_p: Option<usize>,
    pub eps_conv: f64,
    pub inner_k: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub step_size: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub eps_adam: f64,
    pub steps_per_block: usize,

    pub patch_edge: usize,
    pub stride: usize,
    pub k: usize,
    pub eps_sigma: f64,
    pub kernel_sigma: f64,
    pub separate_neighbors: bool,

    pub enable_rotation: bool,
    pub min_rotation_degrees: f64,
    pub method: Method,
    /// Integer box-averaging factor applied to inputs of `detect` and `eval`.
    pub downsample: usize,
    /// `None` picks 2.0 for the patch method and 3.0 for the direct one.
    pub threshold: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,

    pub n: usize,
    pub background: BackgroundKind,
    /// Sinusoid periods; drawn from `U(25, 40)` by seed when absent.
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub angle_degrees: f64,
    pub shading: f64,
    pub noise_sigma: f64,
    /// Number of planted rectangles; 1 to 3 drawn by seed when absent.
    pub anomaly_count: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let psd = PsdConfig::default();
        let scoring = ScoringParams::default();
        let reference = ReferenceOptions::default();
        Self {
            rho1: psd.rho1,
            rho2: psd.rho2,
            beta1: psd.beta1,
            beta2: psd.beta2,
            guard_p: psd.guard_p,
            eps_conv: psd.eps_conv,
            inner_k: psd.inner_k,
            max_outer: psd.max_outer,
            max_inner: psd.max_inner,
            step_size: psd.adam.step_size,
            decay1: psd.adam.decay1,
            decay2: psd.adam.decay2,
            eps_adam: psd.adam.eps_adam,
            steps_per_block: psd.adam.steps_per_block,
            patch_edge: scoring.patch_edge,
            stride: scoring.stride,
            k: scoring.k,
            eps_sigma: scoring.eps_sigma,
            kernel_sigma: scoring.kernel_sigma,
            separate_neighbors: scoring.separate_neighbors,
            enable_rotation: reference.enable_rotation,
            min_rotation_degrees: reference.min_rotation_degrees,
            method: Method::Patch,
            downsample: 1,
            threshold: None,
            seed: 0,
            out: None,
            n: 128,
            background: BackgroundKind::Sinusoidal,
            t1: None,
            t2: None,
            angle_degrees: 0.0,
            shading: 0.0,
            noise_sigma: 0.01,
            anomaly_count: None,
        }
    }
}

/// Values given on the command line, which win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub no_rotation: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads the file (if any), applies the overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::input(format!("invalid config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(t) = overrides.threshold {
            cfg.threshold = Some(t);
        }
        if overrides.no_rotation {
            cfg.enable_rotation = false;
        }
        if let Some(out) = &overrides.out {
            cfg.out = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.psd().validate()?;
        self.scoring().validate()?;
        if let Some(t) = self.threshold {
            if t.is_nan() {
                return Err(CliError::input("threshold must be a number"));
            }
        }
        if self.downsample == 0 {
            return Err(CliError::input("downsample must be at least 1"));
        }
        if !(self.min_rotation_degrees >= 0.0) {
            return Err(CliError::input("min_rotation_degrees must be >= 0"));
        }
        Ok(())
    }

    pub fn psd(&self) -> PsdConfig {
        PsdConfig {
            rho1: self.rho1,
            rho2: self.rho2,
            beta1: self.beta1,
            beta2: self.beta2,
            guard_p: self.guard_p,
            eps_conv: self.eps_conv,
            inner_k: self.inner_k,
            adam: AdamParams {
                step_size: self.step_size,
                decay1: self.decay1,
                decay2: self.decay2,
                eps_adam: self.eps_adam,
                steps_per_block: self.steps_per_block,
            },
            max_outer: self.max_outer,
            max_inner: self.max_inner,
        }
    }

    pub fn scoring(&self) -> ScoringParams {
        ScoringParams {
            patch_edge: self.patch_edge,
            stride: self.stride,
            k: self.k,
            eps_sigma: self.eps_sigma,
            kernel_sigma: self.kernel_sigma,
            separate_neighbors: self.separate_neighbors,
        }
    }

    pub fn reference(&self) -> ReferenceOptions {
        ReferenceOptions {
            enable_rotation: self.enable_rotation,
            min_rotation_degrees: self.min_rotation_degrees,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(match self.method {
            Method::Patch => PATCH_THRESHOLD,
            Method::Direct => DIRECT_THRESHOLD,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The synthetic image described by the `synth` keys.
    ///
    /// Without explicit periods or anomaly count this is the same image the
    /// benchmark suite draws for this seed.
    pub fn synth_spec(&self) -> SynthSpec {
        let mut spec = random_sinusoidal_spec(self.n, (25.0, 40.0), self.noise_sigma, self.seed);
        let Background::Sinusoidal { t1, t2, .. } = spec.background else {
            unreachable!("random_sinusoidal_spec draws a sinusoid")
        };
        spec.background = match self.background {
            BackgroundKind::Sinusoidal => Background::sinusoidal(self.t1.unwrap_or(t1), self.t2.unwrap_or(t2)),
            BackgroundKind::Smooth => Background::smooth(),
            BackgroundKind::Rectangles => Background::rectangles(),
            BackgroundKind::Grid => Background::grid(),
        };
        spec.angle_degrees = self.angle_degrees;
        spec.shading = self.shading;
        if let Some(count) = self.anomaly_count {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            spec.anomalies = plant_rectangles(&mut rng, self.n, count, (8, 20), 0.5);
        }
        spec
    }
}
