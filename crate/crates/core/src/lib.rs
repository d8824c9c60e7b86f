//! Periodic-sparse decomposition (PSD) of signals and images.
//!
//! The crate learns a continuous periodic pattern vector for each axis of a
//! signal or image and, in the same optimization, separates the data into a
//! periodic background, sparse anomalies and dense Gaussian noise. On top of
//! that it provides the untrained detection pipeline for real periodic
//! images and an evaluation harness.
//!
//! * [`periodic`]: the self-representation operators `S(λ)`, `W(λ)`, `R(λ)`.
//! * [`objective`], [`adam`], [`decompose`]: the alternating solver.
//! * [`geometry`]: direction estimation, rotation, expansion and the
//!   reference image.
//! * [`scoring`]: direct and patch-normalized anomaly scores.
//! * [`bench`]: synthetic data, pixel metrics and experiment suites.

pub mod adam;
pub mod bench;
pub mod decompose;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod objective;
pub mod periodic;
pub mod scoring;

pub use adam::{adam_minimize, AdamParams};
pub use decompose::{
    ridge_solve_e, run_psd_1d, run_psd_2d, Decomposition1D, Decomposition2D, PsdConfig,
};
pub use error::{Error, Result};
pub use periodic::{apply_r_1d, apply_r_2d, build_s, build_w, residual_1d, PeriodicPatternVector};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/self_representation.md")]
pub mod book_self_representation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/decomposition.md")]
pub mod book_decomposition {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/reference.md")]
pub mod book_reference {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scoring.md")]
pub mod book_scoring {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/benchmark.md")]
pub mod book_benchmark {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub mod readme {}
