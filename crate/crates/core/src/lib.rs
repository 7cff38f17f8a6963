//! Detection of storm-related cloud vortices in geostationary satellite image
//! sequences.
//!
//! The library is organized as a pipeline over pairs of consecutive frames:
//!
//! 1. [`geo_imaging`] — frame loading, pixel↔geographic mapping, and the
//!    paired histogram equalization applied before motion estimation.
//! 2. [`optical_flow`] — dense pyramid Lucas-Kanade flow plus an iterative
//!    fluid-dynamics smoothing pass (force accumulation, semi-Lagrangian
//!    self-advection, spectral diffusion).
//! 3. [`field_analysis`] — vorticity, divergence, Helmholtz-Hodge
//!    decomposition, Q-criterion, and vortex-region segmentation.
//! 4. [`climatology`] — historical storm-report ingestion, date-conditioned
//!    density grids, ground-truth labeling, and earliest-storm queries.
//! 5. [`descriptors`] — the eight-feature vortex descriptor (w1..w8).
//! 6. [`forest`] — a from-scratch random-forest classifier over descriptors.
//! 7. [`evaluation`] — confusion-matrix metrics, lead-time curves, and
//!    feature-ablation harness.
//! 8. [`synthetic`] — analytic flow fields and rendered image pairs used as
//!    oracles throughout the test suite.
//!
//! All grids are `ndarray::Array2` indexed `[(row, col)]`, i.e. `(y, x)`.
//! Every operation is deterministic: randomized stages take explicit seeds.

pub mod climatology;
pub mod descriptors;
pub mod evaluation;
pub mod field_analysis;
pub mod forest;
pub mod geo_imaging;
pub mod optical_flow;
pub mod synthetic;

mod raster;
mod spectral;

use std::path::PathBuf;

use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem failure while reading or writing an artifact.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An image file could not be decoded into a single-band grid.
    #[error("failed to decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    /// A metadata sidecar was missing fields or inconsistent with its image.
    #[error("invalid metadata for {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },

    /// Two grids that must share dimensions do not.
    #[error("dimension mismatch in {context}: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        context: String,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    /// Frames passed to a pairwise operation disagree on channel, transform,
    /// or timing.
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    /// A parameter violated its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A CSV row failed to parse or validate; `line` is 1-based and counts
    /// the header.
    #[error("bad CSV row in {path} at line {line}: {reason}")]
    CsvRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    /// An input collection was empty where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Not enough data to satisfy a statistical precondition.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A model file was built for a different descriptor layout.
    #[error("feature layout mismatch: model expects {model:?}, runtime provides {runtime:?}")]
    LayoutMismatch { model: String, runtime: String },

    /// Structured (de)serialization failure.
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
