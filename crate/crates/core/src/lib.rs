//! Spot covariance estimation for noisy, non-synchronous high-frequency prices.
//!
//! The pipeline is
//!
//! ```text
//! quotes ──ingest──▶ Panel ──noise──▶ NoiseProfile
//!                      │                   │
//!                      ├──make_grid──▶ BlockGrid
//!                      ▼                   ▼
//!                 block_spectra      block_noise_levels
//!                      └───────┬───────────┘
//!                              ▼
//!                 Estimator (pre-estimate, Fisher weights, PSD fix)
//!                              ▼
//!                 inference (bands, correlations, betas)
//! ```
//!
//! Time is always the trading day rescaled to `[0, 1]`; prices are logs.
//! [`sim`] holds a synthetic market generator and the Monte Carlo harness
//! used to study the estimator's finite-sample behaviour.

pub mod data;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod lmm;
pub mod noise;
pub mod sim;
pub mod spectral;

pub use data::grid::{make_grid, window_bounds};
pub use data::ingest::{ingest_quotes, IngestReport, QuoteRecord};
pub use data::{BlockGrid, EstimatorConfig, NoiseCorrection, ObservationSeries, Panel, Side};
pub use error::{Error, Result};
pub use inference::{InferenceResult, PairStatistic};
pub use lmm::estimator::{causal_estimate, Estimator};
pub use lmm::{psd_project, SpotEstimate, WeightSet};
pub use noise::{AssetNoise, BlockNoiseLevel, NoiseProfile};
pub use spectral::SpectralStats;
