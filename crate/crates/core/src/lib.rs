//! Simulation and verification lab for iterated-logarithm path statistics of
//! Markov chains that contract in the Wasserstein metric.
//!
//! The pipeline: certify the contraction (`wasserstein`), build the corrector
//! and stationary measure (`corrector`), decompose additive functionals into
//! martingale differences and estimate the asymptotic variance
//! (`martingale`), rescale partial sums into polygonal paths and measure
//! their distance to the unit-energy limit set (`strassen`), and audit the
//! moment/series conditions behind the path statements (`audit`). `report`
//! orchestrates seeded end-to-end experiments; `cli` (separate crate) wraps
//! it all in subcommands.

pub mod audit;
pub mod config;
pub mod corrector;
pub mod error;
pub mod kernel;
pub mod martingale;
pub mod observable;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod space;
pub mod strassen;
pub mod taut;
pub mod transport;
pub mod util;
pub mod verdict;
pub mod wasserstein;

pub use error::{Error, Result};
