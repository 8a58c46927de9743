//! Stochastic Lyapunov spectra of input-driven recurrent networks.
//!
//! A network ([`cells::Network`]) of vanilla, LSTM or GRU layers is driven by
//! input sequences while an orthonormal tangent basis is pushed through the
//! analytical state Jacobians and periodically re-orthonormalized
//! ([`estimator`]). Exponents are averaged index-wise over a batch of
//! sequences. [`oracle`] holds brute-force cross-checks, [`features`] the
//! spectrum summaries, and [`io`] the file formats used by the CLI.

pub mod cells;
pub mod check;
pub mod cli;
pub mod ensembles;
pub mod error;
pub mod estimator;
pub mod features;
pub mod io;
pub mod linalg;
pub mod oracle;

pub use error::{Error, Result};
