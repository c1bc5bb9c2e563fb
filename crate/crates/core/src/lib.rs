//! Diagnostics for posterior approximations at the observed data.
//!
//! The central object is the distortion map `D_y`, the CDF of
//! `Q = G_y(X)` when `X` follows the exact posterior at `y` and `G_y` is the
//! approximate posterior CDF. It is estimated without access to the exact
//! posterior: simulate `(x_i, y_i)` from the generative model, keep the pairs
//! whose summaries lie near `s(y_obs)`, form `q_i = G_{y_i}(x_i)`, and fit a
//! Beta density for `q` whose parameters are a neural-network function of the
//! summary. The fitted map evaluated at `s(y_obs)` is the diagnostic.
//!
//! Module map:
//!
//! - [`generative`]: models, simulation, windowing
//! - [`approximators`]: approximate posteriors and PIT datasets
//! - [`samplers`]: random-walk Metropolis and the brute-force exact map
//! - [`betamdn`]: the Beta mixture-density network and its trainer
//! - [`distortion`]: the end-to-end fit, evaluation, surfaces, validation
//! - [`baselines`]: averaged PIT histograms and operational coverage

pub mod approximators;
pub mod baselines;
pub mod betamdn;
pub mod distortion;
pub mod error;
pub mod generative;
pub mod io;
pub mod samplers;
pub mod special;

pub use error::{Error, Result};
