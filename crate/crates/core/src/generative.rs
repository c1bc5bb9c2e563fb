//! Generative models, batch simulation and nearest-fraction windowing.
//!
//! A [`GenerativeModel`] supplies the prior sampler, the observation model and
//! the summary statistic. [`sample_generative`] draws i.i.d. pairs from the
//! joint `π(x)p(y|x)`; each pair uses its own ChaCha stream keyed by
//! `(seed, index)`, so batches are reproducible and independent of the order
//! pairs are generated in. [`window_select`] keeps the pairs whose summaries
//! are closest to `s(y_obs)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::{fmt_reals, header_value, parse_header, parse_reals};
use crate::special::sigmoid;

/// RNG used for every simulation in the crate.
pub type SimRng = ChaCha8Rng;

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub trait GenerativeModel: Send + Sync {
    fn model_id(&self) -> String;

    /// Dimension of the parameter `x`.
    fn param_dim(&self) -> usize;

    /// Dimension of the summary statistic `s(y)`.
    fn summary_dim(&self) -> usize;

    fn sample_prior(&self, rng: &mut SimRng) -> Vec<f64>;

    fn sample_data(&self, x: &[f64], rng: &mut SimRng) -> Result<Vec<f64>>;

    fn summary(&self, y: &[f64]) -> Vec<f64>;

    /// Unnormalized exact log posterior `log π(x|y) + const`, when known.
    fn exact_log_posterior(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Closed-form exact posterior draws, when available.
    fn sample_exact_posterior(&self, _y: &[f64], _n: usize, _rng: &mut SimRng) -> Option<Vec<Vec<f64>>> {
        None
    }

    /// Exact marginal posterior CDF of coordinate `coord`, when available.
    fn exact_marginal_cdf(&self, _y: &[f64], _coord: usize, _x: f64) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub pairs: Vec<SimPair>,
    pub seed: u64,
    pub model_id: String,
}

impl SimBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes the batch as a header line followed by one `x<TAB>s` record per
    /// pair. The raw data `y` is appended as a third field only when it
    /// differs from `s`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# simbatch model_id={} seed={} n={}",
            self.model_id,
            self.seed,
            self.pairs.len()
        )?;
        let mut line = String::new();
        for pair in &self.pairs {
            line.clear();
            let _ = write!(line, "{}\t{}", fmt_reals(&pair.x), fmt_reals(&pair.s));
            if pair.y != pair.s {
                let _ = write!(line, "\t{}", fmt_reals(&pair.y));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Empty("simbatch file"))??;
        let fields = parse_header(&header, "simbatch")?;
        let model_id = header_value(&fields, "model_id")?.to_string();
        let seed = header_value(&fields, "seed")?
            .parse::<u64>()
            .map_err(|e| Error::parse(1, e.to_string()))?;
        let n = header_value(&fields, "n")?
            .parse::<usize>()
            .map_err(|e| Error::parse(1, e.to_string()))?;
        let mut pairs = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let x = parse_reals(cols.next().unwrap_or(""), lineno)?;
            let s = parse_reals(
                cols.next().ok_or_else(|| Error::parse(lineno, "missing summary field"))?,
                lineno,
            )?;
            let y = match cols.next() {
                Some(f) => parse_reals(f, lineno)?,
                None => s.clone(),
            };
            pairs.push(SimPair { x, y, s });
        }
        if pairs.len() != n {
            return Err(Error::parse(1, format!("header says n={n}, found {}", pairs.len())));
        }
        Ok(SimBatch { pairs, seed, model_id })
    }
}

/// Draws `n` i.i.d. pairs from `π(x)p(y|x)`.
pub fn sample_generative(model: &dyn GenerativeModel, n: usize, seed: u64) -> Result<SimBatch> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let x = model.sample_prior(&mut rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                what: "prior draw".into(),
            });
        }
        let y = model.sample_data(&x, &mut rng).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { index: i, what },
            other => other,
        })?;
        let s = model.summary(&y);
        pairs.push(SimPair { x, y, s });
    }
    Ok(SimBatch {
        pairs,
        seed,
        model_id: model.model_id(),
    })
}

/// Nearest-fraction neighbourhood of `s(y_obs)` in summary space.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub center: Vec<f64>,
    pub keep_fraction: f64,
    /// z-score each summary coordinate with batch statistics before measuring
    /// distance.
    pub standardize: bool,
}

impl Window {
    pub fn new(center: Vec<f64>, keep_fraction: f64) -> Result<Self> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "keep_fraction must lie in (0, 1], got {keep_fraction}"
            )));
        }
        Ok(Window {
            center,
            keep_fraction,
            standardize: false,
        })
    }

    pub fn standardized(mut self, on: bool) -> Self {
        self.standardize = on;
        self
    }

    /// Number of pairs kept out of `n`.
    pub fn kept(&self, n: usize) -> usize {
        let k = (self.keep_fraction * n as f64 - 1e-9).ceil() as usize;
        k.clamp(1, n)
    }

    pub fn describe(&self) -> String {
        format!(
            "center={} keep_fraction={} standardize={}",
            fmt_reals(&self.center),
            self.keep_fraction,
            self.standardize
        )
    }
}

/// Keeps the `⌈keep_fraction·n⌉` pairs closest to the window centre, in
/// generation order. Ties at the boundary go to the lower index.
pub fn window_select(batch: &SimBatch, window: &Window) -> Result<SimBatch> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let p = window.center.len();
    for pair in &batch.pairs {
        if pair.s.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: pair.s.len(),
            });
        }
    }
    let n = batch.len();
    let k = window.kept(n);
    if k == n {
        return Ok(batch.clone());
    }

    let scale: Vec<f64> = if window.standardize {
        (0..p)
            .map(|j| {
                let mean = batch.pairs.iter().map(|pr| pr.s[j]).sum::<f64>() / n as f64;
                let var = batch
                    .pairs
                    .iter()
                    .map(|pr| (pr.s[j] - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                if var > 0.0 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; p]
    };

    let mut ranked: Vec<(f64, usize)> = batch
        .pairs
        .iter()
        .enumerate()
        .map(|(i, pr)| {
            let d2 = pr
                .s
                .iter()
                .zip(&window.center)
                .zip(&scale)
                .map(|((s, c), w)| ((s - c) * w).powi(2))
                .sum::<f64>();
            (d2, i)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = ranked[..k].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();

    Ok(SimBatch {
        pairs: keep.into_iter().map(|i| batch.pairs[i].clone()).collect(),
        seed: batch.seed,
        model_id: batch.model_id.clone(),
    })
}

/// Independent-coordinate Gaussian conjugate model:
/// `x ~ N(m, v·I)`, `y|x ~ N(x, w·I)`, `s(y) = y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateGaussian {
    pub dim: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub noise_var: f64,
}

/// Scalar conjugate model.
pub fn gaussian_conjugate_model(prior_mean: f64, prior_var: f64, noise_var: f64) -> Result<ConjugateGaussian> {
    ConjugateGaussian::new(1, prior_mean, prior_var, noise_var)
}

impl ConjugateGaussian {
    pub fn new(dim: usize, prior_mean: f64, prior_var: f64, noise_var: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if !(prior_var > 0.0 && noise_var > 0.0) || !prior_var.is_finite() || !noise_var.is_finite() {
            return Err(Error::invalid(format!(
                "variances must be positive and finite (prior_var={prior_var}, noise_var={noise_var})"
            )));
        }
        if !prior_mean.is_finite() {
            return Err(Error::invalid("prior_mean must be finite"));
        }
        Ok(ConjugateGaussian {
            dim,
            prior_mean,
            prior_var,
            noise_var,
        })
    }

    /// Posterior variance per coordinate, `(1/v + 1/w)⁻¹`.
    pub fn posterior_var(&self) -> f64 {
        1.0 / (1.0 / self.prior_var + 1.0 / self.noise_var)
    }

    pub fn posterior_sd(&self) -> f64 {
        self.posterior_var().sqrt()
    }

    /// Posterior mean of coordinate `coord` given data `y`.
    pub fn posterior_mean(&self, y: &[f64], coord: usize) -> f64 {
        self.posterior_var() * (self.prior_mean / self.prior_var + y[coord] / self.noise_var)
    }
}

impl GenerativeModel for ConjugateGaussian {
    fn model_id(&self) -> String {
        format!(
            "conjugate-gaussian(dim={},m={},v={},w={})",
            self.dim, self.prior_mean, self.prior_var, self.noise_var
        )
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn summary_dim(&self) -> usize {
        self.dim
    }

    fn sample_prior(&self, rng: &mut SimRng) -> Vec<f64> {
        let sd = self.prior_var.sqrt();
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.prior_mean + sd * z
            })
            .collect()
    }

    fn sample_data(&self, x: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let sd = self.noise_var.sqrt();
        Ok(x.iter()
            .map(|&xi| {
                let z: f64 = StandardNormal.sample(rng);
                xi + sd * z
            })
            .collect())
    }

    fn summary(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }

    fn exact_log_posterior(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let var = self.posterior_var();
        Some(
            (0..self.dim)
                .map(|j| {
                    let z = x[j] - self.posterior_mean(y, j);
                    -0.5 * z * z / var - 0.5 * (2.0 * PI * var).ln()
                })
                .sum(),
        )
    }

    fn sample_exact_posterior(&self, y: &[f64], n: usize, rng: &mut SimRng) -> Option<Vec<Vec<f64>>> {
        let sd = self.posterior_sd();
        let means: Vec<f64> = (0..self.dim).map(|j| self.posterior_mean(y, j)).collect();
        Some(
            (0..n)
                .map(|_| {
                    means
                        .iter()
                        .map(|m| {
                            let z: f64 = StandardNormal.sample(rng);
                            m + sd * z
                        })
                        .collect()
                })
                .collect(),
        )
    }

    fn exact_marginal_cdf(&self, y: &[f64], coord: usize, x: f64) -> Option<f64> {
        Some(crate::special::norm_cdf(
            (x - self.posterior_mean(y, coord)) / self.posterior_sd(),
        ))
    }
}

/// Bayesian logistic regression: `β ~ N(0, v·I)`,
/// `y_j ~ Bernoulli(logit⁻¹(x_jᵀβ))`, `s(y) = y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Row-major `n_obs × p_reg` design matrix.
    pub design: Vec<Vec<f64>>,
    pub prior_var: f64,
}

pub fn logistic_model(design: Vec<Vec<f64>>, prior_var: f64) -> Result<LogisticModel> {
    LogisticModel::new(design, prior_var)
}

impl LogisticModel {
    pub fn new(design: Vec<Vec<f64>>, prior_var: f64) -> Result<Self> {
        if design.is_empty() || design[0].is_empty() {
            return Err(Error::Empty("design matrix"));
        }
        let p = design[0].len();
        for row in &design {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("design entries must be finite"));
            }
        }
        if !(prior_var > 0.0 && prior_var.is_finite()) {
            return Err(Error::invalid(format!("prior_var must be positive, got {prior_var}")));
        }
        Ok(LogisticModel { design, prior_var })
    }

    /// Design with entries i.i.d. `U(0,1)`.
    pub fn uniform_design(n_obs: usize, p_reg: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, u64::MAX);
        (0..n_obs)
            .map(|_| (0..p_reg).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    pub fn n_obs(&self) -> usize {
        self.design.len()
    }

    pub fn p_reg(&self) -> usize {
        self.design[0].len()
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        self.design
            .iter()
            .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl GenerativeModel for LogisticModel {
    fn model_id(&self) -> String {
        format!("logistic(n_obs={},p={},v={})", self.n_obs(), self.p_reg(), self.prior_var)
    }

    fn param_dim(&self) -> usize {
        self.p_reg()
    }

    fn summary_dim(&self) -> usize {
        self.n_obs()
    }

    fn sample_prior(&self, rng: &mut SimRng) -> Vec<f64> {
        let sd = self.prior_var.sqrt();
        (0..self.p_reg())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect()
    }

    fn sample_data(&self, x: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        if x.len() != self.p_reg() {
            return Err(Error::DimensionMismatch {
                expected: self.p_reg(),
                got: x.len(),
            });
        }
        Ok(self
            .linear_predictor(x)
            .into_iter()
            .map(|eta| {
                let u: f64 = rng.random();
                if u < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn summary(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }

    fn exact_log_posterior(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let p = self.p_reg() as f64;
        let log_prior = -0.5 * x.iter().map(|b| b * b).sum::<f64>() / self.prior_var
            - 0.5 * p * (2.0 * PI * self.prior_var).ln();
        let log_lik: f64 = self
            .linear_predictor(x)
            .iter()
            .zip(y)
            .map(|(&eta, &yj)| yj * eta - crate::special::softplus(eta))
            .sum();
        Some(log_prior + log_lik)
    }
}
