//! Approximate posteriors `G_y` and the PIT values `q_i = G_{y_i}(x_i)`.
//!
//! An [`ApproxPosterior`] is evaluated at a data value to give a
//! [`PosteriorAt`]: one [`Marginal`] per parameter coordinate plus, for
//! Gaussian families, the joint moments needed for conditional CDFs.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::generative::{stream_rng, ConjugateGaussian, LogisticModel, SimBatch, Window};
use crate::io::{fmt_real, fmt_reals, header_value, parse_header, parse_real, parse_reals};
use crate::special::{beta_reg, inv_beta_reg, ln_beta, norm_cdf, norm_logpdf, norm_ppf};

/// Default clipping applied to PIT values.
pub const DEFAULT_EPS_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxKind {
    Analytic,
    EcdfBacked,
}

/// Empirical CDF with mid-rank evaluation, bounded away from 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfTable {
    sorted: Vec<f64>,
    eps_clip: f64,
}

pub fn ecdf_from_samples(samples: &[f64], eps_clip: f64) -> Result<EcdfTable> {
    EcdfTable::new(samples.to_vec(), eps_clip)
}

impl EcdfTable {
    pub fn new(mut samples: Vec<f64>, eps_clip: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "empirical CDF needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                what: "ECDF sample".into(),
            });
        }
        if !(eps_clip > 0.0 && eps_clip <= 0.01) {
            return Err(Error::invalid(format!("eps_clip must lie in (0, 0.01], got {eps_clip}")));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EcdfTable {
            sorted: samples,
            eps_clip,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `(r + 0.5)/(M + 1)` with `r = #{< x} + ½#{= x}`, clipped.
    pub fn eval(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v < x);
        let at_or_below = self.sorted.partition_point(|&v| v <= x);
        let r = below as f64 + 0.5 * (at_or_below - below) as f64;
        let m = self.sorted.len() as f64;
        ((r + 0.5) / (m + 1.0)).clamp(self.eps_clip, 1.0 - self.eps_clip)
    }

    /// Smallest sample whose evaluation reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let m = self.sorted.len();
        let k = ((q * (m + 1) as f64).ceil() as isize - 1).clamp(0, m as isize - 1);
        self.sorted[k as usize]
    }
}

/// One marginal of an approximate posterior at fixed data.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Beta { a: f64, b: f64 },
    /// Identity CDF on `[0, 1]`.
    Uniform,
    Ecdf(EcdfTable),
}

impl Marginal {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Marginal::Normal { mean, sd } => norm_cdf((x - mean) / sd),
            Marginal::Beta { a, b } => beta_reg(*a, *b, x),
            Marginal::Uniform => x.clamp(0.0, 1.0),
            Marginal::Ecdf(t) => t.eval(x),
        }
    }

    pub fn inv_cdf(&self, q: f64) -> f64 {
        match self {
            Marginal::Normal { mean, sd } => mean + sd * norm_ppf(q),
            Marginal::Beta { a, b } => inv_beta_reg(*a, *b, q),
            Marginal::Uniform => q.clamp(0.0, 1.0),
            Marginal::Ecdf(t) => t.quantile(q),
        }
    }

    /// Marginal log-density; `None` for empirical marginals.
    pub fn logpdf(&self, x: f64) -> Option<f64> {
        match self {
            Marginal::Normal { mean, sd } => Some(norm_logpdf((x - mean) / sd) - sd.ln()),
            Marginal::Beta { a, b } => Some(if x <= 0.0 || x >= 1.0 {
                f64::NEG_INFINITY
            } else {
                (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(*a, *b)
            }),
            Marginal::Uniform => Some(if (0.0..=1.0).contains(&x) { 0.0 } else { f64::NEG_INFINITY }),
            Marginal::Ecdf(_) => None,
        }
    }
}

/// Joint Gaussian moments of an approximation, used for conditional CDFs.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
}

impl GaussianMoments {
    pub fn from_marginals(mean: Vec<f64>, sd: &[f64]) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { sd[i] * sd[i] } else { 0.0 }).collect())
            .collect();
        GaussianMoments { mean, cov }
    }

    /// Conditional law of coordinate `j2` given coordinate `j1 = x1`.
    pub fn conditional(&self, j1: usize, x1: f64, j2: usize) -> (f64, f64) {
        let s11 = self.cov[j1][j1];
        let s21 = self.cov[j2][j1];
        let mean = self.mean[j2] + s21 / s11 * (x1 - self.mean[j1]);
        let var = (self.cov[j2][j2] - s21 * s21 / s11).max(0.0);
        (mean, var.sqrt())
    }
}

/// An approximate posterior evaluated at one data value.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorAt {
    pub marginals: Vec<Marginal>,
    pub gaussian: Option<GaussianMoments>,
}

impl PosteriorAt {
    pub fn gaussian(moments: GaussianMoments) -> Self {
        let marginals = moments
            .mean
            .iter()
            .enumerate()
            .map(|(j, &m)| Marginal::Normal {
                mean: m,
                sd: moments.cov[j][j].sqrt(),
            })
            .collect();
        PosteriorAt {
            marginals,
            gaussian: Some(moments),
        }
    }

    fn marginal(&self, coord: usize) -> Result<&Marginal> {
        self.marginals.get(coord).ok_or(Error::DimensionMismatch {
            expected: self.marginals.len(),
            got: coord + 1,
        })
    }

    pub fn cdf(&self, coord: usize, x: f64) -> Result<f64> {
        Ok(self.marginal(coord)?.cdf(x))
    }

    pub fn inv_cdf(&self, coord: usize, q: f64) -> Result<f64> {
        Ok(self.marginal(coord)?.inv_cdf(q))
    }

    pub fn logpdf(&self, coord: usize, x: f64) -> Result<f64> {
        self.marginal(coord)?
            .logpdf(x)
            .ok_or_else(|| Error::invalid("marginal has no closed-form density"))
    }

    /// `G_{x1,y}(x2)`: CDF of coordinate `j2` given coordinate `j1 = x1`.
    pub fn conditional_cdf(&self, j1: usize, x1: f64, j2: usize, x2: f64) -> Result<f64> {
        let g = self
            .gaussian
            .as_ref()
            .ok_or_else(|| Error::invalid("approximation has no conditional CDF"))?;
        if j1 == j2 || j1.max(j2) >= g.mean.len() {
            return Err(Error::invalid(format!("invalid coordinate pair ({j1}, {j2})")));
        }
        let (m, sd) = g.conditional(j1, x1, j2);
        Ok(norm_cdf((x2 - m) / sd))
    }

    pub fn has_conditional(&self) -> bool {
        self.gaussian.is_some()
    }
}

pub trait ApproxPosterior: Send + Sync {
    fn kind(&self) -> ApproxKind;

    /// Number of parameter coordinates covered.
    fn dim(&self) -> usize;

    fn at(&self, y: &[f64]) -> Result<PosteriorAt>;

    fn describe(&self) -> String;
}

/// PIT dataset `{q_i, s_i}` used to train the Beta head.
#[derive(Debug, Clone, PartialEq)]
pub struct QDataset {
    pub q: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub window: Option<Window>,
}

impl QDataset {
    pub fn new(q: Vec<f64>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Empty("q dataset"));
        }
        if q.len() != inputs.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: inputs.len(),
            });
        }
        if let Some(i) = q.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::invalid(format!("q[{i}] = {} is outside (0, 1)", q[i])));
        }
        let p = inputs[0].len();
        if let Some(bad) = inputs.iter().find(|s| s.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: bad.len(),
            });
        }
        Ok(QDataset {
            q,
            inputs,
            window: None,
        })
    }

    pub fn with_window(mut self, window: Option<Window>) -> Self {
        self.window = window;
        self
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Records `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<QDataset> {
        Ok(QDataset::new(self.q[range.clone()].to_vec(), self.inputs[range].to_vec())?
            .with_window(self.window.clone()))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<QDataset> {
        Ok(QDataset::new(
            indices.iter().map(|&i| self.q[i]).collect(),
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
        )?
        .with_window(self.window.clone()))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = format!("# qdataset n={} p={}", self.len(), self.input_dim());
        if let Some(w) = &self.window {
            let _ = write!(header, " {}", w.describe());
        }
        writeln!(out, "{header}")?;
        for (q, s) in self.q.iter().zip(&self.inputs) {
            if s.is_empty() {
                writeln!(out, "{}", fmt_real(*q))?;
            } else {
                writeln!(out, "{},{}", fmt_real(*q), fmt_reals(s))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Empty("qdataset file"))??;
        let fields = parse_header(&header, "qdataset")?;
        let n: usize = header_value(&fields, "n")?
            .parse()
            .map_err(|_| Error::parse(1, "bad n"))?;
        let p: usize = header_value(&fields, "p")?
            .parse()
            .map_err(|_| Error::parse(1, "bad p"))?;
        let window = match header_value(&fields, "center") {
            Ok(center) => {
                let keep = parse_real(header_value(&fields, "keep_fraction")?, 1)?;
                let standardize = header_value(&fields, "standardize")? == "true";
                Some(Window::new(parse_reals(center, 1)?, keep)?.standardized(standardize))
            }
            Err(_) => None,
        };
        let mut q = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut values = parse_reals(&line, i + 2)?;
            if values.len() != p + 1 {
                return Err(Error::parse(i + 2, format!("expected {} values, got {}", p + 1, values.len())));
            }
            q.push(values[0]);
            values.remove(0);
            inputs.push(values);
        }
        if q.len() != n {
            return Err(Error::parse(1, format!("header says n={n}, found {}", q.len())));
        }
        Ok(QDataset::new(q, inputs)?.with_window(window))
    }
}

fn clip(q: f64, eps: f64) -> f64 {
    q.clamp(eps, 1.0 - eps)
}

/// PIT dataset for coordinate `coord`: records `(G_{y_i}(x_{i,coord}), s_i)`.
pub fn compute_q(batch: &SimBatch, approx: &dyn ApproxPosterior, coord: usize, eps_clip: f64) -> Result<QDataset> {
    Ok(compute_q_multi(batch, approx, &[coord], eps_clip)?.remove(0))
}

/// [`compute_q`] for several coordinates, evaluating the approximation once
/// per pair.
pub fn compute_q_multi(
    batch: &SimBatch,
    approx: &dyn ApproxPosterior,
    coords: &[usize],
    eps_clip: f64,
) -> Result<Vec<QDataset>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= approx.dim()) {
        return Err(Error::DimensionMismatch {
            expected: approx.dim(),
            got: c + 1,
        });
    }
    let mut qs = vec![Vec::with_capacity(batch.len()); coords.len()];
    for (i, pair) in batch.pairs.iter().enumerate() {
        let post = approx.at(&pair.y)?;
        for (slot, &c) in qs.iter_mut().zip(coords) {
            let q = post.cdf(c, pair.x[c])?;
            if !q.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    what: format!("CDF value for coordinate {c}"),
                });
            }
            slot.push(clip(q, eps_clip));
        }
    }
    let inputs: Vec<Vec<f64>> = batch.pairs.iter().map(|p| p.s.clone()).collect();
    qs.into_iter()
        .map(|q| QDataset::new(q, inputs.clone()))
        .collect()
}

/// Conditional PIT dataset: records `(G_{x1,y}(x2), (x1, s))`.
pub fn compute_conditional_q(
    batch: &SimBatch,
    approx: &dyn ApproxPosterior,
    j1: usize,
    j2: usize,
    eps_clip: f64,
) -> Result<QDataset> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if j1 == j2 {
        return Err(Error::invalid("conditional PIT needs two distinct coordinates"));
    }
    if j1.max(j2) >= approx.dim() {
        return Err(Error::DimensionMismatch {
            expected: approx.dim(),
            got: j1.max(j2) + 1,
        });
    }
    let mut q = Vec::with_capacity(batch.len());
    let mut inputs = Vec::with_capacity(batch.len());
    for (i, pair) in batch.pairs.iter().enumerate() {
        let post = approx.at(&pair.y)?;
        let v = post.conditional_cdf(j1, pair.x[j1], j2, pair.x[j2])?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "conditional CDF value".into(),
            });
        }
        q.push(clip(v, eps_clip));
        let mut input = Vec::with_capacity(pair.s.len() + 1);
        input.push(pair.x[j1]);
        input.extend_from_slice(&pair.s);
        inputs.push(input);
    }
    QDataset::new(q, inputs)
}

/// Gaussian approximation to the conjugate posterior with a controlled
/// distortion: mean `μ_F(y) + shift`, sd `sd_scale·σ_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisSpecifiedGaussian {
    pub model: ConjugateGaussian,
    pub mean_shift: f64,
    pub sd_scale: f64,
}

pub fn mis_specified_gaussian(model: &ConjugateGaussian, mean_shift: f64, sd_scale: f64) -> Result<MisSpecifiedGaussian> {
    if !(sd_scale > 0.0 && sd_scale.is_finite()) || !mean_shift.is_finite() {
        return Err(Error::invalid(format!(
            "need finite shift and positive sd_scale (shift={mean_shift}, scale={sd_scale})"
        )));
    }
    Ok(MisSpecifiedGaussian {
        model: model.clone(),
        mean_shift,
        sd_scale,
    })
}

/// The exact conjugate posterior as an [`ApproxPosterior`].
pub fn exact_conjugate(model: &ConjugateGaussian) -> MisSpecifiedGaussian {
    MisSpecifiedGaussian {
        model: model.clone(),
        mean_shift: 0.0,
        sd_scale: 1.0,
    }
}

impl ApproxPosterior for MisSpecifiedGaussian {
    fn kind(&self) -> ApproxKind {
        ApproxKind::Analytic
    }

    fn dim(&self) -> usize {
        self.model.dim
    }

    fn at(&self, y: &[f64]) -> Result<PosteriorAt> {
        if y.len() != self.model.dim {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim,
                got: y.len(),
            });
        }
        let sd = self.sd_scale * self.model.posterior_sd();
        let mean = (0..self.model.dim)
            .map(|j| self.model.posterior_mean(y, j) + self.mean_shift)
            .collect();
        Ok(PosteriorAt::gaussian(GaussianMoments::from_marginals(
            mean,
            &vec![sd; self.model.dim],
        )))
    }

    fn describe(&self) -> String {
        format!("misspecified-gaussian(shift={},scale={})", self.mean_shift, self.sd_scale)
    }
}

/// Conjugate approximation whose mean shift flips sign across
/// `y[0] = split`: mean `μ_F(y) ± shift`, sd `sd_scale·σ_F`.
///
/// Pooled over data on both sides of the split, the PIT values can be close
/// to uniform even though the approximation is biased at every single `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignFlipGaussian {
    pub model: ConjugateGaussian,
    pub split: f64,
    pub mean_shift: f64,
    pub sd_scale: f64,
}

impl SignFlipGaussian {
    /// Inflation `exp(δ²/2)`, `δ = shift/σ_F`, that flattens the pooled PIT
    /// density at `q = 1/2`.
    pub fn flattening_scale(model: &ConjugateGaussian, mean_shift: f64) -> f64 {
        let delta = mean_shift / model.posterior_sd();
        (0.5 * delta * delta).exp()
    }
}

impl ApproxPosterior for SignFlipGaussian {
    fn kind(&self) -> ApproxKind {
        ApproxKind::Analytic
    }

    fn dim(&self) -> usize {
        self.model.dim
    }

    fn at(&self, y: &[f64]) -> Result<PosteriorAt> {
        if y.len() != self.model.dim {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim,
                got: y.len(),
            });
        }
        let sign = if y[0] >= self.split { 1.0 } else { -1.0 };
        let sd = self.sd_scale * self.model.posterior_sd();
        let mean = (0..self.model.dim)
            .map(|j| self.model.posterior_mean(y, j) + sign * self.mean_shift)
            .collect();
        Ok(PosteriorAt::gaussian(GaussianMoments::from_marginals(
            mean,
            &vec![sd; self.model.dim],
        )))
    }

    fn describe(&self) -> String {
        format!(
            "signflip-gaussian(split={},shift={},scale={})",
            self.split, self.mean_shift, self.sd_scale
        )
    }
}

/// Same marginal law at every `y`, for tests and baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedApprox {
    pub marginals: Vec<Marginal>,
}

impl ApproxPosterior for FixedApprox {
    fn kind(&self) -> ApproxKind {
        if self.marginals.iter().any(|m| matches!(m, Marginal::Ecdf(_))) {
            ApproxKind::EcdfBacked
        } else {
            ApproxKind::Analytic
        }
    }

    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn at(&self, _y: &[f64]) -> Result<PosteriorAt> {
        let gaussian = if self.marginals.iter().all(|m| matches!(m, Marginal::Normal { .. })) {
            let (mean, sd): (Vec<f64>, Vec<f64>) = self
                .marginals
                .iter()
                .map(|m| match m {
                    Marginal::Normal { mean, sd } => (*mean, *sd),
                    _ => unreachable!(),
                })
                .unzip();
            Some(GaussianMoments::from_marginals(mean, &sd))
        } else {
            None
        };
        Ok(PosteriorAt {
            marginals: self.marginals.clone(),
            gaussian,
        })
    }

    fn describe(&self) -> String {
        format!("fixed({:?})", self.marginals)
    }
}

/// Replaces each marginal of an analytic approximation with the ECDF of
/// `n_samples` draws from it, as when only approximate-posterior samples are
/// available. Draws are seeded from `(seed, y)` so evaluation is
/// deterministic.
pub struct EcdfApprox {
    pub inner: Arc<dyn ApproxPosterior>,
    pub n_samples: usize,
    pub eps_clip: f64,
    pub seed: u64,
}

impl ApproxPosterior for EcdfApprox {
    fn kind(&self) -> ApproxKind {
        ApproxKind::EcdfBacked
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn at(&self, y: &[f64]) -> Result<PosteriorAt> {
        let base = self.inner.at(y)?;
        let key = y.iter().fold(0x9e37_79b9_7f4a_7c15u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x1000_0000_01b3).rotate_left(29)
        });
        let mut rng = stream_rng(self.seed, key);
        let marginals = base
            .marginals
            .iter()
            .map(|m| {
                let draws: Vec<f64> = (0..self.n_samples)
                    .map(|_| m.inv_cdf(rng.random::<f64>()))
                    .collect();
                EcdfTable::new(draws, self.eps_clip).map(Marginal::Ecdf)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorAt {
            marginals,
            gaussian: None,
        })
    }

    fn describe(&self) -> String {
        format!("ecdf(n={},{})", self.n_samples, self.inner.describe())
    }
}

/// Gaussian variational posterior from the Jaakkola–Jordan bound.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFit {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
    /// Lower bound on `log p(y)` after each iteration.
    pub bound_trace: Vec<f64>,
    pub iterations: usize,
}

pub const VI_TOLERANCE: f64 = 1e-8;
pub const VI_MAX_ITERATIONS: usize = 500;

fn jj_lambda(xi: f64) -> f64 {
    if xi.abs() < 1e-6 {
        0.125 - xi * xi / 96.0
    } else {
        (0.5 * xi).tanh() / (4.0 * xi)
    }
}

fn ln_sigmoid(z: f64) -> f64 {
    -crate::special::softplus(-z)
}

/// Fits `N(m, S)` to the logistic-regression posterior with prior
/// `N(0, prior_var·I)`, alternating the closed-form Gaussian update with the
/// variational parameters `ξ_j² = x_jᵀ(S + mmᵀ)x_j`.
pub fn vi_logistic(y: &[f64], design: &[Vec<f64>], prior_var: f64) -> Result<VariationalFit> {
    let n = design.len();
    if n == 0 {
        return Err(Error::Empty("design"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let p = design[0].len();
    let x = DMatrix::from_fn(n, p, |i, j| design[i][j]);
    let prior_prec = 1.0 / prior_var;
    let rhs = x.transpose() * DVector::from_fn(n, |i, _| y[i] - 0.5);

    let mut xi = vec![1.0; n];
    let mut trace = Vec::new();
    let solve = |xi: &[f64]| -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        let mut prec = DMatrix::identity(p, p) * prior_prec;
        for i in 0..n {
            let row = x.row(i);
            prec += row.transpose() * row * (2.0 * jj_lambda(xi[i]));
        }
        let chol = prec
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("variational precision is not positive definite"))?;
        let cov = chol.inverse();
        let mean = &cov * &rhs;
        let log_det_cov = -2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = mean.dot(&(&prec * &mean));
        let bound = 0.5 * (log_det_cov - p as f64 * prior_var.ln())
            + 0.5 * quad
            + xi
                .iter()
                .map(|&v| ln_sigmoid(v) - 0.5 * v + jj_lambda(v) * v * v)
                .sum::<f64>();
        Ok((cov, mean, bound))
    };

    let mut residual = f64::INFINITY;
    for it in 0..VI_MAX_ITERATIONS {
        let (cov, mean, bound) = solve(&xi)?;
        trace.push(bound);
        let second = &cov + &mean * mean.transpose();
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let new = (row * &second * row.transpose())[(0, 0)].max(0.0).sqrt();
            max_step = max_step.max((new - xi[i]).abs());
            xi[i] = new;
        }
        residual = max_step;
        if residual < VI_TOLERANCE {
            let (cov, mean, bound) = solve(&xi)?;
            trace.push(bound);
            return Ok(VariationalFit {
                mean: mean.iter().copied().collect(),
                cov: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
                xi,
                bound_trace: trace,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: VI_MAX_ITERATIONS,
        residual,
    })
}

/// Variational logistic-regression posterior, refitted at each data value.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalLogistic {
    pub model: LogisticModel,
}

impl ApproxPosterior for VariationalLogistic {
    fn kind(&self) -> ApproxKind {
        ApproxKind::Analytic
    }

    fn dim(&self) -> usize {
        self.model.p_reg()
    }

    fn at(&self, y: &[f64]) -> Result<PosteriorAt> {
        let fit = vi_logistic(y, &self.model.design, self.model.prior_var)?;
        Ok(PosteriorAt::gaussian(GaussianMoments {
            mean: fit.mean,
            cov: fit.cov,
        }))
    }

    fn describe(&self) -> String {
        "vi-logistic(jaakkola-jordan)".into()
    }
}
