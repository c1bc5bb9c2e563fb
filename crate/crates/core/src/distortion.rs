//! The end-to-end estimate of the distortion map, its evaluation, bivariate
//! surfaces, and stability checks for a fit.
//!
//! [`fit_distortion`] runs the whole pipeline: simulate from the generative
//! model, window around `s(y_obs)`, form PIT values under the approximation,
//! and train a Beta network. The result is frozen at `s(y_obs)` as a
//! [`DistortionMap`]. A cap-shaped density means the approximation is
//! over-dispersed, a cup-shaped one under-dispersed, and `D̂(1/2)` well above
//! one half means its median sits above the exact one.

use std::io::{BufRead, Write};

use crate::approximators::{compute_conditional_q, compute_q_multi, ApproxPosterior, PosteriorAt, QDataset, DEFAULT_EPS_CLIP};
use crate::betamdn::{forward, train, BetaParams, NetConfig, NetParams, TrainConfig, TrainReport};
use crate::error::{Error, Result, StageExt};
use crate::generative::{sample_generative, window_select, GenerativeModel, Window};
use crate::io::{fmt_real, parse_reals};

/// Points on the uniform `q` grid of a [`DistortionCurve`].
pub const CURVE_POINTS: usize = 201;
/// Nodes per axis of a [`SurfaceGrid`].
pub const SURFACE_POINTS: usize = 51;
/// Densities on the curve grid are evaluated at `q` clamped to
/// `[DENSITY_MARGIN, 1 − DENSITY_MARGIN]`.
pub const DENSITY_MARGIN: f64 = 1e-6;
/// Windowed sample size below which a fit is flagged in the log.
pub const MIN_RECOMMENDED_TRAIN: usize = 1000;

/// Anything that behaves as a distortion map on `[0, 1]`.
pub trait Distortion {
    /// `D(q)` for `q ∈ [0, 1]`.
    fn cdf(&self, q: f64) -> Result<f64>;
    /// `d(q)` for `q ∈ (0, 1)`.
    fn density(&self, q: f64) -> Result<f64>;
}

fn check_closed(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::invalid(format!("q = {q} is outside [0, 1]")))
    }
}

fn check_open(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("q = {q} is outside (0, 1)")))
    }
}

impl Distortion for BetaParams {
    fn cdf(&self, q: f64) -> Result<f64> {
        check_closed(q)?;
        Ok(BetaParams::cdf(self, q))
    }

    fn density(&self, q: f64) -> Result<f64> {
        check_open(q)?;
        self.pdf(q)
    }
}

/// A distortion map given by closed-form CDF and density functions.
pub struct ClosedForm<C, P> {
    pub cdf: C,
    pub density: P,
}

impl<C: Fn(f64) -> f64, P: Fn(f64) -> f64> Distortion for ClosedForm<C, P> {
    fn cdf(&self, q: f64) -> Result<f64> {
        check_closed(q)?;
        Ok((self.cdf)(q))
    }

    fn density(&self, q: f64) -> Result<f64> {
        check_open(q)?;
        Ok((self.density)(q))
    }
}

/// The identity map `D(q) = q`.
pub fn identity_map() -> ClosedForm<fn(f64) -> f64, fn(f64) -> f64> {
    ClosedForm {
        cdf: |q| q,
        density: |_| 1.0,
    }
}

/// A distortion map tabulated on the uniform 201-point grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionCurve {
    pub q: Vec<f64>,
    pub cdf: Vec<f64>,
    pub density: Vec<f64>,
}

impl DistortionCurve {
    pub fn grid() -> Vec<f64> {
        (0..CURVE_POINTS)
            .map(|i| i as f64 / (CURVE_POINTS - 1) as f64)
            .collect()
    }

    fn density_point(q: f64) -> f64 {
        q.clamp(DENSITY_MARGIN, 1.0 - DENSITY_MARGIN)
    }

    pub fn from_map(map: &dyn Distortion) -> Result<Self> {
        let q = Self::grid();
        let cdf = q.iter().map(|&v| map.cdf(v)).collect::<Result<Vec<_>>>()?;
        let density = q
            .iter()
            .map(|&v| map.density(Self::density_point(v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DistortionCurve { q, cdf, density })
    }

    pub fn from_fns(cdf: impl Fn(f64) -> f64, density: impl Fn(f64) -> f64) -> Self {
        let q = Self::grid();
        DistortionCurve {
            cdf: q.iter().map(|&v| cdf(v)).collect(),
            density: q.iter().map(|&v| density(Self::density_point(v))).collect(),
            q,
        }
    }

    pub fn identity() -> Self {
        Self::from_fns(|q| q, |_| 1.0)
    }

    /// Empirical CDF of a sorted sample of `q` values; the density column is
    /// the central difference of the ECDF across neighbouring grid points.
    pub fn from_sorted_sample(sorted: &[f64]) -> Self {
        let q = Self::grid();
        let n = sorted.len().max(1) as f64;
        let mut cdf: Vec<f64> = q
            .iter()
            .map(|&v| sorted.partition_point(|&s| s <= v) as f64 / n)
            .collect();
        cdf[0] = 0.0;
        cdf[CURVE_POINTS - 1] = 1.0;
        let h = q[1] - q[0];
        let density = (0..CURVE_POINTS)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(CURVE_POINTS - 1);
                (cdf[hi] - cdf[lo]) / (h * (hi - lo) as f64)
            })
            .collect();
        DistortionCurve { q, cdf, density }
    }

    /// `D(q)` by linear interpolation on the grid.
    pub fn eval_cdf(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let pos = q * (self.q.len() - 1) as f64;
        let i = (pos.floor() as usize).min(self.q.len() - 2);
        let t = pos - i as f64;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    pub fn sup_distance(&self, other: &DistortionCurve) -> f64 {
        self.cdf
            .iter()
            .zip(&other.cdf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_distance_to(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.q
            .iter()
            .zip(&self.cdf)
            .map(|(&q, &d)| (d - f(q)).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "q,D,d")?;
        for i in 0..self.q.len() {
            writeln!(
                out,
                "{},{},{}",
                fmt_real(self.q[i]),
                fmt_real(self.cdf[i]),
                fmt_real(self.density[i])
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let rows = read_csv_rows(input, &["q", "D", "d"])?;
        let mut curve = DistortionCurve {
            q: Vec::with_capacity(rows.len()),
            cdf: Vec::with_capacity(rows.len()),
            density: Vec::with_capacity(rows.len()),
        };
        for r in rows {
            curve.q.push(r[0]);
            curve.cdf.push(r[1]);
            curve.density.push(r[2]);
        }
        if curve.q.len() < 2 {
            return Err(Error::parse(1, "curve needs at least two rows"));
        }
        Ok(curve)
    }
}

/// Reads a numeric CSV with the given header, returning its rows.
pub fn read_csv_rows<R: BufRead>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = input.lines();
    let first = lines.next().transpose()?.ok_or(Error::Empty("csv"))?;
    let names: Vec<&str> = first.trim().split(',').map(str::trim).collect();
    if names != header {
        return Err(Error::parse(1, format!("expected header {}", header.join(","))));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_reals(line.trim(), i + 2)?;
        if row.len() != header.len() {
            return Err(Error::parse(i + 2, format!("expected {} fields", header.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// A fitted distortion map frozen at the observed summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionMap {
    pub net: NetParams,
    pub s_obs: Vec<f64>,
    pub coord: usize,
    pub window: Option<Window>,
    pub n_train: usize,
    beta: BetaParams,
}

impl DistortionMap {
    pub fn new(net: NetParams, s_obs: Vec<f64>, coord: usize, window: Option<Window>, n_train: usize) -> Result<Self> {
        let beta = forward(&net, &s_obs)?;
        Ok(DistortionMap {
            net,
            s_obs,
            coord,
            window,
            n_train,
            beta,
        })
    }

    pub fn beta_params(&self) -> &BetaParams {
        &self.beta
    }

    /// `D̂(q)`, the mixture Beta CDF at `s_obs`.
    pub fn eval_cdf(&self, q: f64) -> Result<f64> {
        Distortion::cdf(&self.beta, q)
    }

    /// `d̂(q)`; errors at the boundary.
    pub fn eval_density(&self, q: f64) -> Result<f64> {
        Distortion::density(&self.beta, q)
    }

    pub fn curve(&self) -> Result<DistortionCurve> {
        DistortionCurve::from_map(&self.beta)
    }
}

impl Distortion for DistortionMap {
    fn cdf(&self, q: f64) -> Result<f64> {
        self.eval_cdf(q)
    }

    fn density(&self, q: f64) -> Result<f64> {
        self.eval_density(q)
    }
}

/// `F̂(x) = D̂(G_{y_obs}(x))`.
pub fn recalibrated_cdf(map: &dyn Distortion, approx: &dyn ApproxPosterior, y_obs: &[f64], coord: usize, x: f64) -> Result<f64> {
    let g = approx.at(y_obs)?.cdf(coord, x)?;
    map.cdf(g.clamp(0.0, 1.0))
}

/// `log π̂(x|y_obs) = log d̂(G(x)) + log π̃(x|y_obs)`.
pub fn recalibrated_logpdf(
    map: &dyn Distortion,
    approx: &dyn ApproxPosterior,
    y_obs: &[f64],
    coord: usize,
    x: f64,
) -> Result<f64> {
    let post = approx.at(y_obs)?;
    let g = post.cdf(coord, x)?.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    Ok(map.density(g)?.ln() + post.logpdf(coord, x)?)
}

/// Everything the pipeline needs besides the model, approximation and data.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of simulated pairs before windowing.
    pub n_sim: usize,
    pub keep_fraction: f64,
    pub standardize_window: bool,
    pub sim_seed: u64,
    pub eps_clip: f64,
    /// `input_dim` is overwritten from the model's summary dimension.
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl FitConfig {
    pub fn new(n_sim: usize, keep_fraction: f64, seed: u64) -> Self {
        let mut train = TrainConfig::default();
        train.seed = seed;
        let mut net = NetConfig::new(1);
        net.init_seed = seed;
        FitConfig {
            n_sim,
            keep_fraction,
            standardize_window: false,
            sim_seed: seed,
            eps_clip: DEFAULT_EPS_CLIP,
            net,
            train,
        }
    }

    fn with_input_dim(&self, input_dim: usize) -> NetConfig {
        let mut net = self.net.clone();
        net.input_dim = input_dim;
        net
    }
}

/// Simulated, windowed batch together with `s(y_obs)` and the window used.
fn windowed_batch(
    model: &dyn GenerativeModel,
    y_obs: &[f64],
    cfg: &FitConfig,
) -> Result<(crate::generative::SimBatch, Vec<f64>, Window)> {
    let s_obs = model.summary(y_obs);
    let window = Window::new(s_obs.clone(), cfg.keep_fraction)
        .stage("window")?
        .standardized(cfg.standardize_window);
    let batch = sample_generative(model, cfg.n_sim, cfg.sim_seed).stage("simulate")?;
    let kept = window_select(&batch, &window).stage("window")?;
    if kept.len() < MIN_RECOMMENDED_TRAIN {
        log::warn!(
            "window keeps {} pairs; at least {MIN_RECOMMENDED_TRAIN} recommended",
            kept.len()
        );
    }
    Ok((kept, s_obs, window))
}

/// PIT datasets for several coordinates from one simulated batch, with
/// `s(y_obs)`.
pub fn windowed_datasets(
    model: &dyn GenerativeModel,
    approx: &dyn ApproxPosterior,
    y_obs: &[f64],
    coords: &[usize],
    cfg: &FitConfig,
) -> Result<(Vec<QDataset>, Vec<f64>)> {
    let (kept, s_obs, window) = windowed_batch(model, y_obs, cfg)?;
    let data = compute_q_multi(&kept, approx, coords, cfg.eps_clip).stage("pit")?;
    let data = data.into_iter().map(|d| d.with_window(Some(window.clone()))).collect();
    Ok((data, s_obs))
}

/// Trains on a prepared PIT dataset and freezes the map at `s_obs`.
pub fn fit_dataset(data: &QDataset, s_obs: &[f64], coord: usize, cfg: &FitConfig) -> Result<(DistortionMap, TrainReport)> {
    let net_cfg = cfg.with_input_dim(data.input_dim());
    let (net, report) = train(data, &net_cfg, &cfg.train).stage("train")?;
    let map = DistortionMap::new(net, s_obs.to_vec(), coord, data.window.clone(), report.n_train).stage("evaluate")?;
    Ok((map, report))
}

/// Simulate, window, transform and fit: the estimated distortion map of
/// coordinate `coord` at `y_obs`.
pub fn fit_distortion(
    model: &dyn GenerativeModel,
    approx: &dyn ApproxPosterior,
    y_obs: &[f64],
    coord: usize,
    cfg: &FitConfig,
) -> Result<(DistortionMap, TrainReport)> {
    let (mut data, s_obs) = windowed_datasets(model, approx, y_obs, &[coord], cfg)?;
    fit_dataset(&data.remove(0), &s_obs, coord, cfg)
}

/// Joint distortion of two coordinates: the marginal map of `j1` and a
/// conditional map of `j2` whose network also takes `x1` as input.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateDistortion {
    pub marginal_map: DistortionMap,
    pub conditional_net: NetParams,
    /// The approximation at `y_obs`, used for `G⁻¹` of coordinate `j1`.
    pub posterior_obs: PosteriorAt,
    pub coords: (usize, usize),
}

impl BivariateDistortion {
    /// Beta parameters of the conditional map at `(x1, s_obs)`.
    pub fn conditional_params(&self, x1: f64) -> Result<BetaParams> {
        let mut input = Vec::with_capacity(self.marginal_map.s_obs.len() + 1);
        input.push(x1);
        input.extend_from_slice(&self.marginal_map.s_obs);
        forward(&self.conditional_net, &input)
    }

    /// `d̂(q1, q2) = d̂_{G⁻¹(q1), y_obs}(q2) · d̂_{y_obs}(q1)`.
    pub fn density(&self, q1: f64, q2: f64) -> Result<f64> {
        let marginal = self.marginal_map.eval_density(q1)?;
        let x1 = self.posterior_obs.inv_cdf(self.coords.0, q1)?;
        let cond = self.conditional_params(x1)?;
        Ok(Distortion::density(&cond, q2)? * marginal)
    }

    pub fn surface(&self) -> Result<SurfaceGrid> {
        let q = SurfaceGrid::nodes();
        let mut values = Vec::with_capacity(q.len());
        for &q1 in &q {
            let marginal = self.marginal_map.eval_density(q1)?;
            let x1 = self.posterior_obs.inv_cdf(self.coords.0, q1)?;
            let cond = self.conditional_params(x1)?;
            let row = q
                .iter()
                .map(|&q2| Ok(Distortion::density(&cond, q2)? * marginal))
                .collect::<Result<Vec<f64>>>()?;
            values.push(row);
        }
        Ok(SurfaceGrid { q, values })
    }
}

/// Fits both networks of a [`BivariateDistortion`] from one simulated batch.
pub fn fit_bivariate(
    model: &dyn GenerativeModel,
    approx: &dyn ApproxPosterior,
    y_obs: &[f64],
    coords: (usize, usize),
    cfg: &FitConfig,
) -> Result<(BivariateDistortion, [TrainReport; 2])> {
    let (j1, j2) = coords;
    let posterior_obs = approx.at(y_obs).stage("approximation")?;
    if !posterior_obs.has_conditional() {
        return Err(Error::invalid("approximation has no conditional CDF")).stage("approximation");
    }
    let (kept, s_obs, window) = windowed_batch(model, y_obs, cfg)?;
    let first = compute_q_multi(&kept, approx, &[j1], cfg.eps_clip)
        .stage("pit")?
        .remove(0)
        .with_window(Some(window.clone()));
    let second = compute_conditional_q(&kept, approx, j1, j2, cfg.eps_clip)
        .stage("pit")?
        .with_window(Some(window));
    let (marginal_map, r1) = fit_dataset(&first, &s_obs, j1, cfg)?;
    let net_cfg = cfg.with_input_dim(second.input_dim());
    let (conditional_net, r2) = train(&second, &net_cfg, &cfg.train).stage("train")?;
    let biv = BivariateDistortion {
        marginal_map,
        conditional_net,
        posterior_obs,
        coords,
    };
    Ok((biv, [r1, r2]))
}

/// Distortion surface on a cell-centred `51 × 51` grid,
/// `values[i][j] = d̂(q[i], q[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub q: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    pub fn nodes() -> Vec<f64> {
        (0..SURFACE_POINTS)
            .map(|k| (k as f64 + 0.5) / SURFACE_POINTS as f64)
            .collect()
    }

    /// Integral over the unit square, iterated over rows then columns.
    ///
    /// Interior cells use the midpoint rule. Densities may diverge like a
    /// power of the distance to an edge, so each edge cell is integrated
    /// exactly under the power law through its node and the next one in.
    pub fn integral(&self) -> f64 {
        let rows: Vec<f64> = self.values.iter().map(|r| integrate_cells(r)).collect();
        integrate_cells(&rows)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "q1,q2,d")?;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_real(self.q[i]), fmt_real(self.q[j]), fmt_real(*v))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let rows = read_csv_rows(input, &["q1", "q2", "d"])?;
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n == 0 || n * n != rows.len() {
            return Err(Error::parse(1, "surface rows do not form a square grid"));
        }
        let q: Vec<f64> = rows.iter().take(n).map(|r| r[1]).collect();
        let values = rows.chunks(n).map(|c| c.iter().map(|r| r[2]).collect()).collect();
        Ok(SurfaceGrid { q, values })
    }
}

/// Integral over `[0, 1]` of a function sampled at `n` cell centres.
fn integrate_cells(f: &[f64]) -> f64 {
    let n = f.len();
    let h = 1.0 / n as f64;
    if n < 4 {
        return f.iter().sum::<f64>() * h;
    }
    let interior: f64 = f[1..n - 1].iter().sum::<f64>() * h;
    // With f(t) = c·t^(-α), t the distance to the edge and nodes at h/2 and
    // 3h/2, α = ln(f₀/f₁)/ln 3 and the cell integral is c·h^(1-α)/(1-α).
    let edge = |f0: f64, f1: f64| {
        if f0 > f1 && f1 > 0.0 {
            let alpha = (f0 / f1).ln() / 3f64.ln();
            if alpha < 0.95 {
                let c = f0 * (0.5 * h).powf(alpha);
                return c * h.powf(1.0 - alpha) / (1.0 - alpha);
            }
        }
        f0 * h
    };
    interior + edge(f[0], f[1]) + edge(f[n - 1], f[n - 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationKind {
    Convergence,
    Blocks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub kind: ValidationKind,
    /// Training-set size behind each curve.
    pub sizes: Vec<usize>,
    pub curves: Vec<DistortionCurve>,
    /// Successive sup-changes (convergence) or all pairwise sup-distances
    /// in `(0,1), (0,2), …, (1,2), …` order (blocks).
    pub distances: Vec<f64>,
    /// Per grid point, the largest change between successive curves.
    pub per_q_change: Vec<f64>,
    /// The tested quantity: the last successive change, or the largest
    /// pairwise distance.
    pub statistic: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Fits each dataset independently, on scoped threads, keeping input order.
fn refit_all(datasets: &[QDataset], s_obs: &[f64], coord: usize, cfg: &FitConfig) -> Result<Vec<DistortionCurve>> {
    let results: Vec<Result<DistortionCurve>> = std::thread::scope(|scope| {
        let handles: Vec<_> = datasets
            .iter()
            .map(|d| scope.spawn(move || fit_dataset(d, s_obs, coord, cfg)?.0.curve()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("refit thread panicked"))))
            .collect()
    });
    results.into_iter().collect()
}

fn per_q_change(curves: &[DistortionCurve]) -> Vec<f64> {
    (0..CURVE_POINTS)
        .map(|i| {
            curves
                .windows(2)
                .map(|w| (w[1].cdf[i] - w[0].cdf[i]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Refits on nested prefixes of `data` of sizes `checkpoints` (increasing,
/// at least three, the last at most `data.len()`), and passes when the last
/// successive sup-change is within `tolerance`.
pub fn validate_convergence(
    data: &QDataset,
    s_obs: &[f64],
    coord: usize,
    checkpoints: &[usize],
    cfg: &FitConfig,
    tolerance: f64,
) -> Result<ValidationReport> {
    if checkpoints.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || *checkpoints.last().unwrap() > data.len() {
        return Err(Error::invalid("checkpoints must increase and fit inside the dataset"));
    }
    let prefixes = checkpoints
        .iter()
        .map(|&n| data.slice(0..n))
        .collect::<Result<Vec<_>>>()?;
    let curves = refit_all(&prefixes, s_obs, coord, cfg)?;
    let distances: Vec<f64> = curves.windows(2).map(|w| w[1].sup_distance(&w[0])).collect();
    let statistic = *distances.last().unwrap();
    Ok(ValidationReport {
        kind: ValidationKind::Convergence,
        sizes: checkpoints.to_vec(),
        per_q_change: per_q_change(&curves),
        curves,
        distances,
        statistic,
        tolerance,
        passed: statistic <= tolerance,
    })
}

/// Minimum records per block in [`validate_blocks`].
pub const MIN_BLOCK_SIZE: usize = 1000;

/// Splits `data` into `n_blocks` consecutive blocks, refits each with the
/// same training configuration, and passes when every pairwise sup-distance
/// is within `tolerance`.
pub fn validate_blocks(
    data: &QDataset,
    s_obs: &[f64],
    coord: usize,
    n_blocks: usize,
    cfg: &FitConfig,
    tolerance: f64,
) -> Result<ValidationReport> {
    if n_blocks < 2 {
        return Err(Error::invalid("need at least 2 blocks"));
    }
    let size = data.len() / n_blocks;
    if size < MIN_BLOCK_SIZE {
        return Err(Error::invalid(format!(
            "blocks of {size} records are below the minimum of {MIN_BLOCK_SIZE}"
        )));
    }
    let blocks = (0..n_blocks)
        .map(|b| data.slice(b * size..(b + 1) * size))
        .collect::<Result<Vec<_>>>()?;
    let curves = refit_all(&blocks, s_obs, coord, cfg)?;
    let mut distances = Vec::new();
    for i in 0..n_blocks {
        for j in i + 1..n_blocks {
            distances.push(curves[i].sup_distance(&curves[j]));
        }
    }
    let statistic = distances.iter().copied().fold(0.0, f64::max);
    Ok(ValidationReport {
        kind: ValidationKind::Blocks,
        sizes: vec![size; n_blocks],
        per_q_change: per_q_change(&curves),
        curves,
        distances,
        statistic,
        tolerance,
        passed: statistic <= tolerance,
    })
}

/// `KL(p ‖ q) = ∫ p log(p/q)` from the density columns of two curves.
///
/// Trapezoid rule between the interior grid points. On the two end cells the
/// integrand is modelled as `α + β log(distance to the boundary)` through its
/// values at the clamped boundary point and the first interior point, which
/// integrates the logarithmic boundary behaviour of Beta densities exactly.
pub fn kl_between_curves(p: &DistortionCurve, q: &DistortionCurve) -> Result<f64> {
    if p.density.len() != q.density.len() || p.density.len() < 4 {
        return Err(Error::DimensionMismatch {
            expected: p.density.len(),
            got: q.density.len(),
        });
    }
    let n = p.density.len();
    let mut f = Vec::with_capacity(n);
    for (i, (&a, &b)) in p.density.iter().zip(&q.density).enumerate() {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "density must be positive on the grid".into(),
            });
        }
        f.push(if a == b { 0.0 } else { a * (a / b).ln() });
    }
    let h = p.q[1] - p.q[0];
    let interior: f64 = (1..n - 2).map(|i| 0.5 * h * (f[i] + f[i + 1])).sum();
    let end_cell = |f_edge: f64, f_in: f64| {
        let (e, t) = (DENSITY_MARGIN, h);
        let beta = (f_in - f_edge) / (t.ln() - e.ln());
        let alpha = f_edge - beta * e.ln();
        let antiderivative = |x: f64| alpha * x + beta * (x * x.ln() - x);
        antiderivative(t) - antiderivative(e)
    };
    Ok(interior + end_cell(f[0], f[1]) + end_cell(f[n - 1], f[n - 2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::betamdn::BetaComponent;
    use crate::special::{digamma, norm_cdf, norm_ppf};

    fn beta(a: f64, b: f64) -> BetaParams {
        BetaParams::single(a, b)
    }

    #[test]
    fn beta_map_values() {
        let id = beta(1.0, 1.0);
        for q in [0.0, 0.25, 0.5, 1.0] {
            assert!((Distortion::cdf(&id, q).unwrap() - q).abs() < 1e-15);
        }
        assert!((Distortion::cdf(&beta(2.0, 2.0), 0.5).unwrap() - 0.5).abs() < 1e-14);
        // 1 − (1−q)^6 − 6q(1−q)^5 at q = 1/4
        let exact = 1.0 - 0.75f64.powi(6) - 6.0 * 0.25 * 0.75f64.powi(5);
        assert!((Distortion::cdf(&beta(2.0, 5.0), 0.25).unwrap() - exact).abs() < 1e-10);
        assert!((exact - 0.46606).abs() < 1e-5);
        assert!((Distortion::density(&beta(2.0, 2.0), 0.5).unwrap() - 1.5).abs() < 1e-12);
        assert!((Distortion::density(&beta(2.0, 5.0), 0.25).unwrap() - 2.373046875).abs() < 1e-10);
        assert!(Distortion::density(&id, 0.0).is_err());
        assert!(Distortion::cdf(&id, 1.5).is_err());
    }

    #[test]
    fn curve_from_beta_has_exact_ends() {
        let c = DistortionCurve::from_map(&beta(0.5, 3.0)).unwrap();
        assert_eq!(c.q.len(), CURVE_POINTS);
        assert_eq!(c.cdf[0], 0.0);
        assert_eq!(c.cdf[CURVE_POINTS - 1], 1.0);
        assert!(c.cdf.windows(2).all(|w| w[0] <= w[1]));
        assert!(c.density.iter().all(|&d| d >= 0.0 && d.is_finite()));
        assert!((c.eval_cdf(0.0025) - 0.5 * (c.cdf[0] + c.cdf[1])).abs() < 1e-15);
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = DistortionCurve::from_map(&beta(2.0, 5.0)).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"q,D,d\n"));
        assert_eq!(DistortionCurve::read_csv(&buf[..]).unwrap(), c);
        assert!(DistortionCurve::read_csv("q,D\n0,0\n".as_bytes()).is_err());
        assert!(DistortionCurve::read_csv("q,D,d\n0,zero,1\n".as_bytes()).is_err());
    }

    #[test]
    fn ecdf_curve_matches_sample() {
        let sample: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let c = DistortionCurve::from_sorted_sample(&sample);
        assert!(c.sup_distance_to(|q| q) <= 1e-3 + 1e-12);
        assert!(c.density[100] > 0.9 && c.density[100] < 1.1);
    }

    #[test]
    fn kl_closed_forms() {
        let uniform = DistortionCurve::from_map(&beta(1.0, 1.0)).unwrap();
        let b22 = DistortionCurve::from_map(&beta(2.0, 2.0)).unwrap();
        assert!(kl_between_curves(&uniform, &uniform).unwrap().abs() < 1e-10);
        let forward = kl_between_curves(&uniform, &b22).unwrap();
        assert!((forward - (2.0 - 6f64.ln())).abs() < 2e-3, "{forward}");
        let backward = kl_between_curves(&b22, &uniform).unwrap();
        let exact = 6f64.ln() + 2.0 * (digamma(2.0) - digamma(4.0));
        assert!((backward - exact).abs() < 2e-3, "{backward} vs {exact}");
        assert!((exact - 0.1252).abs() < 2e-4);
        assert!((forward - backward).abs() > 0.05);
    }

    #[test]
    fn kl_rejects_nonpositive_density() {
        let uniform = DistortionCurve::identity();
        let mut bad = uniform.clone();
        bad.density[10] = 0.0;
        assert!(kl_between_curves(&uniform, &bad).is_err());
    }

    #[test]
    fn closed_form_map_of_overdispersion() {
        let r2 = 2f64.sqrt();
        let map = ClosedForm {
            cdf: |q: f64| norm_cdf(r2 * norm_ppf(q)),
            density: |q: f64| {
                let z = norm_ppf(q);
                r2 * (-0.5 * z * z).exp()
            },
        };
        assert!((map.cdf(0.8).unwrap() - 0.883).abs() < 1e-3);
        assert!((map.density(0.5).unwrap() - r2).abs() < 1e-12);
    }

    #[test]
    fn surface_grid_csv_and_integral() {
        let q = SurfaceGrid::nodes();
        let values = vec![vec![1.0; q.len()]; q.len()];
        let s = SurfaceGrid { q, values };
        assert!((s.integral() - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SurfaceGrid::read_csv(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert!(SurfaceGrid::read_csv("q1,q2,d\n0.5,0.5,1\n0.5,0.6,1\n".as_bytes()).is_err());
    }

    #[test]
    fn surface_integral_handles_edge_singularities() {
        let q = SurfaceGrid::nodes();
        let arcsine = |t: f64| 1.0 / (std::f64::consts::PI * (t * (1.0 - t)).sqrt());
        let values = q.iter().map(|&a| q.iter().map(|&b| arcsine(a) * arcsine(b)).collect()).collect();
        let s = SurfaceGrid { q, values };
        let total = s.integral();
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn mixture_map_is_a_distortion() {
        let m = BetaParams {
            components: vec![
                BetaComponent { weight: 0.3, a: 0.5, b: 0.5 },
                BetaComponent { weight: 0.7, a: 3.0, b: 2.0 },
            ],
        };
        let c = DistortionCurve::from_map(&m).unwrap();
        assert!(c.cdf.windows(2).all(|w| w[0] < w[1]));
    }
}
