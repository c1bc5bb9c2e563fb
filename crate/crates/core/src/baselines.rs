//! Averaged diagnostics to compare against: the pooled PIT histogram and
//! operational coverage of equal-tail credible intervals.

use std::io::Write;

use crate::approximators::{ApproxPosterior, QDataset};
use crate::error::{Error, Result};
use crate::io::fmt_real;

pub const DEFAULT_BINS: usize = 20;
/// Minimum exact-posterior draws for a Monte-Carlo coverage estimate.
pub const MIN_COVERAGE_DRAWS: usize = 1000;

/// Density-scaled histogram of PIT values pooled over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct RankHistogram {
    /// `n_bins + 1` uniform edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `count / (n · width)`; these integrate to one.
    pub heights: Vec<f64>,
    pub n: usize,
}

impl RankHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// `max_b |height_b − 1|`.
    pub fn max_deviation(&self) -> f64 {
        self.heights.iter().map(|h| (h - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_lo,bin_hi,height")?;
        for (b, h) in self.heights.iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                fmt_real(self.edges[b]),
                fmt_real(self.edges[b + 1]),
                fmt_real(*h)
            )?;
        }
        Ok(())
    }
}

/// Histogram of the `q` values of `data`, ignoring their summaries.
pub fn marginal_histogram(data: &QDataset, n_bins: usize) -> Result<RankHistogram> {
    histogram(&data.q, n_bins)
}

/// Density histogram of values in `[0, 1]`; needs at least `10·n_bins` values.
pub fn histogram(q: &[f64], n_bins: usize) -> Result<RankHistogram> {
    if n_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if q.len() < 10 * n_bins {
        return Err(Error::invalid(format!(
            "{} values are too few for {n_bins} bins (need {})",
            q.len(),
            10 * n_bins
        )));
    }
    let mut counts = vec![0usize; n_bins];
    for (i, &v) in q.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("value {i} = {v} is outside [0, 1]")));
        }
        counts[((v * n_bins as f64) as usize).min(n_bins - 1)] += 1;
    }
    let n = q.len();
    let width = 1.0 / n_bins as f64;
    Ok(RankHistogram {
        edges: (0..=n_bins).map(|b| b as f64 * width).collect(),
        heights: counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect(),
        counts,
        n,
    })
}

/// Equal-tail interval `(G⁻¹((1−α)/2), G⁻¹((1+α)/2))` of coordinate `coord`.
pub fn credible_interval(approx: &dyn ApproxPosterior, y: &[f64], coord: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {alpha}")));
    }
    let post = approx.at(y)?;
    let lo = post.inv_cdf(coord, 0.5 * (1.0 - alpha))?;
    let hi = post.inv_cdf(coord, 0.5 * (1.0 + alpha))?;
    if !(lo < hi) {
        return Err(Error::invalid(format!("degenerate interval ({lo}, {hi})")));
    }
    Ok((lo, hi))
}

/// What the exact posterior is known through.
pub enum ExactReference<'a> {
    /// Exact-posterior draws of the coordinate.
    Draws(&'a [f64]),
    /// Exact marginal CDF.
    Cdf(&'a dyn Fn(f64) -> f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageEstimate {
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
    pub coverage: f64,
    /// Binomial standard error; zero for a closed-form value.
    pub se: f64,
}

impl CoverageEstimate {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "alpha,lo,hi,coverage,se")?;
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_real(self.alpha),
            fmt_real(self.lo),
            fmt_real(self.hi),
            fmt_real(self.coverage),
            fmt_real(self.se)
        )?;
        Ok(())
    }
}

/// Exact posterior mass of `interval`.
pub fn operational_coverage(interval: (f64, f64), exact: ExactReference<'_>, alpha: f64) -> Result<CoverageEstimate> {
    let (lo, hi) = interval;
    if !(lo < hi) {
        return Err(Error::invalid(format!("interval ({lo}, {hi}) is empty")));
    }
    let (coverage, se) = match exact {
        ExactReference::Draws(draws) => {
            if draws.len() < MIN_COVERAGE_DRAWS {
                return Err(Error::invalid(format!(
                    "{} draws are too few (need {MIN_COVERAGE_DRAWS})",
                    draws.len()
                )));
            }
            let n = draws.len() as f64;
            let c = draws.iter().filter(|&&x| x >= lo && x <= hi).count() as f64 / n;
            (c, (c * (1.0 - c) / n).sqrt())
        }
        ExactReference::Cdf(cdf) => (cdf(hi) - cdf(lo), 0.0),
    };
    Ok(CoverageEstimate {
        alpha,
        lo,
        hi,
        coverage,
        se,
    })
}
