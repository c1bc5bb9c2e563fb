//! Random-walk Metropolis for exact posteriors, and the brute-force exact
//! distortion map built on it.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::approximators::ApproxPosterior;
use crate::distortion::DistortionCurve;
use crate::error::{Error, Result};
use crate::generative::{stream_rng, GenerativeModel, SimBatch, SimPair};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_steps: usize,
    pub burn_in: usize,
    /// Proposal sd per coordinate.
    pub step_sd: Vec<f64>,
    pub seed: u64,
    pub thin: usize,
}

impl ChainConfig {
    pub fn new(n_steps: usize, burn_in: usize, step_sd: Vec<f64>, seed: u64) -> Self {
        ChainConfig {
            n_steps,
            burn_in,
            step_sd,
            seed,
            thin: 1,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.thin == 0 || self.burn_in >= self.n_steps {
            return Err(Error::invalid("need thin > 0 and burn_in < n_steps"));
        }
        if (self.n_steps - self.burn_in) / self.thin < 100 {
            return Err(Error::invalid("chain keeps fewer than 100 draws"));
        }
        if self.step_sd.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.step_sd.len(),
            });
        }
        if self.step_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("step_sd must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub config: ChainConfig,
}

impl Chain {
    /// Draws of coordinate `coord`.
    pub fn coordinate(&self, coord: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[coord]).collect()
    }

    /// Persists the chain in the [`SimBatch`] text layout, one draw per
    /// record with an empty summary.
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let batch = SimBatch {
            pairs: self
                .draws
                .iter()
                .map(|d| SimPair {
                    x: d.clone(),
                    y: Vec::new(),
                    s: Vec::new(),
                })
                .collect(),
            seed: self.config.seed,
            model_id: "rwm-chain".into(),
        };
        batch.write_to(out)
    }
}

/// Metropolis chain with isotropic Gaussian proposals.
pub fn rwm_sample(log_target: &dyn Fn(&[f64]) -> f64, init: &[f64], config: &ChainConfig) -> Result<Chain> {
    config.validate(init.len())?;
    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            what: "log target at the initial point".into(),
        });
    }
    let mut rng = stream_rng(config.seed, 0x726d);
    let mut proposal = vec![0.0; init.len()];
    let mut accepted = 0;
    let mut draws = Vec::with_capacity((config.n_steps - config.burn_in) / config.thin);
    for step in 0..config.n_steps {
        for (j, p) in proposal.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = current[j] + config.step_sd[j] * z;
        }
        let lp = log_target(&proposal);
        if lp.is_nan() {
            return Err(Error::NonFinite {
                index: step,
                what: "log target during sampling".into(),
            });
        }
        let u: f64 = rng.random();
        if u.ln() < lp - current_lp {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
        }
        if step >= config.burn_in && (step - config.burn_in) % config.thin == 0 {
            draws.push(current.clone());
        }
    }
    Ok(Chain {
        draws,
        acceptance_rate: accepted as f64 / config.n_steps as f64,
        accepted,
        config: config.clone(),
    })
}

/// Tunes a common proposal scale, starting from `2.4/√d` times `scale`, by
/// halving or doubling until a pilot run accepts between 20% and 50%.
pub fn tune_step(log_target: &dyn Fn(&[f64]) -> f64, init: &[f64], scale: &[f64], seed: u64) -> Result<Vec<f64>> {
    let d = init.len() as f64;
    let mut factor = 2.4 / d.sqrt();
    for round in 0..20 {
        let step: Vec<f64> = scale.iter().map(|s| s * factor).collect();
        let cfg = ChainConfig::new(2000, 0, step.clone(), seed.wrapping_add(round));
        let chain = rwm_sample(log_target, init, &cfg)?;
        if chain.acceptance_rate < 0.2 {
            factor /= 2.0;
        } else if chain.acceptance_rate > 0.5 {
            factor *= 2.0;
        } else {
            return Ok(step);
        }
    }
    Ok(scale.iter().map(|s| s * factor).collect())
}

/// Brute-force exact distortion map at `y`: the ECDF of `G_y(X_coord)` for
/// `X` drawn from the exact posterior, on the standard curve grid.
///
/// Uses the model's closed-form posterior sampler when it has one, otherwise
/// a tuned random-walk Metropolis chain started at the approximation's
/// median. `config` supplies the seed, burn-in and thinning; the chain length
/// is set to yield `n_draws` draws.
pub fn exact_distortion_oracle(
    model: &dyn GenerativeModel,
    approx: &dyn ApproxPosterior,
    y: &[f64],
    coord: usize,
    n_draws: usize,
    config: &ChainConfig,
) -> Result<DistortionCurve> {
    let draws = exact_posterior_draws(model, approx, y, n_draws, config)?;
    let post = approx.at(y)?;
    let mut q = draws
        .iter()
        .map(|x| post.cdf(coord, x[coord]))
        .collect::<Result<Vec<f64>>>()?;
    q.sort_by(f64::total_cmp);
    Ok(DistortionCurve::from_sorted_sample(&q))
}

/// Exact posterior draws at `y`, closed form when available.
pub fn exact_posterior_draws(
    model: &dyn GenerativeModel,
    approx: &dyn ApproxPosterior,
    y: &[f64],
    n_draws: usize,
    config: &ChainConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream_rng(config.seed, 0x6f72);
    if let Some(draws) = model.sample_exact_posterior(y, n_draws, &mut rng) {
        return Ok(draws);
    }
    if model.exact_log_posterior(&vec![0.0; model.param_dim()], y).is_none() {
        return Err(Error::invalid("model has no exact posterior"));
    }
    let target = |x: &[f64]| model.exact_log_posterior(x, y).unwrap_or(f64::NAN);
    let post = approx.at(y)?;
    let dim = model.param_dim();
    let init = (0..dim)
        .map(|j| post.inv_cdf(j, 0.5))
        .collect::<Result<Vec<f64>>>()?;
    let scale = (0..dim)
        .map(|j| Ok(post.inv_cdf(j, 0.841_344_746)? - post.inv_cdf(j, 0.5)?))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 })
        .collect::<Vec<f64>>();
    let step = tune_step(&target, &init, &scale, config.seed)?;
    let thin = config.thin.max(1);
    let chain_cfg = ChainConfig {
        n_steps: config.burn_in + n_draws * thin,
        burn_in: config.burn_in,
        step_sd: step,
        seed: config.seed,
        thin,
    };
    Ok(rwm_sample(&target, &init, &chain_cfg)?.draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximators::{exact_conjugate, mis_specified_gaussian};
    use crate::generative::gaussian_conjugate_model;
    use crate::special::{norm_cdf, norm_ppf};

    fn std_normal(x: &[f64]) -> f64 {
        -0.5 * x[0] * x[0]
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = ChainConfig::new(100_000, 1000, vec![2.4], 3);
        let chain = rwm_sample(&std_normal, &[0.0], &cfg).unwrap();
        let xs = chain.coordinate(0);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        assert!(chain.acceptance_rate > 0.3 && chain.acceptance_rate < 0.6);
        assert_eq!(chain.accepted as f64 / 100_000.0, chain.acceptance_rate);
    }

    #[test]
    fn chain_is_deterministic() {
        let cfg = ChainConfig::new(1000, 100, vec![1.0], 8);
        let a = rwm_sample(&std_normal, &[0.5], &cfg).unwrap();
        let b = rwm_sample(&std_normal, &[0.5], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_errors() {
        let cfg = ChainConfig::new(1000, 100, vec![1.0], 8);
        let bad = |_: &[f64]| f64::NEG_INFINITY;
        assert!(rwm_sample(&bad, &[0.0], &cfg).is_err());
        let nan_later = |x: &[f64]| if x[0].abs() > 0.1 { f64::NAN } else { 0.0 };
        assert!(matches!(rwm_sample(&nan_later, &[0.0], &cfg), Err(Error::NonFinite { .. })));
        let short = ChainConfig::new(150, 100, vec![1.0], 8);
        assert!(rwm_sample(&std_normal, &[0.0], &short).is_err());
    }

    #[test]
    fn tuning_lands_in_target_band() {
        let step = tune_step(&std_normal, &[0.0], &[20.0], 4).unwrap();
        let chain = rwm_sample(&std_normal, &[0.0], &ChainConfig::new(5000, 0, step, 5)).unwrap();
        assert!(chain.acceptance_rate > 0.15 && chain.acceptance_rate < 0.55);
    }

    #[test]
    fn oracle_with_exact_approx_is_identity() {
        let model = gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap();
        let approx = exact_conjugate(&model);
        let cfg = ChainConfig::new(1000, 0, vec![1.0], 11);
        let curve = exact_distortion_oracle(&model, &approx, &[0.4], 0, 100_000, &cfg).unwrap();
        let sup = curve.sup_distance_to(|q| q);
        assert!(sup < 0.02, "sup {sup}");
    }

    #[test]
    fn oracle_recovers_closed_form_maps() {
        let model = gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap();
        let cfg = ChainConfig::new(1000, 0, vec![1.0], 12);
        let wide = mis_specified_gaussian(&model, 0.0, 2f64.sqrt()).unwrap();
        let curve = exact_distortion_oracle(&model, &wide, &[-0.3], 0, 100_000, &cfg).unwrap();
        let sup = curve.sup_distance_to(|q| norm_cdf(2f64.sqrt() * norm_ppf(q)));
        assert!(sup < 0.02, "sup {sup}");
        assert!((curve.eval_cdf(0.8) - 0.883).abs() < 0.01);

        let shifted = mis_specified_gaussian(&model, 0.5, 1.0).unwrap();
        let curve = exact_distortion_oracle(&model, &shifted, &[1.0], 0, 100_000, &cfg).unwrap();
        assert!((curve.eval_cdf(0.5) - 0.760).abs() < 0.01);
    }

    #[test]
    fn mcmc_oracle_matches_closed_form_oracle() {
        // Hide the closed form so the RWM path is exercised.
        struct NoClosedForm(crate::generative::ConjugateGaussian);
        impl GenerativeModel for NoClosedForm {
            fn model_id(&self) -> String {
                "hidden".into()
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn summary_dim(&self) -> usize {
                1
            }
            fn sample_prior(&self, rng: &mut crate::generative::SimRng) -> Vec<f64> {
                self.0.sample_prior(rng)
            }
            fn sample_data(&self, x: &[f64], rng: &mut crate::generative::SimRng) -> Result<Vec<f64>> {
                self.0.sample_data(x, rng)
            }
            fn summary(&self, y: &[f64]) -> Vec<f64> {
                y.to_vec()
            }
            fn exact_log_posterior(&self, x: &[f64], y: &[f64]) -> Option<f64> {
                self.0.exact_log_posterior(x, y)
            }
        }
        let inner = gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap();
        let model = NoClosedForm(inner.clone());
        let approx = mis_specified_gaussian(&inner, 0.0, 0.5).unwrap();
        let cfg = ChainConfig {
            thin: 5,
            ..ChainConfig::new(1000, 2000, vec![1.0], 13)
        };
        let curve = exact_distortion_oracle(&model, &approx, &[0.0], 0, 40_000, &cfg).unwrap();
        let sup = curve.sup_distance_to(|q| norm_cdf(0.5 * norm_ppf(q)));
        assert!(sup < 0.03, "sup {sup}");
    }

    #[test]
    fn doubling_draws_stays_inside_dkw_band() {
        let model = gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap();
        let approx = mis_specified_gaussian(&model, 0.2, 0.8).unwrap();
        let cfg = ChainConfig::new(1000, 0, vec![1.0], 14);
        let a = exact_distortion_oracle(&model, &approx, &[0.0], 0, 20_000, &cfg).unwrap();
        let b = exact_distortion_oracle(&model, &approx, &[0.0], 0, 40_000, &cfg).unwrap();
        // DKW at 99%: eps = sqrt(ln(2/0.01) / (2n)) for the smaller sample
        let eps = ((2.0f64 / 0.01).ln() / (2.0 * 20_000.0)).sqrt();
        assert!(a.sup_distance(&b) <= eps, "{} > {eps}", a.sup_distance(&b));
        assert!(a.cdf.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(a.cdf[0], 0.0);
        assert_eq!(*a.cdf.last().unwrap(), 1.0);
    }
}
