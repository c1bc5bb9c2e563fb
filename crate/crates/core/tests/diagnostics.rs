mod common;

use distmap::approximators::{compute_q, mis_specified_gaussian, vi_logistic, SignFlipGaussian, DEFAULT_EPS_CLIP};
use distmap::baselines::{marginal_histogram, RankHistogram};
use distmap::generative::{gaussian_conjugate_model, sample_generative, stream_rng, GenerativeModel, LogisticModel};
use distmap::samplers::{rwm_sample, tune_step, ChainConfig};
use distmap::special::{norm_cdf, norm_ppf};

/// Bin heights of a PIT law with CDF `f`, compared bin by bin within five
/// binomial standard errors.
fn assert_heights_match(h: &RankHistogram, f: impl Fn(f64) -> f64) {
    let n = h.n as f64;
    let width = 1.0 / h.n_bins() as f64;
    for k in 0..h.n_bins() {
        let p = f(h.edges[k + 1]) - f(h.edges[k]);
        let se = (p * (1.0 - p) / n).sqrt() / width;
        let expected = p / width;
        assert!(
            (h.heights[k] - expected).abs() <= 5.0 * se,
            "bin {k}: {} vs {expected} (se {se})",
            h.heights[k]
        );
    }
}

#[test]
fn underdispersed_histogram_is_u_shaped() {
    let m = gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap();
    let approx = mis_specified_gaussian(&m, 0.0, 0.5).unwrap();
    let batch = sample_generative(&m, 100_000, 41).unwrap();
    let h = marginal_histogram(&compute_q(&batch, &approx, 0, DEFAULT_EPS_CLIP).unwrap(), 20).unwrap();
    let centre = 0.5 * (h.heights[9] + h.heights[10]);
    assert!(h.heights[0] > 1.5 * centre && h.heights[19] > 1.5 * centre);
    assert_heights_match(&h, |e| norm_cdf(0.5 * norm_ppf(e)));
}

#[test]
fn sign_flip_approximation_hides_its_bias_from_the_histogram() {
    let m = gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap();
    let delta = 0.4;
    let shift = delta * m.posterior_sd();
    let scale = SignFlipGaussian::flattening_scale(&m, shift);
    assert!((scale - (0.08f64).exp()).abs() < 1e-15);
    let approx = SignFlipGaussian {
        model: m.clone(),
        split: 0.0,
        mean_shift: shift,
        sd_scale: scale,
    };
    let batch = sample_generative(&m, 100_000, 42).unwrap();
    let h = marginal_histogram(&compute_q(&batch, &approx, 0, DEFAULT_EPS_CLIP).unwrap(), 20).unwrap();
    // Half the data sits on each side of the split, with the PIT law of a
    // ±δ-shifted, inflated Gaussian on each side.
    let pooled = |e: f64| {
        let u = norm_ppf(e);
        0.5 * (norm_cdf(scale * u + delta) + norm_cdf(scale * u - delta))
    };
    assert_heights_match(&h, pooled);
    assert!(h.max_deviation() <= 0.1, "{}", h.max_deviation());
    // At a single y above the split the map is far from the identity.
    let d_half = common::gaussian_map(delta, scale)(0.5);
    assert!((d_half - norm_cdf(delta)).abs() < 1e-15 && (d_half - 0.5).abs() >= 0.1);
}

#[test]
fn variational_sds_do_not_exceed_mcmc_sds() {
    let model = LogisticModel::new(LogisticModel::uniform_design(20, 3, 43), 2.0).unwrap();
    let mut rng = stream_rng(44, 0);
    let x = model.sample_prior(&mut rng);
    let y = model.sample_data(&x, &mut rng).unwrap();
    let fit = vi_logistic(&y, &model.design, model.prior_var).unwrap();
    let target = |b: &[f64]| model.exact_log_posterior(b, &y).unwrap();
    let scale: Vec<f64> = (0..3).map(|j| fit.cov[j][j].sqrt()).collect();
    let step = tune_step(&target, &fit.mean, &scale, 45).unwrap();
    let chain = rwm_sample(&target, &fit.mean, &ChainConfig::new(400_000, 20_000, step, 46)).unwrap();
    for j in 0..3 {
        let draws = chain.coordinate(j);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(scale[j] <= sd, "coordinate {j}: vi sd {} vs mcmc sd {sd}", scale[j]);
    }
}
