mod common;

use common::{gaussian_map, gaussian_map_density};
use distmap::approximators::{compute_q, exact_conjugate, mis_specified_gaussian, ApproxPosterior, QDataset, DEFAULT_EPS_CLIP};
use distmap::distortion::{
    fit_bivariate, fit_distortion, identity_map, kl_between_curves, recalibrated_cdf, recalibrated_logpdf, validate_blocks,
    validate_convergence, windowed_datasets, ClosedForm, DistortionCurve, FitConfig,
};
use distmap::generative::{gaussian_conjugate_model, sample_generative, ConjugateGaussian, GenerativeModel};
use distmap::samplers::{exact_distortion_oracle, ChainConfig};
use distmap::special::{norm_cdf, norm_logpdf};
use distmap::Error;

fn model() -> ConjugateGaussian {
    gaussian_conjugate_model(0.0, 1.0, 1.0).unwrap()
}

fn quick(n_sim: usize, keep: f64, seed: u64) -> FitConfig {
    let mut cfg = FitConfig::new(n_sim, keep, seed);
    cfg.train.patience = 8;
    cfg
}

#[test]
fn overdispersed_fit_recovers_closed_form_map() {
    let m = model();
    let r2 = 2f64.sqrt();
    let approx = mis_specified_gaussian(&m, 0.0, r2).unwrap();
    let y_obs = [0.4];
    let (map, _) = fit_distortion(&m, &approx, &y_obs, 0, &FitConfig::new(500_000, 0.1, 31)).unwrap();
    let exact = gaussian_map(0.0, r2);
    assert!((map.eval_cdf(0.8).unwrap() - 0.883).abs() <= 0.03);
    assert!((exact(0.8) - 0.883).abs() < 5e-4);
    let d_mid = map.eval_density(0.5).unwrap();
    assert!((d_mid - r2).abs() <= 0.1, "d(0.5) = {d_mid}");
    assert!(d_mid > map.eval_density(0.05).unwrap() && d_mid > map.eval_density(0.95).unwrap());
    assert!(map.eval_density(0.0).is_err());

    // Against the brute-force oracle rather than the closed form.
    let oracle = exact_distortion_oracle(&m, &approx, &y_obs, 0, 100_000, &ChainConfig::new(1000, 0, vec![1.0], 5)).unwrap();
    assert!(map.curve().unwrap().sup_distance(&oracle) <= 0.05);

    // The recalibrated density integrates to one.
    let post = approx.at(&y_obs).unwrap();
    let (lo, hi) = (post.inv_cdf(0, 1e-9).unwrap(), post.inv_cdf(0, 1.0 - 1e-9).unwrap());
    let mass = common::simpson(|x| recalibrated_logpdf(&map, &approx, &y_obs, 0, x).unwrap().exp(), lo, hi, 4000);
    assert!((mass - 1.0).abs() <= 1e-3, "mass {mass}");

    // KL(F, F̂) over x equals KL(D, D̂) over q.
    let mu = m.posterior_mean(&y_obs, 0);
    let sd = m.posterior_sd();
    let exact_logpdf = |x: f64| norm_logpdf((x - mu) / sd) - sd.ln();
    let kl_x = common::simpson(
        |x| {
            let lf = exact_logpdf(x);
            lf.exp() * (lf - recalibrated_logpdf(&map, &approx, &y_obs, 0, x).unwrap())
        },
        mu - 12.0 * sd,
        mu + 12.0 * sd,
        8000,
    );
    let exact_curve = DistortionCurve::from_fns(&exact, gaussian_map_density(0.0, r2));
    let kl_q = kl_between_curves(&exact_curve, &map.curve().unwrap()).unwrap();
    assert!((kl_x - kl_q).abs() <= 1e-3, "x-space {kl_x} vs q-space {kl_q}");
}

#[test]
fn recalibration_with_known_maps() {
    let m = model();
    let r2 = 2f64.sqrt();
    let approx = mis_specified_gaussian(&m, 0.0, r2).unwrap();
    let y_obs = [1.3];
    let post = approx.at(&y_obs).unwrap();
    let mu = m.posterior_mean(&y_obs, 0);
    let sd = m.posterior_sd();
    let exact_map = ClosedForm {
        cdf: gaussian_map(0.0, r2),
        density: gaussian_map_density(0.0, r2),
    };
    let mut last = 0.0;
    for i in 0..100 {
        let x = mu - 4.0 + 8.0 * i as f64 / 99.0;
        let g = post.cdf(0, x).unwrap();
        assert_eq!(recalibrated_cdf(&identity_map(), &approx, &y_obs, 0, x).unwrap(), g);
        let f_hat = recalibrated_cdf(&exact_map, &approx, &y_obs, 0, x).unwrap();
        assert!((f_hat - norm_cdf((x - mu) / sd)).abs() <= 1e-8, "x={x}");
        assert!(f_hat >= last);
        last = f_hat;
        let id_log = recalibrated_logpdf(&identity_map(), &approx, &y_obs, 0, x).unwrap();
        assert_eq!(id_log, post.logpdf(0, x).unwrap());
        if (x - mu).abs() < 2.5 {
            let lp = recalibrated_logpdf(&exact_map, &approx, &y_obs, 0, x).unwrap();
            let exact = norm_logpdf((x - mu) / sd) - sd.ln();
            assert!((lp - exact).abs() <= 1e-6, "x={x}: {lp} vs {exact}");
        }
    }
}

#[test]
fn identity_fit_and_convergence_check() {
    let m = model();
    let approx = exact_conjugate(&m);
    let cfg = quick(200_000, 0.1, 32);
    let (mut data, s_obs) = windowed_datasets(&m, &approx, &[-0.7], &[0], &cfg).unwrap();
    let data = data.remove(0);
    let report = validate_convergence(&data, &s_obs, 0, &[1000, 4000, 16_000], &cfg, 0.05).unwrap();
    for curve in &report.curves {
        assert!(curve.sup_distance_to(|q| q) <= 0.05);
    }
    assert!(report.passed);
    assert_eq!(report.distances.len(), 2);
    assert!(matches!(
        validate_convergence(&data, &s_obs, 0, &[16_000], &cfg, 0.05),
        Err(Error::InvalidArgument(_))
    ));
    assert!(validate_convergence(&data, &s_obs, 0, &[1000, 500, 4000], &cfg, 0.05).is_err());
}

#[test]
fn block_check_on_duplicated_and_mixed_data() {
    let m = model();
    let approx = mis_specified_gaussian(&m, 0.0, 0.5).unwrap();
    let cfg = quick(20_000, 0.05, 33);
    let (mut data, s_obs) = windowed_datasets(&m, &approx, &[0.2], &[0], &cfg).unwrap();
    let one = data.remove(0);
    assert_eq!(one.len(), 1000);
    let tripled = QDataset::new(one.q.repeat(3), [one.inputs.clone(), one.inputs.clone(), one.inputs.clone()].concat()).unwrap();
    let report = validate_blocks(&tripled, &s_obs, 0, 3, &cfg, 0.1).unwrap();
    assert!(report.distances.iter().all(|&d| d == 0.0));
    assert!(report.passed);
    assert!(validate_blocks(&one, &s_obs, 0, 2, &cfg, 0.1).is_err());

    // A block from a window where the approximation errs the other way.
    let shifted = mis_specified_gaussian(&m, 0.8, 1.0).unwrap();
    let (mut other, _) = windowed_datasets(&m, &shifted, &[0.2], &[0], &cfg).unwrap();
    let other = other.remove(0);
    let mixed = QDataset::new([one.q.clone(), other.q].concat(), [one.inputs.clone(), other.inputs].concat()).unwrap();
    let report = validate_blocks(&mixed, &s_obs, 0, 2, &cfg, 0.1).unwrap();
    assert!(!report.passed && report.statistic > 0.1, "{}", report.statistic);
}

#[test]
fn bivariate_fits() {
    let m = ConjugateGaussian::new(2, 0.0, 1.0, 1.0).unwrap();
    let y_obs = [0.3, -0.4];
    let cfg = quick(200_000, 0.1, 34);

    let exact = exact_conjugate(&m);
    let (biv, reports) = fit_bivariate(&m, &exact, &y_obs, (0, 1), &cfg).unwrap();
    assert!(reports[1].n_train > 0);
    assert!(biv.marginal_map.curve().unwrap().sup_distance_to(|q| q) <= 0.05);
    let post = exact.at(&y_obs).unwrap();
    for q1 in [0.1, 0.5, 0.9] {
        let x1 = post.inv_cdf(0, q1).unwrap();
        let cond = DistortionCurve::from_map(&biv.conditional_params(x1).unwrap()).unwrap();
        assert!(cond.sup_distance_to(|q| q) <= 0.05);
    }

    let narrow = mis_specified_gaussian(&m, 0.0, 0.5).unwrap();
    let (biv, _) = fit_bivariate(&m, &narrow, &y_obs, (0, 1), &cfg).unwrap();
    let d1 = |q: f64| biv.marginal_map.eval_density(q).unwrap();
    assert!(d1(0.05) > d1(0.5));
    let post = narrow.at(&y_obs).unwrap();
    let mut a_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut b_range = a_range;
    for k in 0..=18 {
        let x1 = post.inv_cdf(0, 0.05 + 0.05 * k as f64).unwrap();
        let c = biv.conditional_params(x1).unwrap();
        let d2 = |q: f64| c.pdf(q).unwrap();
        assert!(d2(0.05) > d2(0.5), "conditional at x1={x1} is not cup-shaped");
        let c = c.components[0];
        a_range = (a_range.0.min(c.a), a_range.1.max(c.a));
        b_range = (b_range.0.min(c.b), b_range.1.max(c.b));
    }
    assert!(a_range.1 - a_range.0 <= 0.2 && b_range.1 - b_range.0 <= 0.2, "{a_range:?} {b_range:?}");

    // Product structure against a separate marginal fit of the second coordinate.
    let (second, _) = fit_distortion(&m, &narrow, &y_obs, 1, &cfg).unwrap();
    let surface = biv.surface().unwrap();
    let n = surface.q.len();
    for i in n / 4..3 * n / 4 {
        for j in n / 4..3 * n / 4 {
            let product = d1(surface.q[i]) * second.eval_density(surface.q[j]).unwrap();
            let rel = (surface.values[i][j] - product).abs() / product;
            assert!(rel <= 0.15, "({i}, {j}): {} vs {product}", surface.values[i][j]);
        }
    }
}

#[test]
fn pipeline_errors_name_their_stage() {
    let m = model();
    let approx = exact_conjugate(&m);
    let bad_keep = FitConfig::new(1000, 0.0, 1);
    match fit_distortion(&m, &approx, &[0.0], 0, &bad_keep) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "window"),
        other => panic!("unexpected {other:?}"),
    }
    let mut bad_train = FitConfig::new(1000, 0.5, 1);
    bad_train.train.validation_fraction = 0.9;
    match fit_distortion(&m, &approx, &[0.0], 0, &bad_train) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "train"),
        other => panic!("unexpected {other:?}"),
    }
    match fit_distortion(&m, &approx, &[0.0], 3, &FitConfig::new(1000, 0.5, 1)) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "pit"),
        other => panic!("unexpected {other:?}"),
    }
    let biv = fit_bivariate(&m, &approx, &[0.0], (0, 1), &FitConfig::new(1000, 0.5, 1));
    assert!(biv.is_err());
}

#[test]
fn windowed_pit_is_uniform_for_exact_approximation() {
    let m = model();
    let batch = sample_generative(&m, 20_000, 35).unwrap();
    let data = compute_q(&batch, &exact_conjugate(&m), 0, DEFAULT_EPS_CLIP).unwrap();
    let mut q = data.q.clone();
    q.sort_by(f64::total_cmp);
    let n = q.len() as f64;
    let ks = q
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 1.628 / n.sqrt(), "KS {ks}");
    assert_eq!(m.summary(&[0.25]), vec![0.25]);
}
