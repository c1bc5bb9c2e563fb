//! Resolution of a [`RunConfig`] into a runnable plan, and the commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use distmap::approximators::ApproxPosterior;
use distmap::baselines::{credible_interval, marginal_histogram, operational_coverage, ExactReference};
use distmap::betamdn::{Activation, NetConfig, TrainConfig};
use distmap::distortion::{
    fit_bivariate, fit_dataset, fit_distortion, recalibrated_logpdf, validate_blocks, validate_convergence,
    windowed_datasets, DistortionMap, FitConfig, ValidationReport,
};
use distmap::generative::{sample_generative, stream_rng, GenerativeModel};
use distmap::io::fmt_real;
use distmap::samplers::{exact_posterior_draws, ChainConfig};

use crate::config::{join_reals, RunConfig};
use crate::error::{AtStage, CliError, Result};
use crate::selectors::{ApproxSpec, Model, ModelSpec};
use crate::svg;

/// Points in `density.csv`.
pub const DENSITY_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Diagnose,
    Surface,
    Validate,
    Baselines,
    Demo,
}

impl Command {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "simulate" => Command::Simulate,
            "fit" => Command::Fit,
            "diagnose" => Command::Diagnose,
            "surface" => Command::Surface,
            "validate" => Command::Validate,
            "baselines" => Command::Baselines,
            "demo" => Command::Demo,
            "" => return Err(CliError::usage("no command given")),
            other => return Err(CliError::usage(format!("unknown command {other:?}"))),
        })
    }
}

pub const DEMO_CASES: &[&str] = &[
    "conjugate-overdispersed",
    "conjugate-underdispersed",
    "conjugate-shift",
    "conjugate-exact",
    "false-flat",
    "logistic-vi",
    "bivariate-underdispersed",
];

/// Writes the preset for a demo case into `cfg`.
pub fn apply_case(cfg: &mut RunConfig, case: &str) -> Result<()> {
    let conj = "conjugate:dim=1,prior_mean=0,prior_var=1,noise_var=1";
    let one_d = |cfg: &mut RunConfig, approx: &str| {
        cfg.set("model", "selector", conj);
        cfg.set("approx", "selector", approx);
        cfg.set("data", "y_obs", "0.5");
        cfg.set("data", "n_sim", "500000");
        cfg.set("data", "keep_frac", "0.1");
    };
    match case {
        "conjugate-overdispersed" => one_d(cfg, &format!("misspec:shift=0,scale={}", 2f64.sqrt())),
        "conjugate-underdispersed" => one_d(cfg, "misspec:shift=0,scale=0.5"),
        "conjugate-shift" => one_d(cfg, "misspec:shift=0.5,scale=1"),
        "conjugate-exact" => one_d(cfg, "exact"),
        "false-flat" => {
            // Shift of 0.4 exact-posterior sds, inflated so the pooled PIT
            // density is flat at 1/2.
            let delta = 0.4;
            let shift = delta / 2f64.sqrt();
            let scale = (0.5 * delta * delta).exp();
            cfg.set("model", "selector", conj);
            cfg.set("approx", "selector", format!("signflip:split=0,shift={shift},scale={scale}"));
            cfg.set("data", "y_obs", "1.5");
            cfg.set("data", "n_sim", "50000");
            cfg.set("data", "keep_frac", "1");
        }
        "logistic-vi" => {
            cfg.set("model", "selector", "logistic:n_obs=20,p_reg=3,design_seed=0,prior_var=2");
            cfg.set("approx", "selector", "vi");
            cfg.set("data", "n_sim", "100000");
            cfg.set("data", "keep_frac", "0.01");
        }
        "bivariate-underdispersed" => {
            cfg.set("model", "selector", "conjugate:dim=2,prior_mean=0,prior_var=1,noise_var=1");
            cfg.set("approx", "selector", "misspec:shift=0,scale=0.5");
            cfg.set("data", "y_obs", "0.3,-0.4");
            cfg.set("data", "coord2", "1");
            cfg.set("data", "n_sim", "200000");
            cfg.set("data", "keep_frac", "0.1");
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown demo case {other:?}; expected one of {}",
                DEMO_CASES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Everything a command needs, checked before any file is written.
pub struct Plan {
    pub command: Command,
    pub case: Option<String>,
    pub out: PathBuf,
    pub plots: bool,
    pub model: Model,
    pub approx: Arc<dyn ApproxPosterior>,
    pub y_obs: Vec<f64>,
    pub coord: usize,
    pub coord2: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub checkpoints: Vec<usize>,
    pub blocks: usize,
    pub conv_tol: f64,
    pub block_tol: f64,
    pub bins: usize,
    pub alpha: f64,
    pub n_draws: usize,
    /// Fully resolved configuration, written as the manifest.
    pub resolved: RunConfig,
}

fn require(cfg: &RunConfig, section: &str, key: &str, flag: &str) -> Result<()> {
    if cfg.is_set(section, key) {
        Ok(())
    } else {
        Err(CliError::usage(format!("missing required {flag} (or {section}.{key} in --config)")))
    }
}

impl Plan {
    pub fn resolve(mut cfg: RunConfig) -> Result<Self> {
        let command = Command::parse(cfg.get("run", "command"))?;
        let case = cfg.is_set("run", "case").then(|| cfg.get("run", "case").to_string());
        if command == Command::Demo && case.is_none() {
            return Err(CliError::usage("demo needs --case"));
        }
        require(&cfg, "run", "out", "--out")?;
        require(&cfg, "model", "selector", "--model")?;
        require(&cfg, "approx", "selector", "--approx")?;
        let seed = cfg.u64("run", "seed")?;
        let plots = cfg.bool("run", "plots")?;
        let model_spec = ModelSpec::parse(cfg.get("model", "selector"))?;
        let approx_spec = ApproxSpec::parse(cfg.get("approx", "selector"))?;
        let model = model_spec.build()?;
        let approx = approx_spec.build(&model, seed)?;
        cfg.set("model", "selector", model_spec.canonical());
        cfg.set("approx", "selector", approx_spec.canonical());

        let gm = model.as_dyn();
        let mut y_obs = cfg.reals("data", "y_obs")?;
        if y_obs.is_empty() {
            y_obs = default_y_obs(&model, seed)?;
        }
        let data_len = match &model {
            Model::Conjugate(m) => m.dim,
            Model::Logistic(m) => m.n_obs(),
        };
        if y_obs.len() != data_len {
            return Err(CliError::usage(format!(
                "y_obs has {} entries, the model's data has {data_len}",
                y_obs.len()
            )));
        }
        if y_obs.iter().any(|v| !v.is_finite()) {
            return Err(CliError::usage("y_obs entries must be finite"));
        }
        if let Model::Logistic(_) = model {
            if y_obs.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(CliError::usage("logistic y_obs entries must be 0 or 1"));
            }
        }
        cfg.set("data", "y_obs", join_reals(&y_obs));

        let coord = cfg.usize("data", "coord")?;
        let coord2 = cfg.usize("data", "coord2")?;
        if coord >= gm.param_dim() {
            return Err(CliError::usage(format!(
                "coord {coord} out of range for a {}-dimensional parameter",
                gm.param_dim()
            )));
        }
        let active: Command = if command == Command::Demo && case.as_deref() == Some("bivariate-underdispersed") {
            Command::Surface
        } else {
            command
        };
        if active == Command::Surface && (coord2 >= gm.param_dim() || coord2 == coord) {
            return Err(CliError::usage(format!(
                "surface needs a second coordinate distinct from {coord} below {}",
                gm.param_dim()
            )));
        }

        let keep = cfg.f64("data", "keep_frac")?;
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(CliError::usage(format!("keep_frac must lie in (0, 1], got {keep}")));
        }
        let n_sim = cfg.usize("data", "n_sim")?;
        if n_sim == 0 {
            return Err(CliError::usage("n_sim must be positive"));
        }
        let mut fit = FitConfig::new(n_sim, keep, seed);
        fit.standardize_window = cfg.bool("data", "standardize")?;
        fit.eps_clip = cfg.f64("data", "eps_clip")?;
        if !(fit.eps_clip > 0.0 && fit.eps_clip <= 0.01) {
            return Err(CliError::usage("eps_clip must lie in (0, 0.01]"));
        }
        fit.net = NetConfig {
            input_dim: gm.summary_dim(),
            hidden_widths: cfg.usizes("net", "hidden")?,
            n_components: cfg.usize("net", "components")?,
            activation: Activation::parse(cfg.get("net", "activation")).map_err(|e| CliError::usage(e.to_string()))?,
            param_floor: cfg.f64("net", "param_floor")?,
            init_seed: seed,
        };
        fit.net.validate().map_err(|e| CliError::usage(format!("net: {e}")))?;
        fit.train = TrainConfig {
            learning_rate: cfg.f64("train", "lr")?,
            batch_size: cfg.usize("train", "batch")?,
            max_epochs: cfg.usize("train", "epochs")?,
            validation_fraction: cfg.f64("train", "val_frac")?,
            patience: cfg.usize("train", "patience")?,
            seed,
        };
        fit.train.validate().map_err(|e| CliError::usage(format!("train: {e}")))?;

        let alpha = cfg.f64("baselines", "alpha")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::usage("alpha must lie in (0, 1)"));
        }
        Ok(Plan {
            command,
            case,
            out: PathBuf::from(cfg.get("run", "out")),
            plots,
            model,
            approx,
            y_obs,
            coord,
            coord2,
            seed,
            fit,
            checkpoints: cfg.usizes("validate", "checkpoints")?,
            blocks: cfg.usize("validate", "blocks")?,
            conv_tol: cfg.f64("validate", "conv_tol")?,
            block_tol: cfg.f64("validate", "block_tol")?,
            bins: cfg.usize("baselines", "bins")?,
            alpha,
            n_draws: cfg.usize("baselines", "n_draws")?,
            resolved: cfg,
        })
    }

    fn model(&self) -> &dyn GenerativeModel {
        self.model.as_dyn()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            n_steps: 0,
            burn_in: 5000,
            step_sd: Vec::new(),
            seed: self.seed,
            thin: 5,
        }
    }
}

/// Conjugate models default to the prior mean; logistic models to one
/// simulated data set.
fn default_y_obs(model: &Model, seed: u64) -> Result<Vec<f64>> {
    match model {
        Model::Conjugate(m) => Ok(vec![m.prior_mean; m.dim]),
        Model::Logistic(m) => {
            let mut rng = stream_rng(seed, 0x796f_6273);
            let x = m.sample_prior(&mut rng);
            m.sample_data(&x, &mut rng).at_stage("simulate")
        }
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> distmap::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w).at_stage("write")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Runs a resolved plan; the output directory is created here.
pub fn execute(plan: &Plan) -> Result<()> {
    fs::create_dir_all(&plan.out)?;
    write_text(&plan.path("manifest.txt"), &plan.resolved.to_manifest())?;
    match plan.command {
        Command::Simulate => simulate(plan),
        Command::Fit => fit(plan),
        Command::Diagnose => diagnose(plan),
        Command::Surface => surface(plan),
        Command::Validate => validate(plan),
        Command::Baselines => baselines(plan),
        Command::Demo => {
            if plan.case.as_deref() == Some("bivariate-underdispersed") {
                surface(plan)
            } else {
                diagnose(plan)?;
                coverage(plan)
            }
        }
    }
}

fn simulate(plan: &Plan) -> Result<()> {
    let batch = sample_generative(plan.model(), plan.fit.n_sim, plan.fit.sim_seed).at_stage("simulate")?;
    write_file(&plan.path("simbatch.txt"), |w| batch.write_to(w))?;
    println!("simulated {} pairs", batch.len());
    Ok(())
}

fn write_map(plan: &Plan, map: &DistortionMap) -> Result<()> {
    let curve = map.curve().at_stage("evaluate")?;
    write_file(&plan.path("curve.csv"), |w| curve.write_csv(w))?;
    write_file(&plan.path("net.txt"), |w| map.net.write_to(w))?;
    if plan.plots {
        write_text(&plan.path("curve.svg"), &svg::render_curve(&curve))?;
    }
    let c = &map.beta_params().components[0];
    println!(
        "coord {}: trained on {} pairs; D(0.5) = {:.4}; leading Beta({:.4}, {:.4})",
        map.coord,
        map.n_train,
        map.eval_cdf(0.5).at_stage("evaluate")?,
        c.a,
        c.b
    );
    Ok(())
}

fn fit(plan: &Plan) -> Result<()> {
    let (map, _) = fit_distortion(plan.model(), plan.approx.as_ref(), &plan.y_obs, plan.coord, &plan.fit)
        .at_stage("train")?;
    write_map(plan, &map)
}

fn diagnose(plan: &Plan) -> Result<()> {
    let (mut data, s_obs) = windowed_datasets(plan.model(), plan.approx.as_ref(), &plan.y_obs, &[plan.coord], &plan.fit)
        .at_stage("pit")?;
    let data = data.remove(0);
    let (map, _) = fit_dataset(&data, &s_obs, plan.coord, &plan.fit).at_stage("train")?;
    write_map(plan, &map)?;
    write_density(plan, &map)?;
    let hist = marginal_histogram(&data, plan.bins).at_stage("histogram")?;
    write_file(&plan.path("histogram.csv"), |w| hist.write_csv(w))?;
    println!("pooled histogram max deviation {:.4}", hist.max_deviation());
    Ok(())
}

/// `x, approx_pdf, recalibrated_pdf` between the approximation's 0.001 and
/// 0.999 quantiles. Skipped for approximations without a density.
fn write_density(plan: &Plan, map: &DistortionMap) -> Result<()> {
    let approx = plan.approx.as_ref();
    let post = approx.at(&plan.y_obs).at_stage("evaluate")?;
    let lo = post.inv_cdf(plan.coord, 1e-3).at_stage("evaluate")?;
    let hi = post.inv_cdf(plan.coord, 1.0 - 1e-3).at_stage("evaluate")?;
    if post.logpdf(plan.coord, lo).is_err() {
        log::warn!("approximation has no closed-form density; density.csv not written");
        return Ok(());
    }
    let mut text = String::from("x,approx_pdf,recalibrated_pdf\n");
    for i in 0..DENSITY_POINTS {
        let x = lo + (hi - lo) * i as f64 / (DENSITY_POINTS - 1) as f64;
        let g = post.logpdf(plan.coord, x).at_stage("evaluate")?.exp();
        let f = recalibrated_logpdf(map, approx, &plan.y_obs, plan.coord, x)
            .at_stage("evaluate")?
            .exp();
        text.push_str(&format!("{},{},{}\n", fmt_real(x), fmt_real(g), fmt_real(f)));
    }
    write_text(&plan.path("density.csv"), &text)
}

fn surface(plan: &Plan) -> Result<()> {
    let (biv, _) = fit_bivariate(
        plan.model(),
        plan.approx.as_ref(),
        &plan.y_obs,
        (plan.coord, plan.coord2),
        &plan.fit,
    )
    .at_stage("train")?;
    let grid = biv.surface().at_stage("evaluate")?;
    write_file(&plan.path("surface.csv"), |w| grid.write_csv(w))?;
    write_map(plan, &biv.marginal_map)?;
    if plan.plots {
        write_text(&plan.path("surface.svg"), &svg::render_surface(&grid))?;
    }
    println!(
        "surface: corner {:.4}, centre {:.4}, integral {:.4}",
        biv.density(0.02, 0.02).at_stage("evaluate")?,
        biv.density(0.5, 0.5).at_stage("evaluate")?,
        grid.integral()
    );
    Ok(())
}

fn report_rows(text: &mut String, name: &str, report: &ValidationReport) {
    for (i, d) in report.distances.iter().enumerate() {
        let size = report.sizes.get(i + 1).copied().unwrap_or(report.sizes[0]);
        text.push_str(&format!("{name},{i},{size},{}\n", fmt_real(*d)));
    }
}

fn validate(plan: &Plan) -> Result<()> {
    let (mut data, s_obs) = windowed_datasets(plan.model(), plan.approx.as_ref(), &plan.y_obs, &[plan.coord], &plan.fit)
        .at_stage("pit")?;
    let data = data.remove(0);
    let conv = validate_convergence(&data, &s_obs, plan.coord, &plan.checkpoints, &plan.fit, plan.conv_tol)
        .at_stage("validate")?;
    let blocks = validate_blocks(&data, &s_obs, plan.coord, plan.blocks, &plan.fit, plan.block_tol)
        .at_stage("validate")?;
    let mut text = String::from("check,index,size,distance\n");
    report_rows(&mut text, "convergence", &conv);
    report_rows(&mut text, "blocks", &blocks);
    write_text(&plan.path("validation.csv"), &text)?;
    println!(
        "convergence: final change {:.4} (tolerance {}) {}",
        conv.statistic,
        conv.tolerance,
        if conv.passed { "PASS" } else { "FAIL" }
    );
    println!(
        "blocks: max pairwise {:.4} (tolerance {}) {}",
        blocks.statistic,
        blocks.tolerance,
        if blocks.passed { "PASS" } else { "FAIL" }
    );
    match (conv.passed, blocks.passed) {
        (true, true) => Ok(()),
        (c, b) => Err(CliError::ValidationFailed(
            [(!c).then_some("convergence"), (!b).then_some("blocks")]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(", "),
        )),
    }
}

fn baselines(plan: &Plan) -> Result<()> {
    let (mut data, _) = windowed_datasets(plan.model(), plan.approx.as_ref(), &plan.y_obs, &[plan.coord], &plan.fit)
        .at_stage("pit")?;
    let hist = marginal_histogram(&data.remove(0), plan.bins).at_stage("histogram")?;
    write_file(&plan.path("histogram.csv"), |w| hist.write_csv(w))?;
    println!("pooled histogram max deviation {:.4}", hist.max_deviation());
    coverage(plan)
}

fn coverage(plan: &Plan) -> Result<()> {
    let interval = credible_interval(plan.approx.as_ref(), &plan.y_obs, plan.coord, plan.alpha).at_stage("coverage")?;
    let draws = exact_posterior_draws(plan.model(), plan.approx.as_ref(), &plan.y_obs, plan.n_draws, &plan.chain_config())
        .at_stage("coverage")?;
    let xs: Vec<f64> = draws.iter().map(|x| x[plan.coord]).collect();
    let est = operational_coverage(interval, ExactReference::Draws(&xs), plan.alpha).at_stage("coverage")?;
    write_file(&plan.path("coverage.csv"), |w| est.write_csv(w))?;
    println!(
        "operational coverage of the {} interval: {:.4} (se {:.4})",
        plan.alpha, est.coverage, est.se
    );
    Ok(())
}
