//! Command-line front end for distortion-map diagnostics.
//!
//! Every run command resolves defaults, an optional `--config` file and
//! flags (in that order of precedence, lowest first) into one
//! [`config::RunConfig`], checks it, and only then writes outputs under
//! `--out`. The resolved configuration is saved as `manifest.txt`.

pub mod commands;
pub mod config;
pub mod error;
pub mod selectors;
pub mod svg;

use std::ffi::OsString;
use std::io::BufReader;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use distmap::distortion::{DistortionCurve, SurfaceGrid};

use crate::commands::{apply_case, execute, Plan};
use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "distmap", version, about = "Distortion-map diagnostics for approximate posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate (x, y) pairs and write simbatch.txt.
    Simulate(RunArgs),
    /// Fit the distortion map at y_obs; writes curve.csv and net.txt.
    Fit(RunArgs),
    /// Fit and write curve.csv, density.csv, histogram.csv and net.txt.
    Diagnose(RunArgs),
    /// Fit the bivariate distortion surface; writes surface.csv.
    Surface(RunArgs),
    /// Convergence and block checks; exits 1 if either fails.
    Validate(RunArgs),
    /// Pooled PIT histogram and credible-interval coverage.
    Baselines(RunArgs),
    /// Run a preset case.
    Demo(RunArgs),
    /// Run the command recorded in a config file or manifest.
    Run(RunArgs),
    /// Render curve.csv or surface.csv as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Default, Args)]
struct RunArgs {
    /// Sectioned key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model selector, e.g. conjugate:dim=1,prior_var=1.
    #[arg(long)]
    model: Option<String>,
    /// Approximation selector, e.g. misspec:shift=0,scale=0.5.
    #[arg(long)]
    approx: Option<String>,
    #[arg(long)]
    coord: Option<String>,
    /// Observed data, comma-separated.
    #[arg(long = "y-obs", allow_hyphen_values = true)]
    y_obs: Option<String>,
    #[arg(long = "n-sim")]
    n_sim: Option<String>,
    #[arg(long = "keep-frac")]
    keep_frac: Option<String>,
    /// Hidden layer widths, comma-separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    components: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Demo case name.
    #[arg(long)]
    case: Option<String>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    /// Any other setting, as section.key=value.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    svg: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> Result<Overrides> {
        let mut o = Overrides::default();
        for a in &self.set {
            o.set_dotted(a)?;
        }
        let flags = [
            (&self.model, "model", "selector"),
            (&self.approx, "approx", "selector"),
            (&self.coord, "data", "coord"),
            (&self.y_obs, "data", "y_obs"),
            (&self.n_sim, "data", "n_sim"),
            (&self.keep_frac, "data", "keep_frac"),
            (&self.hidden, "net", "hidden"),
            (&self.components, "net", "components"),
            (&self.lr, "train", "lr"),
            (&self.epochs, "train", "epochs"),
            (&self.seed, "run", "seed"),
            (&self.out, "run", "out"),
            (&self.case, "run", "case"),
        ];
        for (value, section, key) in flags {
            if let Some(v) = value {
                o.set(section, key, v.as_str())?;
            }
        }
        if self.plots {
            o.set("run", "plots", "true")?;
        }
        Ok(o)
    }
}

/// Defaults, then the demo preset, then the config file, then flags.
fn resolve(command: Option<&str>, args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => Overrides::read(path)?,
        None => Overrides::default(),
    };
    let flags = args.overrides()?;
    let command = match command {
        Some(c) => c.to_string(),
        None => file
            .get("run", "command")
            .filter(|c| !c.is_empty())
            .ok_or_else(|| CliError::usage("run needs --config with run.command"))?
            .to_string(),
    };
    let mut cfg = RunConfig::default();
    if command == "demo" {
        let case = flags
            .get("run", "case")
            .or_else(|| file.get("run", "case"))
            .ok_or_else(|| CliError::usage("demo needs --case"))?;
        apply_case(&mut cfg, case)?;
    }
    cfg.apply(&file);
    cfg.apply(&flags);
    cfg.set("run", "command", command);
    Ok(cfg)
}

fn render(args: &RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.input.display())))?;
    let header = text.lines().next().unwrap_or("").trim().replace(' ', "");
    let malformed = |e: distmap::Error| CliError::usage(format!("malformed {}: {e}", args.input.display()));
    let svg = match header.as_str() {
        "q,D,d" => svg::render_curve(&DistortionCurve::read_csv(BufReader::new(text.as_bytes())).map_err(malformed)?),
        "q1,q2,d" => svg::render_surface(&SurfaceGrid::read_csv(BufReader::new(text.as_bytes())).map_err(malformed)?),
        _ => {
            return Err(CliError::usage(format!(
                "{} is neither a curve (q,D,d) nor a surface (q1,q2,d) file",
                args.input.display()
            )))
        }
    };
    std::fs::write(&args.svg, svg)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let (name, args) = match &cli.command {
        Cmd::Render(r) => return render(r),
        Cmd::Simulate(a) => (Some("simulate"), a),
        Cmd::Fit(a) => (Some("fit"), a),
        Cmd::Diagnose(a) => (Some("diagnose"), a),
        Cmd::Surface(a) => (Some("surface"), a),
        Cmd::Validate(a) => (Some("validate"), a),
        Cmd::Baselines(a) => (Some("baselines"), a),
        Cmd::Demo(a) => (Some("demo"), a),
        Cmd::Run(a) => (None, a),
    };
    let plan = Plan::resolve(resolve(name, args)?)?;
    execute(&plan)
}

/// Parses `argv` (including the program name) and runs; returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("distmap: {e}");
            e.exit_code()
        }
    }
}
