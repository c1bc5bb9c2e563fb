//! `kind:key=value,...` selectors for models and approximations.

use std::sync::Arc;

use distmap::approximators::{
    exact_conjugate, mis_specified_gaussian, ApproxPosterior, EcdfApprox, SignFlipGaussian, VariationalLogistic,
    DEFAULT_EPS_CLIP,
};
use distmap::generative::{ConjugateGaussian, GenerativeModel, LogisticModel};

use crate::error::{CliError, Result};

struct Selector {
    kind: String,
    params: Vec<(String, String)>,
}

impl Selector {
    fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        if kind.is_empty() {
            return Err(CliError::usage("empty selector"));
        }
        let params = rest
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| CliError::usage(format!("selector parameter {p:?} is not key=value")))
            })
            .collect::<Result<_>>()?;
        Ok(Selector {
            kind: kind.to_string(),
            params,
        })
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(CliError::usage(format!(
                "unknown parameter {k:?} for {}; expected one of {}",
                self.kind,
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }

    fn value<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.params.iter().find(|(k, _)| k == key) {
            Some((_, v)) => v
                .parse()
                .map_err(|e| CliError::usage(format!("{}.{key} = {v:?}: {e}", self.kind))),
            None => Ok(default),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Conjugate {
        dim: usize,
        prior_mean: f64,
        prior_var: f64,
        noise_var: f64,
    },
    Logistic {
        n_obs: usize,
        p_reg: usize,
        design_seed: u64,
        prior_var: f64,
    },
}

pub enum Model {
    Conjugate(ConjugateGaussian),
    Logistic(LogisticModel),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn GenerativeModel {
        match self {
            Model::Conjugate(m) => m,
            Model::Logistic(m) => m,
        }
    }
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let s = Selector::parse(text)?;
        match s.kind.as_str() {
            "conjugate" => {
                s.check_keys(&["dim", "prior_mean", "prior_var", "noise_var"])?;
                Ok(ModelSpec::Conjugate {
                    dim: s.value("dim", 1)?,
                    prior_mean: s.value("prior_mean", 0.0)?,
                    prior_var: s.value("prior_var", 1.0)?,
                    noise_var: s.value("noise_var", 1.0)?,
                })
            }
            "logistic" => {
                s.check_keys(&["n_obs", "p_reg", "design_seed", "prior_var"])?;
                Ok(ModelSpec::Logistic {
                    n_obs: s.value("n_obs", 20)?,
                    p_reg: s.value("p_reg", 3)?,
                    design_seed: s.value("design_seed", 0)?,
                    prior_var: s.value("prior_var", 2.0)?,
                })
            }
            other => Err(CliError::usage(format!(
                "unknown model {other:?}; expected conjugate or logistic"
            ))),
        }
    }

    /// Selector text with every parameter spelled out.
    pub fn canonical(&self) -> String {
        match self {
            ModelSpec::Conjugate {
                dim,
                prior_mean,
                prior_var,
                noise_var,
            } => format!("conjugate:dim={dim},prior_mean={prior_mean},prior_var={prior_var},noise_var={noise_var}"),
            ModelSpec::Logistic {
                n_obs,
                p_reg,
                design_seed,
                prior_var,
            } => format!("logistic:n_obs={n_obs},p_reg={p_reg},design_seed={design_seed},prior_var={prior_var}"),
        }
    }

    pub fn build(&self) -> Result<Model> {
        let built = match *self {
            ModelSpec::Conjugate {
                dim,
                prior_mean,
                prior_var,
                noise_var,
            } => ConjugateGaussian::new(dim, prior_mean, prior_var, noise_var).map(Model::Conjugate),
            ModelSpec::Logistic {
                n_obs,
                p_reg,
                design_seed,
                prior_var,
            } => {
                if n_obs == 0 || p_reg == 0 {
                    return Err(CliError::usage("logistic n_obs and p_reg must be positive"));
                }
                LogisticModel::new(LogisticModel::uniform_design(n_obs, p_reg, design_seed), prior_var)
                    .map(Model::Logistic)
            }
        };
        built.map_err(|e| CliError::usage(format!("model: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApproxSpec {
    Exact,
    Misspec { shift: f64, scale: f64 },
    SignFlip { split: f64, shift: f64, scale: f64 },
    Vi,
    EcdfMisspec { shift: f64, scale: f64, n_samples: usize },
}

impl ApproxSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let s = Selector::parse(text)?;
        match s.kind.as_str() {
            "exact" => {
                s.check_keys(&[])?;
                Ok(ApproxSpec::Exact)
            }
            "misspec" => {
                s.check_keys(&["shift", "scale"])?;
                Ok(ApproxSpec::Misspec {
                    shift: s.value("shift", 0.0)?,
                    scale: s.value("scale", 1.0)?,
                })
            }
            "signflip" => {
                s.check_keys(&["split", "shift", "scale"])?;
                Ok(ApproxSpec::SignFlip {
                    split: s.value("split", 0.0)?,
                    shift: s.value("shift", 0.0)?,
                    scale: s.value("scale", 1.0)?,
                })
            }
            "vi" => {
                s.check_keys(&[])?;
                Ok(ApproxSpec::Vi)
            }
            "ecdf-misspec" => {
                s.check_keys(&["shift", "scale", "n_samples"])?;
                Ok(ApproxSpec::EcdfMisspec {
                    shift: s.value("shift", 0.0)?,
                    scale: s.value("scale", 1.0)?,
                    n_samples: s.value("n_samples", 1000)?,
                })
            }
            other => Err(CliError::usage(format!(
                "unknown approximation {other:?}; expected exact, misspec, signflip, vi or ecdf-misspec"
            ))),
        }
    }

    pub fn canonical(&self) -> String {
        match self {
            ApproxSpec::Exact => "exact".into(),
            ApproxSpec::Misspec { shift, scale } => format!("misspec:shift={shift},scale={scale}"),
            ApproxSpec::SignFlip { split, shift, scale } => format!("signflip:split={split},shift={shift},scale={scale}"),
            ApproxSpec::Vi => "vi".into(),
            ApproxSpec::EcdfMisspec {
                shift,
                scale,
                n_samples,
            } => format!("ecdf-misspec:shift={shift},scale={scale},n_samples={n_samples}"),
        }
    }

    pub fn build(&self, model: &Model, seed: u64) -> Result<Arc<dyn ApproxPosterior>> {
        let wrong = |kind: &str| CliError::usage(format!("approximation {kind} does not apply to this model"));
        let usage = |e: distmap::Error| CliError::usage(format!("approximation: {e}"));
        match (self, model) {
            (ApproxSpec::Exact, Model::Conjugate(m)) => Ok(Arc::new(exact_conjugate(m))),
            (ApproxSpec::Misspec { shift, scale }, Model::Conjugate(m)) => {
                Ok(Arc::new(mis_specified_gaussian(m, *shift, *scale).map_err(usage)?))
            }
            (ApproxSpec::SignFlip { split, shift, scale }, Model::Conjugate(m)) => {
                if !(*scale > 0.0 && scale.is_finite() && shift.is_finite() && split.is_finite()) {
                    return Err(CliError::usage("signflip needs finite split and shift and a positive scale"));
                }
                Ok(Arc::new(SignFlipGaussian {
                    model: m.clone(),
                    split: *split,
                    mean_shift: *shift,
                    sd_scale: *scale,
                }))
            }
            (ApproxSpec::Vi, Model::Logistic(m)) => Ok(Arc::new(VariationalLogistic { model: m.clone() })),
            (
                ApproxSpec::EcdfMisspec {
                    shift,
                    scale,
                    n_samples,
                },
                Model::Conjugate(m),
            ) => {
                if *n_samples < 2 {
                    return Err(CliError::usage("ecdf-misspec needs n_samples >= 2"));
                }
                Ok(Arc::new(EcdfApprox {
                    inner: Arc::new(mis_specified_gaussian(m, *shift, *scale).map_err(usage)?),
                    n_samples: *n_samples,
                    eps_clip: DEFAULT_EPS_CLIP,
                    seed,
                }))
            }
            (spec, _) => Err(wrong(&spec.canonical())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_forms_parse_back() {
        for text in ["conjugate", "conjugate:dim=2,noise_var=0.5", "logistic:p_reg=3,prior_var=2"] {
            let spec = ModelSpec::parse(text).unwrap();
            assert_eq!(ModelSpec::parse(&spec.canonical()).unwrap(), spec);
        }
        for text in ["exact", "misspec:scale=1.4142135623730951", "signflip:shift=0.3", "vi", "ecdf-misspec:n_samples=50"] {
            let spec = ApproxSpec::parse(text).unwrap();
            assert_eq!(ApproxSpec::parse(&spec.canonical()).unwrap(), spec);
        }
    }

    #[test]
    fn unknown_selectors_and_keys_are_rejected() {
        assert!(ModelSpec::parse("ergm").is_err());
        assert!(ModelSpec::parse("conjugate:dims=2").is_err());
        assert!(ModelSpec::parse("conjugate:dim").is_err());
        assert!(ApproxSpec::parse("laplace").is_err());
        assert!(ApproxSpec::parse("misspec:scale=wide").is_err());
        let logistic = ModelSpec::parse("logistic").unwrap().build().unwrap();
        assert!(ApproxSpec::Exact.build(&logistic, 0).is_err());
        let conj = ModelSpec::parse("conjugate").unwrap().build().unwrap();
        assert!(ApproxSpec::Vi.build(&conj, 0).is_err());
        assert!(ApproxSpec::parse("misspec:scale=-1").unwrap().build(&conj, 0).is_err());
    }
}
