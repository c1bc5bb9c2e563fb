//! Python bindings: conjugate-model fits, map evaluation and the baseline
//! diagnostics.

use distmap::approximators::{mis_specified_gaussian, FixedApprox, Marginal};
use distmap::baselines::{credible_interval, histogram, operational_coverage, ExactReference};
use distmap::betamdn::BetaParams;
use distmap::distortion::{fit_distortion, DistortionMap, FitConfig};
use distmap::generative::ConjugateGaussian;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: distmap::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Conjugate Gaussian model `x ~ N(m, v)`, `y | x ~ N(x, w)` per coordinate.
#[pyclass(name = "ConjugateModel", frozen)]
struct PyConjugate {
    inner: ConjugateGaussian,
}

#[pymethods]
impl PyConjugate {
    #[new]
    #[pyo3(signature = (prior_mean=0.0, prior_var=1.0, noise_var=1.0, dim=1))]
    fn new(prior_mean: f64, prior_var: f64, noise_var: f64, dim: usize) -> PyResult<Self> {
        let inner = ConjugateGaussian::new(dim, prior_mean, prior_var, noise_var).map_err(py_err)?;
        Ok(PyConjugate { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    fn posterior_mean(&self, y: Vec<f64>, coord: usize) -> PyResult<f64> {
        if y.len() != self.inner.dim || coord >= self.inner.dim {
            return Err(PyValueError::new_err("y length or coord does not match the model"));
        }
        Ok(self.inner.posterior_mean(&y, coord))
    }

    fn posterior_sd(&self) -> f64 {
        self.inner.posterior_sd()
    }

    /// Fits the distortion map of a Gaussian approximation with mean offset
    /// `shift` and sd ratio `scale` at `y_obs`.
    #[pyo3(signature = (y_obs, shift=0.0, scale=1.0, coord=0, n_sim=500_000, keep_frac=0.1, seed=0, hidden=vec![80, 80], epochs=200, patience=20))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &self,
        py: Python<'_>,
        y_obs: Vec<f64>,
        shift: f64,
        scale: f64,
        coord: usize,
        n_sim: usize,
        keep_frac: f64,
        seed: u64,
        hidden: Vec<usize>,
        epochs: usize,
        patience: usize,
    ) -> PyResult<PyMap> {
        let approx = mis_specified_gaussian(&self.inner, shift, scale).map_err(py_err)?;
        let mut cfg = FitConfig::new(n_sim, keep_frac, seed);
        cfg.net.hidden_widths = hidden;
        cfg.train.max_epochs = epochs;
        cfg.train.patience = patience;
        let model = &self.inner;
        let (map, _) = py
            .detach(|| fit_distortion(model, &approx, &y_obs, coord, &cfg))
            .map_err(py_err)?;
        Ok(PyMap { inner: map })
    }
}

/// Fitted distortion map at the observed data.
#[pyclass(name = "DistortionMap", frozen)]
struct PyMap {
    inner: DistortionMap,
}

#[pymethods]
impl PyMap {
    fn cdf(&self, q: f64) -> PyResult<f64> {
        self.inner.eval_cdf(q).map_err(py_err)
    }

    fn density(&self, q: f64) -> PyResult<f64> {
        self.inner.eval_density(q).map_err(py_err)
    }

    /// Mixture components as `(weight, a, b)`.
    fn components(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .beta_params()
            .components
            .iter()
            .map(|c| (c.weight, c.a, c.b))
            .collect()
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.n_train
    }

    /// `(q, D, d)` on the standard grid.
    fn curve(&self) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let c = self.inner.curve().map_err(py_err)?;
        Ok((c.q, c.cdf, c.density))
    }

    fn sup_distance_to_identity(&self) -> PyResult<f64> {
        Ok(self.inner.curve().map_err(py_err)?.sup_distance_to(|q| q))
    }
}

/// Log-density of `Beta(a, b)` at `q` in `(0, 1)`.
#[pyfunction]
fn beta_logpdf(q: f64, a: f64, b: f64) -> PyResult<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(PyValueError::new_err("a and b must be positive"));
    }
    distmap::betamdn::beta_logpdf(q, &BetaParams::single(a, b)).map_err(py_err)
}

/// PIT histogram: `(edges, heights)` with heights normalized to mean 1.
#[pyfunction]
#[pyo3(signature = (q, bins=20))]
fn pit_histogram(q: Vec<f64>, bins: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let h = histogram(&q, bins).map_err(py_err)?;
    Ok((h.edges, h.heights))
}

/// Mass that exact draws put on the equal-tail `alpha` interval of
/// `N(mean, sd²)`: `(lo, hi, coverage, se)`.
#[pyfunction]
#[pyo3(signature = (draws, mean, sd, alpha=0.8))]
fn normal_interval_coverage(draws: Vec<f64>, mean: f64, sd: f64, alpha: f64) -> PyResult<(f64, f64, f64, f64)> {
    if !(sd > 0.0) {
        return Err(PyValueError::new_err("sd must be positive"));
    }
    let approx = FixedApprox {
        marginals: vec![Marginal::Normal { mean, sd }],
    };
    let interval = credible_interval(&approx, &[0.0], 0, alpha).map_err(py_err)?;
    let est = operational_coverage(interval, ExactReference::Draws(&draws), alpha).map_err(py_err)?;
    Ok((est.lo, est.hi, est.coverage, est.se))
}

#[pymodule]
fn pydistmap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConjugate>()?;
    m.add_class::<PyMap>()?;
    m.add_function(wrap_pyfunction!(beta_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(pit_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(normal_interval_coverage, m)?)?;
    Ok(())
}
