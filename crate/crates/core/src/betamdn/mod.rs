//! Feed-forward network mapping summaries to Beta-mixture parameters.
//!
//! The network takes a (standardized) summary vector `s` through tanh hidden
//! layers to `3K − 1` raw outputs: `K` shape-`a` pre-activations, `K`
//! shape-`b` pre-activations, and `K − 1` mixture logits (the first logit is
//! pinned at zero). Shapes are `softplus(z) + floor`; weights are the
//! normalized exponentials of the logits.
//!
//! [`nll`] is the mean negative log-likelihood of a [`QDataset`] and [`grad`]
//! its exact gradient by backpropagation.

mod format;
mod train;

pub use train::{train, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::approximators::QDataset;
use crate::error::{Error, Result};
use crate::generative::stream_rng;
use crate::special::{beta_reg, digamma, inv_softplus, ln_beta, log_sum_exp, sigmoid, softplus};

/// Largest supported number of mixture components.
pub const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub n_components: usize,
    pub activation: Activation,
    pub param_floor: f64,
    pub init_seed: u64,
}

impl NetConfig {
    pub fn new(input_dim: usize) -> Self {
        NetConfig {
            input_dim,
            hidden_widths: vec![80, 80],
            n_components: 1,
            activation: Activation::Tanh,
            param_floor: 1e-4,
            init_seed: 0,
        }
    }

    pub fn output_dim(&self) -> usize {
        3 * self.n_components - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(1..=MAX_COMPONENTS).contains(&self.n_components) {
            return Err(Error::invalid(format!(
                "n_components must lie in 1..={MAX_COMPONENTS}, got {}",
                self.n_components
            )));
        }
        if !(self.param_floor > 0.0 && self.param_floor.is_finite()) {
            return Err(Error::invalid("param_floor must be positive"));
        }
        Ok(())
    }

    /// Layer shapes as `(out, in)` pairs.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out, in)` weight matrix.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Network weights plus the input standardization learned at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_sd: Vec<f64>,
}

impl NetParams {
    /// Fan-in uniform initialization; the output biases start at the
    /// identity map Beta(1, 1) with equal mixture weights.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.init_seed, 0x6e65_7400);
        let shapes = config.shapes();
        let n_layers = shapes.len();
        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(l, (out, inp))| {
                let bound = (1.0 / inp as f64).sqrt();
                let weights = Array2::from_shape_fn((out, inp), |_| rng.random_range(-bound..bound));
                let bias = if l + 1 == n_layers {
                    Array1::from_iter((0..out).map(|k| {
                        if k < 2 * config.n_components {
                            inv_softplus(1.0 - config.param_floor)
                        } else {
                            0.0
                        }
                    }))
                } else {
                    Array1::from_shape_fn(out, |_| rng.random_range(-bound..bound))
                };
                Layer { weights, bias }
            })
            .collect();
        Ok(NetParams {
            config: config.clone(),
            layers,
            input_mean: vec![0.0; config.input_dim],
            input_sd: vec![1.0; config.input_dim],
        })
    }

    /// Weights that give Beta(1, 1) at every input.
    pub fn identity(config: &NetConfig) -> Result<Self> {
        let mut params = Self::init(config)?;
        if let Some(last) = params.layers.last_mut() {
            last.weights.fill(0.0);
        }
        Ok(params)
    }

    /// Total number of trainable weights.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights then bias of each layer in order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    fn standardize_into(&self, inputs: &[Vec<f64>], rows: impl Iterator<Item = usize>, out: &mut Array2<f64>) {
        for (r, i) in rows.enumerate() {
            for (j, v) in inputs[i].iter().enumerate() {
                out[(r, j)] = (v - self.input_mean[j]) / self.input_sd[j];
            }
        }
    }

    fn standardized(&self, inputs: &[Vec<f64>], rows: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((rows.len(), self.config.input_dim));
        self.standardize_into(inputs, rows.iter().copied(), &mut x);
        x
    }

    /// Forward pass over a standardized batch; returns each layer's output,
    /// the last being the raw head.
    fn forward_batch(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { acts[l - 1].view() };
            let mut z = input.dot(&layer.weights.t());
            z += &layer.bias;
            if l + 1 < n_layers {
                let act = self.config.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            acts.push(z);
        }
        acts
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: s.len(),
            });
        }
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                what: "network input".into(),
            });
        }
        Ok(())
    }
}

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaComponent {
    pub weight: f64,
    pub a: f64,
    pub b: f64,
}

/// Beta mixture `Σ π_k Beta(a_k, b_k)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParams {
    pub components: Vec<BetaComponent>,
}

impl BetaParams {
    pub fn single(a: f64, b: f64) -> Self {
        BetaParams {
            components: vec![BetaComponent { weight: 1.0, a, b }],
        }
    }

    pub fn identity() -> Self {
        Self::single(1.0, 1.0)
    }

    /// Mixture CDF `Σ π_k I_q(a_k, b_k)`; exact at the endpoints.
    pub fn cdf(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return 1.0;
        }
        self.components
            .iter()
            .map(|c| c.weight * beta_reg(c.a, c.b, q))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn logpdf(&self, q: f64) -> Result<f64> {
        beta_logpdf(q, self)
    }

    pub fn pdf(&self, q: f64) -> Result<f64> {
        beta_logpdf(q, self).map(f64::exp)
    }
}

fn component_logpdf(q: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * q.ln() + (b - 1.0) * (-q).ln_1p() - ln_beta(a, b)
}

/// `log Σ π_k Beta(q; a_k, b_k)` for `q` strictly inside `(0, 1)`.
pub fn beta_logpdf(q: f64, bp: &BetaParams) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("beta_logpdf needs q in (0, 1), got {q}")));
    }
    if bp.components.len() == 1 {
        let c = bp.components[0];
        return Ok(component_logpdf(q, c.a, c.b));
    }
    let terms: Vec<f64> = bp
        .components
        .iter()
        .map(|c| c.weight.ln() + component_logpdf(q, c.a, c.b))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Maps raw head outputs to Beta-mixture parameters; `z` has length `3K − 1`.
fn head(z: &[f64], k: usize, floor: f64) -> BetaParams {
    let mut logits = [0.0; MAX_COMPONENTS];
    logits[1..k].copy_from_slice(&z[2 * k..3 * k - 1]);
    let lse = log_sum_exp(&logits[..k]);
    BetaParams {
        components: (0..k)
            .map(|c| BetaComponent {
                weight: (logits[c] - lse).exp(),
                a: softplus(z[c]) + floor,
                b: softplus(z[k + c]) + floor,
            })
            .collect(),
    }
}

/// Per-record loss `−log d(q)` and its gradient with respect to the raw head.
fn head_loss_grad(z: &[f64], q: f64, k: usize, floor: f64, dz: &mut [f64]) -> f64 {
    let ln_q = q.ln();
    let ln_1q = (-q).ln_1p();
    let mut logits = [0.0; MAX_COMPONENTS];
    logits[1..k].copy_from_slice(&z[2 * k..3 * k - 1]);
    let lse_w = log_sum_exp(&logits[..k]);

    let mut terms = [0.0; MAX_COMPONENTS];
    let mut a = [0.0; MAX_COMPONENTS];
    let mut b = [0.0; MAX_COMPONENTS];
    for c in 0..k {
        a[c] = softplus(z[c]) + floor;
        b[c] = softplus(z[k + c]) + floor;
        terms[c] = logits[c] - lse_w + component_logpdf(q, a[c], b[c]);
    }
    let log_d = log_sum_exp(&terms[..k]);
    for c in 0..k {
        let resp = (terms[c] - log_d).exp();
        let psi_ab = digamma(a[c] + b[c]);
        let dl_da = ln_q - digamma(a[c]) + psi_ab;
        let dl_db = ln_1q - digamma(b[c]) + psi_ab;
        dz[c] = -resp * dl_da * sigmoid(z[c]);
        dz[k + c] = -resp * dl_db * sigmoid(z[k + c]);
        if c > 0 {
            let weight = (logits[c] - lse_w).exp();
            dz[2 * k + c - 1] = -(resp - weight);
        }
    }
    -log_d
}

/// Beta-mixture parameters at summary `s`.
pub fn forward(params: &NetParams, s: &[f64]) -> Result<BetaParams> {
    params.check_input(s)?;
    let x = params.standardized(std::slice::from_ref(&s.to_vec()), &[0]);
    let acts = params.forward_batch(x.view());
    let z = acts.last().expect("network has an output layer").row(0).to_vec();
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            what: "network output".into(),
        });
    }
    Ok(head(&z, params.config.n_components, params.config.param_floor))
}

fn check_dataset(params: &NetParams, data: &QDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("q dataset"));
    }
    if data.input_dim() != params.config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.config.input_dim,
            got: data.input_dim(),
        });
    }
    if let Some(i) = data.q.iter().position(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::invalid(format!("q[{i}] = {} is outside (0, 1)", data.q[i])));
    }
    Ok(())
}

const EVAL_CHUNK: usize = 4096;

/// Mean loss over the rows `rows` of `data`, evaluated in chunks.
pub(crate) fn nll_rows(params: &NetParams, data: &QDataset, rows: &[usize]) -> Result<f64> {
    let k = params.config.n_components;
    let floor = params.config.param_floor;
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = params.standardized(&data.inputs, chunk);
        let acts = params.forward_batch(x.view());
        let z = acts.last().expect("output layer");
        let mut zr = vec![0.0; z.ncols()];
        for (r, &i) in chunk.iter().enumerate() {
            zr.iter_mut().zip(z.row(r)).for_each(|(d, v)| *d = *v);
            let bp = head(&zr, k, floor);
            total -= beta_logpdf(data.q[i], &bp)?;
        }
    }
    Ok(total / rows.len() as f64)
}

/// Mean negative log-likelihood `−(1/N) Σ log d_{s_i}(q_i; w)`.
pub fn nll(params: &NetParams, data: &QDataset) -> Result<f64> {
    check_dataset(params, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    nll_rows(params, data, &rows)
}

/// Loss and gradient (in [`NetParams::flatten`] layout) over a standardized
/// batch `x` with targets `q`.
pub(crate) fn loss_and_grad(params: &NetParams, x: ArrayView2<f64>, q: &[f64]) -> (f64, Vec<f64>) {
    let n = q.len();
    let k = params.config.n_components;
    let floor = params.config.param_floor;
    let acts = params.forward_batch(x);
    let z = acts.last().expect("output layer");
    let mut delta = Array2::zeros(z.raw_dim());
    let mut loss = 0.0;
    let mut zr = vec![0.0; z.ncols()];
    for r in 0..n {
        zr.iter_mut().zip(z.row(r)).for_each(|(d, v)| *d = *v);
        let mut dz = [0.0; 3 * MAX_COMPONENTS];
        loss += head_loss_grad(&zr, q[r], k, floor, &mut dz[..3 * k - 1]);
        for (j, v) in dz[..3 * k - 1].iter().enumerate() {
            delta[(r, j)] = v / n as f64;
        }
    }

    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(params.layers.len());
    for l in (0..params.layers.len()).rev() {
        let input = if l == 0 { x } else { acts[l - 1].view() };
        let gw = delta.t().dot(&input);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut next = delta.dot(&params.layers[l].weights);
            let act = params.config.activation;
            next.zip_mut_with(&acts[l - 1], |d, &a| *d *= act.derivative_from_output(a));
            delta = next;
        }
        grads.push((gw, gb));
    }
    grads.reverse();
    let mut flat = Vec::with_capacity(params.len());
    for (gw, gb) in grads {
        flat.extend(gw.iter());
        flat.extend(gb.iter());
    }
    (loss / n as f64, flat)
}

/// Exact gradient of [`nll`] with respect to the flattened weights.
pub fn grad(params: &NetParams, data: &QDataset) -> Result<Vec<f64>> {
    check_dataset(params, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let x = params.standardized(&data.inputs, &rows);
    Ok(loss_and_grad(params, x.view(), &data.q).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;

    fn single_record(q: f64, s: Vec<f64>) -> QDataset {
        QDataset::new(vec![q], vec![s]).unwrap()
    }

    #[test]
    fn zero_weights_give_softplus_zero() {
        let mut cfg = NetConfig::new(2);
        cfg.hidden_widths = vec![5];
        let mut params = NetParams::init(&cfg).unwrap();
        params.set_flat(&vec![0.0; params.len()]).unwrap();
        let bp = forward(&params, &[0.3, -2.0]).unwrap();
        let expected = 2f64.ln() + 1e-4;
        assert!((bp.components[0].a - expected).abs() < 1e-15);
        assert!((bp.components[0].b - expected).abs() < 1e-15);
    }

    #[test]
    fn identity_is_representable() {
        for k in [1, 3] {
            let mut cfg = NetConfig::new(3);
            cfg.n_components = k;
            let params = NetParams::identity(&cfg).unwrap();
            for s in [[0.0, 0.0, 0.0], [5.0, -1.0, 2.0]] {
                let bp = forward(&params, &s).unwrap();
                for c in &bp.components {
                    assert!((c.a - 1.0).abs() < 1e-12 && (c.b - 1.0).abs() < 1e-12);
                }
                for q in [0.0, 0.25, 0.5, 1.0] {
                    assert!((bp.cdf(q) - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn equal_logits_give_equal_weights() {
        let mut cfg = NetConfig::new(1);
        cfg.n_components = 2;
        let params = NetParams::identity(&cfg).unwrap();
        let bp = forward(&params, &[1.0]).unwrap();
        assert_eq!(bp.components.len(), 2);
        for c in &bp.components {
            assert!((c.weight - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_logpdf_closed_forms() {
        assert!(beta_logpdf(0.5, &BetaParams::single(1.0, 1.0)).unwrap().abs() < 1e-14);
        let v = beta_logpdf(0.5, &BetaParams::single(2.0, 2.0)).unwrap();
        assert!((v - 1.5f64.ln()).abs() < 1e-12);
        let v = beta_logpdf(0.25, &BetaParams::single(2.0, 5.0)).unwrap();
        assert!((v - (30.0 * 0.25 * 0.75f64.powi(4)).ln()).abs() < 1e-12);
        assert!((v - 0.864_2).abs() < 1e-4);
        assert!(beta_logpdf(0.0, &BetaParams::identity()).is_err());
        assert!(beta_logpdf(1.0, &BetaParams::identity()).is_err());
    }

    #[test]
    fn mixture_logpdf_matches_direct_sum() {
        let bp = BetaParams {
            components: vec![
                BetaComponent { weight: 0.3, a: 2.0, b: 5.0 },
                BetaComponent { weight: 0.7, a: 0.5, b: 0.8 },
            ],
        };
        for q in [0.01, 0.3, 0.9] {
            let direct: f64 = bp
                .components
                .iter()
                .map(|c| c.weight * (component_logpdf(q, c.a, c.b)).exp())
                .sum();
            assert!((bp.logpdf(q).unwrap() - direct.ln()).abs() < 1e-12);
        }
        assert_eq!(bp.cdf(0.0), 0.0);
        assert_eq!(bp.cdf(1.0), 1.0);
    }

    #[test]
    fn nll_of_identity_on_midpoint_is_zero() {
        let params = NetParams::identity(&NetConfig::new(1)).unwrap();
        assert!(nll(&params, &single_record(0.5, vec![0.0])).unwrap().abs() < 1e-14);
    }

    #[test]
    fn head_gradient_at_identity_matches_hand_derivation() {
        // d/da -log Beta(q;a,b) = psi(a) - psi(a+b) - log q, times softplus'
        let mut cfg = NetConfig::new(1);
        cfg.hidden_widths = vec![];
        let params = NetParams::identity(&cfg).unwrap();
        let g = grad(&params, &single_record(0.5, vec![0.0])).unwrap();
        let z = inv_softplus(1.0 - 1e-4);
        let expected = (digamma(1.0) - digamma(2.0) - 0.5f64.ln()) * sigmoid(z);
        // flat layout: W (2x1), b (2)
        assert!((g[2] - expected).abs() < 1e-12);
        assert!((g[3] - expected).abs() < 1e-12);
        assert!((expected - (-1.0 + 2f64.ln()) * sigmoid(z)).abs() < 1e-12);
    }

    fn central(params: &NetParams, data: &QDataset, w: &[f64], i: usize, h: f64) -> f64 {
        let mut wp = w.to_vec();
        wp[i] += h;
        let mut wm = w.to_vec();
        wm[i] -= h;
        let fp = nll(&params.with_flat(&wp).unwrap(), data).unwrap();
        let fm = nll(&params.with_flat(&wm).unwrap(), data).unwrap();
        (fp - fm) / (2.0 * h)
    }

    /// Worst relative gap to central differences at `h = 1e-5`, Richardson
    /// extrapolated with `2h` to remove the `h²` term. Rounding noise in
    /// `ln Γ` puts a floor near `1e-9` under any difference quotient, so
    /// coordinates below `1e-3` are compared on that absolute scale.
    fn fd_check(params: &NetParams, data: &QDataset) -> f64 {
        let g = grad(params, data).unwrap();
        let w = params.flatten();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            let fd = (4.0 * central(params, data, &w, i, h) - central(params, data, &w, i, 2.0 * h)) / 3.0;
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, k) in [(1u64, 1usize), (2, 2), (3, 3)] {
            let mut cfg = NetConfig::new(2);
            cfg.hidden_widths = vec![4, 3];
            cfg.n_components = k;
            cfg.init_seed = seed;
            let mut params = NetParams::init(&cfg).unwrap();
            let mut rng = stream_rng(seed, 1);
            let w: Vec<f64> = params.flatten().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            params.set_flat(&w).unwrap();
            params.input_mean = vec![0.2, -0.1];
            params.input_sd = vec![1.5, 0.7];
            for (q, s) in [(0.13, vec![0.3, 1.0]), (0.77, vec![-1.0, 0.2]), (0.5, vec![0.0, 0.0])] {
                let worst = fd_check(&params, &single_record(q, s));
                assert!(worst < 1e-6, "seed {seed}, q {q}: {worst}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_beta_mle() {
        // Constant inputs standardize to zero, so a 0-hidden-layer model
        // reduces to the bias, whose optimum is the Beta MLE.
        let q: Vec<f64> = (1..200).map(|i| (i as f64 / 200.0).powf(1.3)).collect();
        let n = q.len() as f64;
        let mean_ln_q = q.iter().map(|v| v.ln()).sum::<f64>() / n;
        let mean_ln_1q = q.iter().map(|v| (-v).ln_1p()).sum::<f64>() / n;
        // Newton on the Beta log-likelihood with digamma/trigamma
        let trigamma = |x: f64| {
            let h = 1e-4;
            (digamma(x + h) - digamma(x - h)) / (2.0 * h)
        };
        let (mut a, mut b) = (1.0f64, 1.0f64);
        for _ in 0..100 {
            let ga = mean_ln_q - digamma(a) + digamma(a + b);
            let gb = mean_ln_1q - digamma(b) + digamma(a + b);
            let tab = trigamma(a + b);
            let (haa, hbb, hab) = (tab - trigamma(a), tab - trigamma(b), tab);
            let det = haa * hbb - hab * hab;
            a -= (hbb * ga - hab * gb) / det;
            b -= (haa * gb - hab * ga) / det;
        }
        let ll = |a: f64, b: f64| (a - 1.0) * mean_ln_q + (b - 1.0) * mean_ln_1q - ln_gamma(a) - ln_gamma(b) + ln_gamma(a + b);
        assert!(ll(a, b) > ll(a * 1.01, b) && ll(a, b) > ll(a, b * 0.99));

        let mut cfg = NetConfig::new(1);
        cfg.hidden_widths = vec![];
        let mut params = NetParams::init(&cfg).unwrap();
        params.layers[0].weights.fill(0.3);
        params.layers[0].bias[0] = inv_softplus(a - cfg.param_floor);
        params.layers[0].bias[1] = inv_softplus(b - cfg.param_floor);
        params.input_mean = vec![2.0];
        let data = QDataset::new(q.clone(), vec![vec![2.0]; q.len()]).unwrap();
        let g = grad(&params, &data).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "|g| = {norm}");
    }

    #[test]
    fn flat_round_trip_is_lossless() {
        let params = NetParams::init(&NetConfig::new(3)).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.len());
        assert_eq!(params.with_flat(&flat).unwrap(), params);
        assert!(params.with_flat(&flat[1..]).is_err());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let params = NetParams::init(&NetConfig::new(2)).unwrap();
        assert!(forward(&params, &[1.0]).is_err());
        assert!(forward(&params, &[1.0, f64::NAN]).is_err());
        let mut cfg = NetConfig::new(2);
        cfg.n_components = 0;
        assert!(NetParams::init(&cfg).is_err());
    }
}
