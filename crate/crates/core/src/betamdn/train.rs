//! Minibatch Adam with early stopping on a held-out split.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::{check_dataset, loss_and_grad, nll_rows, NetConfig, NetParams};
use crate::approximators::QDataset;
use crate::error::{Error, Result};
use crate::generative::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 200,
            validation_fraction: 0.1,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::invalid(format!(
                "validation_fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub train_nll: Vec<f64>,
    pub validation_nll: Vec<f64>,
    pub stopped_epoch: usize,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    /// Validation NLL of the returned weights.
    pub final_nll: f64,
    pub wall_time: Duration,
    pub n_train: usize,
    pub n_validation: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..weights.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            weights[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Fits the network by minimizing the mean negative log-likelihood.
///
/// The split, shuffles and initialization are all derived from the configured
/// seeds and updates are applied serially, so a run is bit-reproducible.
pub fn train(data: &QDataset, net_cfg: &NetConfig, train_cfg: &TrainConfig) -> Result<(NetParams, TrainReport)> {
    train_cfg.validate()?;
    let start = Instant::now();
    let mut params = NetParams::init(net_cfg)?;
    check_dataset(&params, data)?;

    let n = data.len();
    let n_val = (train_cfg.validation_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::invalid(format!(
            "validation split of {n} records is empty or leaves no training data"
        )));
    }
    if n < 10 * train_cfg.batch_size {
        log::warn!(
            "training on {n} records with batch size {}; at least {} recommended",
            train_cfg.batch_size,
            10 * train_cfg.batch_size
        );
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(train_cfg.seed, 0));
    let (val_rows, train_rows) = order.split_at(n_val);
    let val_rows = val_rows.to_vec();
    let mut train_rows = train_rows.to_vec();

    let p = net_cfg.input_dim;
    let n_train = train_rows.len() as f64;
    for j in 0..p {
        let mean = train_rows.iter().map(|&i| data.inputs[i][j]).sum::<f64>() / n_train;
        let var = train_rows
            .iter()
            .map(|&i| (data.inputs[i][j] - mean).powi(2))
            .sum::<f64>()
            / n_train;
        params.input_mean[j] = mean;
        params.input_sd[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let mut weights = params.flatten();
    let mut adam = Adam::new(weights.len(), train_cfg.learning_rate);
    let mut best = (f64::INFINITY, weights.clone(), 0usize);
    let mut train_trace = Vec::new();
    let mut val_trace = Vec::new();
    let bs = train_cfg.batch_size;
    let mut x = Array2::zeros((bs, p));
    let mut q = Vec::with_capacity(bs);

    for epoch in 1..=train_cfg.max_epochs {
        train_rows.shuffle(&mut stream_rng(train_cfg.seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for (step, batch) in train_rows.chunks(bs).enumerate() {
            if batch.len() != x.nrows() {
                x = Array2::zeros((batch.len(), p));
            }
            params.standardize_into(&data.inputs, batch.iter().copied(), &mut x);
            q.clear();
            q.extend(batch.iter().map(|&i| data.q[i]));
            let (loss, g) = loss_and_grad(&params, x.view(), &q);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut weights, &g);
            params.set_flat(&weights)?;
        }
        train_trace.push(epoch_loss / n_train);
        let val = nll_rows(&params, data, &val_rows)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, step: 0 });
        }
        val_trace.push(val);
        if val < best.0 {
            best = (val, weights.clone(), epoch);
        } else if epoch - best.2 >= train_cfg.patience {
            break;
        }
    }

    params.set_flat(&best.1)?;
    let report = TrainReport {
        stopped_epoch: val_trace.len(),
        train_nll: train_trace,
        validation_nll: val_trace,
        best_epoch: best.2,
        final_nll: best.0,
        wall_time: start.elapsed(),
        n_train: train_rows.len(),
        n_validation: val_rows.len(),
    };
    Ok((params, report))
}
