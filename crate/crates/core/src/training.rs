//! Mini-batch Adam on the mean squared error of normalized O-D targets.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{SupervisedWindow, WindowMeta};
use crate::error::{Error, Result};
use crate::model::{forward_flgcn, FlGcnParams, HeadVariant, ModelTopology};
use crate::rng::substream;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Share of training days (the latest ones) held out for model selection.
    pub validation_fraction: f64,
    pub seed: u64,
    pub horizon: usize,
    pub variant: HeadVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
            seed: 0,
            horizon: 1,
            variant: HeadVariant::Cnn,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("training config: {m}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad(format!("adam settings out of range: {a:?}"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        if !(1..=3).contains(&self.horizon) {
            return bad(format!("horizon must be 1, 2 or 3, got {}", self.horizon));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FlGcnParams,
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters were kept (1-based; 0 means the initial ones).
    pub best_epoch: usize,
}

/// Loss history as `epoch,train_loss,val_loss`.
pub fn history_csv(history: &[EpochLoss], banner: &str) -> String {
    let mut out = String::new();
    for line in banner.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("epoch,train_loss,val_loss\n");
    for e in history {
        let val = e.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:e},{val}", e.epoch, e.train_loss);
    }
    out
}

/// Splits off the latest `fraction` of distinct days (at least one when
/// `fraction > 0` and two or more days exist).
fn validation_split(windows: Vec<&SupervisedWindow>, fraction: f64) -> (Vec<&SupervisedWindow>, Vec<&SupervisedWindow>) {
    let mut days: Vec<usize> = windows.iter().map(|w| w.meta.day).collect();
    days.sort_unstable();
    days.dedup();
    let n_val = if fraction > 0.0 && days.len() >= 2 {
        ((fraction * days.len() as f64).round() as usize).clamp(1, days.len() - 1)
    } else {
        0
    };
    let first_val = days.get(days.len() - n_val).copied().unwrap_or(usize::MAX);
    windows.into_iter().partition(|w| w.meta.day < first_val)
}

/// Mean loss and the gradient of that mean for a batch of normalized windows.
fn batch_gradient(
    topology: &ModelTopology,
    params: &FlGcnParams,
    batch: &[&SupervisedWindow],
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    let mut tape = Tape::new();
    let topo = topology.bind(&mut tape);
    let bound = params.bind(&mut tape);
    let mut total = None;
    for w in batch {
        let z = tape.leaf(w.z.clone());
        let xh = tape.leaf(w.x_hist.clone());
        let target = tape.leaf(w.target.clone());
        let pred = forward_flgcn(&mut tape, z, xh, topo, &bound)?;
        let loss = tape.mse_loss(pred, target)?;
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let scale = 1.0 / batch.len() as f64;
    let loss = tape.value(total).item() * scale;
    if !with_grad {
        return Ok((loss, None));
    }
    let grads = tape.backward_from(total, Tensor::scalar(scale))?;
    let grads = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((loss, Some(grads)))
}

fn mean_loss(topology: &ModelTopology, params: &FlGcnParams, windows: &[&SupervisedWindow], batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in windows.chunks(batch) {
        sum += batch_gradient(topology, params, chunk, false)?.0 * chunk.len() as f64;
    }
    Ok(sum / windows.len() as f64)
}

fn diverged(epoch: usize, batch: &[&SupervisedWindow], detail: &str) -> Error {
    let metas: Vec<String> = batch
        .iter()
        .map(|w| {
            let WindowMeta { day, interval, step } = w.meta;
            format!("(day {day}, interval {interval}, step {step})")
        })
        .collect();
    Error::Diverged(format!("epoch {epoch}: {detail}; batch windows {}", metas.join(" ")))
}

/// Trains one model on the normalized windows whose step equals
/// `config.horizon`, starting from `init`.
pub fn train(windows: &[SupervisedWindow], topology: &ModelTopology, init: FlGcnParams, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if init.config().head_variant != config.variant {
        return Err(Error::InvalidArgument("initial parameters do not match the configured variant".into()));
    }
    let selected: Vec<&SupervisedWindow> = windows.iter().filter(|w| w.meta.step == config.horizon).collect();
    if selected.is_empty() {
        return Err(Error::InsufficientData(format!("no training windows for horizon {}", config.horizon)));
    }
    let (fit, val) = validation_split(selected, config.validation_fraction);

    let mut params = init;
    let mut adam = Adam::new(config.adam, params.tensors());
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let variant_id = match config.variant {
        HeadVariant::Fcn => 0,
        HeadVariant::Cnn => 1,
    };

    for epoch in 1..=config.epochs {
        let mut rng = substream(config.seed, "shuffle", &[variant_id, config.horizon as u64, epoch as u64]);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&SupervisedWindow> = idx.iter().map(|&i| fit[i]).collect();
            let (loss, grads) = batch_gradient(topology, &params, &batch, true).map_err(|e| diverged(epoch, &batch, &e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(epoch, &batch, &format!("loss is {loss}")));
            }
            let grads = grads.expect("requested");
            adam.step(params.tensors_mut(), &grads, config.learning_rate);
            if params.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(diverged(epoch, &batch, "non-finite parameters after update"));
            }
            sum += loss * batch.len() as f64;
        }
        let train_loss = sum / fit.len() as f64;
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(topology, &params, &val, config.batch_size)?) };
        let score = val_loss.unwrap_or(train_loss);
        if score < best.0 {
            best = (score, epoch, params.clone());
        }
        history.push(EpochLoss { epoch, train_loss, val_loss });
    }
    Ok(TrainOutcome { params: best.2, history, best_epoch: best.1 })
}
