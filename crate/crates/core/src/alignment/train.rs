use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grads, AlignmentBatch, ModelConfig, ModelParams};
use super::optim::{clip_global_norm, cosine_lr, AdamW};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::towers::VideoMasks;

/// Lower bound on log τ.
pub const LOG_TAU_FLOOR: f64 = -5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub initial_tau: f64,
    /// Pairs per step; 0 or anything ≥ the dataset size means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            base_lr: 2e-5,
            final_lr: 4e-8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.02,
            clip_norm: 10.0,
            initial_tau: 0.01,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok =
            self.final_lr >= 0.0 && self.final_lr <= self.base_lr && self.base_lr.is_finite();
        if !lr_ok {
            return Err(Error::config(format!(
                "learning rates must satisfy 0 <= final_lr <= base_lr, got {} and {}",
                self.final_lr, self.base_lr
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if !(self.initial_tau > 0.0) || !self.initial_tau.is_finite() {
            return Err(Error::config("initial_tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::config(
                "eps must be positive and weight_decay non-negative",
            ));
        }
        Ok(())
    }

    /// Sets one field from its `key=value` spelling. Returns `Ok(false)` for
    /// keys that are not fields of this struct.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "steps" => self.steps = num(key, value)?,
            "base_lr" => self.base_lr = num(key, value)?,
            "final_lr" => self.final_lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "initial_tau" => self.initial_tau = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "base_lr={}", self.base_lr);
        let _ = writeln!(s, "final_lr={}", self.final_lr);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "eps={}", self.eps);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm);
        let _ = writeln!(s, "initial_tau={}", self.initial_tau);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parameters excluded from weight decay: biases, norms, embeddings, τ.
pub fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    matches!(
        leaf,
        "wq" | "wk" | "wv" | "wo" | "mlp_w1" | "mlp_w2" | "patch_w" | "proj"
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,loss,lr,tau\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.loss, r.lr, r.tau);
    }
    s
}

/// Trains `params` in place. Each trace row holds the loss, learning rate
/// and temperature in effect before that step's update.
pub fn train(
    dataset: &AlignmentBatch,
    params: &mut ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    model.validate()?;
    let masks = VideoMasks::new(&model.video)?;
    let n = dataset.len();
    let batch = if config.batch_size == 0 {
        n
    } else {
        config.batch_size.min(n)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let decay: Vec<bool> = params
        .named()
        .iter()
        .map(|(name, _)| decays(name))
        .collect();
    let mut opt = AdamW::new(config.beta1, config.beta2, config.eps, config.weight_decay);
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let loss_and_grad = if batch == n {
            loss_and_grads(dataset, params, model, &masks)?
        } else {
            if cursor + batch > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let sub = dataset.select(&order[cursor..cursor + batch])?;
            cursor += batch;
            loss_and_grads(&sub, params, model, &masks)?
        };
        let (loss, grads) = loss_and_grad;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let lr = cosine_lr(step, config.steps, config.base_lr, config.final_lr);
        trace.push(TraceRow {
            step,
            loss,
            lr,
            tau: params.tau(),
        });

        let mut grads: Vec<Tensor> = grads.named().into_iter().map(|(_, t)| t).collect();
        let mut values: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t).collect();
        clip_global_norm(&mut grads.iter_mut().collect::<Vec<_>>(), config.clip_norm);
        opt.step(
            &mut values.iter_mut().collect::<Vec<_>>(),
            &grads.iter().collect::<Vec<_>>(),
            &decay,
            lr,
        );
        params.assign(&values)?;
        let log_tau = &mut params.log_tau.data_mut()[0];
        *log_tau = log_tau.max(LOG_TAU_FLOOR);
    }
    Ok(trace)
}
