use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use segadapt_tensor::Array;

use crate::error::{invalid, Result};
use crate::model::{ParamStore, ENCODER_PREFIX};

/// Learning rate at iteration `t`: a linear ramp from 0 to `base` over
/// `warmup` iterations, then a linear decay reaching 0 at `total`.
pub fn lr_at(t: u64, base: f64, warmup: u64, total: u64) -> f64 {
    if t < warmup {
        return base * t as f64 / warmup as f64;
    }
    if t >= total {
        return 0.0;
    }
    base * (total - t) as f64 / (total - warmup) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Learning-rate multiplier for every parameter outside the encoder.
    pub head_lr_mult: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            head_lr_mult: 10.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !betas || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.head_lr_mult > 0.0) {
            return invalid("optimizer", format!("{self:?}"));
        }
        Ok(())
    }

    /// Learning rate of parameter `name` when the base rate is `lr`.
    pub fn lr_for(&self, name: &str, lr: f64) -> f64 {
        if name.starts_with(ENCODER_PREFIX) {
            lr
        } else {
            lr * self.head_lr_mult
        }
    }

    /// Normalization parameters are not decayed.
    pub fn decay_for(&self, name: &str) -> f64 {
        if name.contains("norm") {
            0.0
        } else {
            self.weight_decay
        }
    }
}

/// Adam with decoupled weight decay and per-group learning rates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub m: ParamStore,
    pub v: ParamStore,
    /// Number of updates applied so far.
    pub steps: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: AdamWConfig) -> Result<Self> {
        cfg.validate()?;
        let mut m = ParamStore::new();
        for (name, p) in params.iter() {
            m.insert(name, Array::zeros(p.shape().to_vec()));
        }
        Ok(Self {
            cfg,
            v: m.clone(),
            m,
            steps: 0,
        })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Array>, lr: f64) -> Result<()> {
        params.check_same_layout(&self.m)?;
        self.steps += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(self.steps as f64);
        let bc2 = 1.0 - c.beta2.powf(self.steps as f64);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else {
                return invalid("optimizer", format!("no gradient for {name}"));
            };
            if g.shape() != p.shape() {
                return invalid("optimizer", format!("gradient shape {:?} for {name}", g.shape()));
            }
            let lr_p = c.lr_for(name, lr);
            let shrink = 1.0 - lr_p * c.decay_for(name);
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *pv *= shrink;
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                *pv -= lr_p * (*mv / bc1) / ((*vv / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
