//! SGD with plain L2 weight decay and a polynomial learning-rate schedule
//! with linear warmup.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Real, Tensor};

// ── schedule ──

fn d_lr0() -> Real {
    0.01
}
fn d_wd() -> Real {
    5e-4
}
fn d_lr_min() -> Real {
    1e-5
}
fn d_warmup() -> usize {
    5
}
fn d_total() -> usize {
    50
}
fn d_power() -> Real {
    0.9
}
fn d_batch() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: Real,
    pub weight_decay: Real,
    pub lr_min: Real,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub poly_power: Real,
    pub batch_size: usize,
    pub momentum: Real,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: d_lr0(),
            weight_decay: d_wd(),
            lr_min: d_lr_min(),
            warmup_epochs: d_warmup(),
            total_epochs: d_total(),
            poly_power: d_power(),
            batch_size: d_batch(),
            momentum: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min < self.lr0) {
            return Err(Error::Config(format!(
                "lr_min {} must be below lr0 {}",
                self.lr_min, self.lr0
            )));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup {} must be shorter than the run ({} epochs)",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0,1)", self.momentum)));
        }
        Ok(())
    }
}

/// Linear warmup to lr0, then polynomial decay toward lr_min. Continuous at
/// the boundary: the last warmup epoch and the t=0 decay value both equal lr0.
pub fn poly_lr(epoch: usize, cfg: &OptimConfig) -> Result<Real> {
    if epoch >= cfg.total_epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.total_epochs
        )));
    }
    if epoch < cfg.warmup_epochs {
        return Ok(cfg.lr0 * (epoch + 1) as Real / cfg.warmup_epochs as Real);
    }
    let t = (epoch - cfg.warmup_epochs) as Real;
    let total = (cfg.total_epochs - cfg.warmup_epochs) as Real;
    Ok(cfg.lr_min + (cfg.lr0 - cfg.lr_min) * (1.0 - t / total).powf(cfg.poly_power))
}

// ── updates ──

/// Per-parameter gradients keyed by tensor name.
pub type GradStore = BTreeMap<String, Tensor>;

/// p <- p - lr * (g + wd * p) on every tensor with a gradient entry.
/// Values stay on the f32 grid so checkpoints round-trip bitwise.
pub fn sgd_step(params: &mut Params, grads: &GradStore, lr: Real, weight_decay: Real) -> Result<()> {
    for (name, g) in grads {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGrad { name: name.clone() });
        }
    }
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv + weight_decay * *pv);
        }
        p.quantize_f32();
    }
    Ok(())
}

/// SGD with an optional heavy-ball term; momentum 0 reduces to `sgd_step`.
#[derive(Debug, Default)]
pub struct Optimizer {
    velocity: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new() -> Self {
        Optimizer::default()
    }

    pub fn step(
        &mut self,
        params: &mut Params,
        grads: &GradStore,
        lr: Real,
        weight_decay: Real,
        momentum: Real,
    ) -> Result<()> {
        if momentum == 0.0 {
            return sgd_step(params, grads, lr, weight_decay);
        }
        for (name, g) in grads {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad { name: name.clone() });
            }
        }
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = momentum * *vv + gv + weight_decay * *pv;
                *pv -= lr * *vv;
            }
            p.quantize_f32();
        }
        Ok(())
    }
}

// ── tests ──
