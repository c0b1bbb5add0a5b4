//! SGD with heavy-ball momentum and step learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_lr: f64,
    /// `(epoch, multiplier)` pairs; each multiplier applies from its epoch on.
    pub milestones: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn new(initial_lr: f64, milestones: Vec<(usize, f64)>) -> Result<Self> {
        let schedule = Schedule {
            initial_lr,
            milestones,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn constant(lr: f64) -> Self {
        Schedule {
            initial_lr: lr,
            milestones: Vec::new(),
        }
    }

    /// 0.001, ×0.1 at epochs 81 and 122.
    pub fn cifar() -> Self {
        Schedule {
            initial_lr: 0.001,
            milestones: vec![(81, 0.1), (122, 0.1)],
        }
    }

    /// 0.1, ×0.1 at epochs 30 and 60 (90-epoch recipe).
    pub fn imagenet() -> Self {
        Schedule {
            initial_lr: 0.1,
            milestones: vec![(30, 0.1), (60, 0.1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.initial_lr)));
        }
        if self.milestones.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Parameter("milestone epochs must be strictly increasing".into()));
        }
        if self.milestones.iter().any(|&(_, m)| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Parameter("milestone multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|&&(at, _)| at <= epoch)
            .fold(self.initial_lr, |lr, &(_, m)| lr * m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub buffers: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor], lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(OptimizerState {
            buffers: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            momentum,
            weight_decay,
            lr,
        })
    }
}

/// One step of `g' = g + wd·w; buf ← m·buf + g'; w ← w − lr·buf`.
///
/// `decay[i] == false` exempts parameter `i` from weight decay; an empty mask
/// decays everything.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState, decay: &[bool]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.buffers.len() {
        return Err(Error::dim(
            "sgd_step",
            &[params.len(), grads.len()],
            &[state.buffers.len()],
        ));
    }
    if !decay.is_empty() && decay.len() != params.len() {
        return Err(Error::dim("sgd_step", &[decay.len()], &[params.len()]));
    }
    for (i, ((w, g), buf)) in params.iter_mut().zip(grads).zip(&mut state.buffers).enumerate() {
        if w.shape() != g.shape() || w.shape() != buf.shape() {
            return Err(Error::dim("sgd_step", w.shape(), g.shape()));
        }
        let wd = if decay.get(i).copied().unwrap_or(true) {
            state.weight_decay
        } else {
            0.0
        };
        let (m, lr) = (state.momentum, state.lr);
        for ((wv, gv), bv) in w.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
            *bv = m * *bv + gv + wd * *wv;
            *wv -= lr * *bv;
        }
    }
    Ok(())
}
