use std::f64::consts::PI;

use diffcore::Tensor;

use crate::error::{HsdaError, Result};
use crate::model::ParamStore;

/// SGD with momentum and L2 weight decay folded into the gradient:
/// `g' = g + wd·w`, `v ← μ·v + g'`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(params: &ParamStore<f32>, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.values().iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<f32>] {
        &self.velocity
    }

    /// `grads[i]` belongs to parameter `i`; `None` means no gradient reached
    /// it and only weight decay applies.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(HsdaError::Usage(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(HsdaError::NonFinite {
                        what: format!("gradient of {}", params.names()[i]),
                    });
                }
            }
        }
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for (i, (w, v)) in params.values_mut().iter_mut().zip(self.velocity.iter_mut()).enumerate() {
            let g = grads[i].as_ref().map(|g| g.data());
            for (j, (wj, vj)) in w.data_mut().iter_mut().zip(v.data_mut()).enumerate() {
                let gj = g.map_or(0.0, |g| g[j]) + wd * *wj;
                *vj = mu * *vj + gj;
                *wj -= lr * *vj;
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at epoch 0 to `lr_min` at `t_max`.
pub fn cosine_lr(epoch: usize, lr0: f64, t_max: usize, lr_min: f64) -> f64 {
    let e = epoch.min(t_max) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * e / t_max.max(1) as f64).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Stops once the monitored value has not strictly improved for
/// `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> StopDecision {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert!((cosine_lr(0, 0.01, 100, 0.0) - 0.01).abs() < 1e-15);
        assert!((cosine_lr(50, 0.01, 100, 0.0) - 0.005).abs() < 1e-15);
        assert!(cosine_lr(100, 0.01, 100, 0.0).abs() < 1e-15);
    }

    #[test]
    fn stopper_counts_from_best() {
        let mut s = EarlyStopping::new(3);
        assert_eq!(s.update(0, 0.5), StopDecision::Improved);
        assert_eq!(s.update(1, 0.5), StopDecision::Wait);
        assert_eq!(s.update(2, 0.7), StopDecision::Improved);
        assert_eq!(s.update(3, 0.6), StopDecision::Wait);
        assert_eq!(s.update(4, 0.7), StopDecision::Wait);
        assert_eq!(s.update(5, 0.1), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 2);
    }
}
