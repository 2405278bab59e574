use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One-cycle learning-rate policy: linear warm-up from `peak / div_factor`
/// to `peak`, then cosine decay to `peak / (div_factor * final_div_factor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneCycle {
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            peak_lr: 0.003,
            warmup_fraction: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }
}

impl OneCycle {
    /// Step index at which the rate peaks for a run of `total_steps`.
    pub fn peak_step(&self, total_steps: usize) -> usize {
        let last = total_steps.saturating_sub(1) as f64;
        (self.warmup_fraction * last).round() as usize
    }

    pub fn lr(&self, step: usize, total_steps: usize) -> f64 {
        let initial = self.peak_lr / self.div_factor;
        let floor = initial / self.final_div_factor;
        let last = total_steps.saturating_sub(1);
        let peak = self.peak_step(total_steps);
        let step = step.min(last);
        if step <= peak {
            if peak == 0 {
                return self.peak_lr;
            }
            let f = step as f64 / peak as f64;
            initial + (self.peak_lr - initial) * f
        } else {
            let f = (step - peak) as f64 / (last - peak) as f64;
            floor + (self.peak_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * f).cos())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: OneCycle,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            schedule: OneCycle::default(),
        }
    }
}

/// Adam moments and step counter for one parameter store.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub total_steps: usize,
    pub step: usize,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig, total_steps: usize) -> Self {
        Self {
            config,
            total_steps: total_steps.max(1),
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr(self.step, self.total_steps)
    }

    /// One bias-corrected Adam update at the scheduled learning rate.
    pub fn adam_step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<f64> {
        if grads.len() != params.len() {
            return Err(Error::structural(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let lr = self.current_lr();
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::structural(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((theta, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(lr)
    }

    /// Builds a loss with `build`, backpropagates it and applies one update.
    /// Returns the loss value.
    pub fn minimize(
        &mut self,
        params: &mut ParamStore,
        build: impl FnOnce(&mut Graph, &ParamStore) -> Result<Var>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let mut acc = params.zeros_like();
        grads.accumulate_params(&g, &mut acc);
        if acc.iter().any(|t| !t.all_finite()) {
            return Err(Error::NumericFault {
                op: "backward".into(),
                detail: "non-finite parameter gradient".into(),
            });
        }
        self.adam_step(params, &acc)?;
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.25);
        let mut st = OptimizerState::new(&p, AdamConfig::default(), 10);
        for _ in 0..5 {
            st.adam_step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p.tensors()[0].item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut st = OptimizerState::new(&p, AdamConfig::default(), 100);
        let lr = st.adam_step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps)
        let expected = -lr / (1.0 + 1e-8);
        assert!((p.tensors()[0].item() - expected).abs() < 1e-18);
    }

    #[test]
    fn schedule_endpoints() {
        let s = OneCycle::default();
        let total = 1000;
        let peak = s.peak_step(total);
        assert!(s.lr(0, total) < s.peak_lr);
        assert_eq!(s.lr(peak, total), 0.003);
        assert!(s.lr(total - 1, total) <= 0.01 * s.peak_lr);
        let lrs: Vec<f64> = (0..total).map(|t| s.lr(t, total)).collect();
        assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
    }
}
