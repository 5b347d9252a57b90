//! Bias-corrected Adam and the training configuration.

use serde::{Deserialize, Serialize};

use super::model::{CnnModel, Gradients};

/// Adam with mini-batches and a mean-squared-error loss.
///
/// The default step is `3e-4`. At `1e-3` the first few sign-like Adam steps
/// shift every 3x3x3 layer (fan-in up to 864) so far that the final ReLU goes
/// dead and the network collapses to a zero output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 3e-4, batch: 4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.epochs > 0
            && self.batch > 0
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("invalid training configuration {self:?}")))
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &CnnModel) -> Self {
        Self { m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), step: 0 }
    }
}

/// One Adam update of `params` in place; `t` is the 1-based step number.
pub fn adam_update(params: &mut [f32], grads: &[f32], m: &mut [f32], v: &mut [f32], t: u64, cfg: &TrainConfig) {
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let (ic1, ic2) = ((1.0 / c1) as f32, (1.0 / c2) as f32);
    let (lr, eps) = (cfg.lr as f32, cfg.eps as f32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let mhat = m[i] * ic1;
        let vhat = v[i] * ic2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

pub fn adam_step(state: &mut AdamState, model: &mut CnnModel, grads: &Gradients, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step;
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[l];
        let (mw, mb) = &mut state.m.layers[l];
        let (vw, vb) = &mut state.v.layers[l];
        adam_update(&mut layer.weights, gw, mw, vw, t, cfg);
        adam_update(&mut layer.bias, gb, mb, vb, t, cfg);
    }
}
