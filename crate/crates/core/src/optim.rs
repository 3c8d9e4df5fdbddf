//! First-order optimizers over the flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    /// AdamW (decoupled weight decay).
    AdamFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerParams {
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers in the model's parameter layout. SGD uses only `m` (velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let v = match kind {
            OptimizerKind::AdamFamily => vec![0.0; len],
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Self {
            kind,
            t: 0,
            m: vec![0.0; len],
            v,
        }
    }

    /// One update of `params` in place. `lr = 0` leaves `params` untouched.
    pub fn step(
        &mut self,
        params: &mut [f32],
        grad: &[f32],
        lr: f64,
        weight_decay: f64,
        hp: &OptimizerParams,
    ) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::AdamFamily => {
                let (b1, b2) = (hp.beta1, hp.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i] as f64;
                    let m = b1 * self.m[i] as f64 + (1.0 - b1) * g;
                    let v = b2 * self.v[i] as f64 + (1.0 - b2) * g * g;
                    self.m[i] = m as f32;
                    self.v[i] = v as f32;
                    let p = params[i] as f64;
                    let update = (m / c1) / ((v / c2).sqrt() + hp.eps) + weight_decay * p;
                    params[i] = (p - lr * update) as f32;
                }
            }
            OptimizerKind::SgdMomentum => {
                for i in 0..params.len() {
                    let p = params[i] as f64;
                    let g = grad[i] as f64 + weight_decay * p;
                    let m = hp.momentum * self.m[i] as f64 + g;
                    self.m[i] = m as f32;
                    params[i] = (p - lr * m) as f32;
                }
            }
        }
    }
}

/// Global L2 norm of `grad`, computed in f64.
pub fn global_norm(grad: &[f32]) -> f64 {
    grad.iter()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grad` so its global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f32], max_norm: f64) -> f64 {
    let n = global_norm(grad);
    if max_norm > 0.0 && n > max_norm {
        let s = (max_norm / n) as f32;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    n
}
