//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// First and second moment estimates for a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update of `params` given `grads`. `t` is the already-incremented step (t >= 1).
    pub fn update<'a, P, G>(&mut self, params: P, grads: G, t: u64, cfg: &AdamConfig)
    where
        P: Iterator<Item = &'a mut f64>,
        G: Iterator<Item = &'a f64>,
    {
        debug_assert!(t >= 1);
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for (((p, g), m), v) in params
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}
