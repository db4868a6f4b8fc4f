//! Fully-connected layer with manual forward/backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    #[serde(skip)]
    pub(crate) in_dim: usize,
    #[serde(skip)]
    pub(crate) out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Restores dimensions after deserialization and checks buffer sizes.
    pub(crate) fn with_dims(mut self, in_dim: usize, out_dim: usize) -> Option<Self> {
        if self.w.len() != in_dim * out_dim || self.b.len() != out_dim {
            return None;
        }
        self.in_dim = in_dim;
        self.out_dim = out_dim;
        Some(self)
    }

    pub fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        out.extend(
            self.w
                .chunks_exact(self.in_dim)
                .zip(&self.b)
                .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, x)| acc + w * x)),
        );
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input `x`,
    /// and writes the input gradient into `dx` when requested.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &mut grad.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    pub(crate) fn zero_like(&self) -> Dense {
        Dense::zeros(self.in_dim, self.out_dim)
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.w
            .iter_mut()
            .chain(self.b.iter_mut())
            .for_each(|v| *v *= s);
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }
}
