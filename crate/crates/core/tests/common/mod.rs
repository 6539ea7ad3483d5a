#![allow(dead_code)]

use fets_core::fedcore::ModelParams;
use fets_core::reftrain::Trainer;
use fets_core::volumes::{IntensityVolume, LabelVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One sample of a separable quadratic loss `0.5 * sum_j a_j (theta_j - x_j)^2`.
#[derive(Debug, Clone)]
pub struct QuadSample {
    pub a: Vec<f64>,
    pub x: Vec<f64>,
}

pub type QuadData = Vec<QuadSample>;

/// Test-only trainer: full-batch gradient descent on the mean quadratic loss.
pub struct QuadraticTrainer {
    pub dim: usize,
}

pub fn mean_gradient(theta: &[f64], data: &QuadData) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for s in data {
        for j in 0..theta.len() {
            g[j] += s.a[j] * (theta[j] - s.x[j]);
        }
    }
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

pub fn mean_loss(theta: &[f64], data: &QuadData) -> f64 {
    let total: f64 = data
        .iter()
        .map(|s| (0..theta.len()).map(|j| 0.5 * s.a[j] * (theta[j] - s.x[j]).powi(2)).sum::<f64>())
        .sum();
    total / data.len() as f64
}

pub fn gradient_step(theta: &[f64], data: &QuadData, lr: f64) -> Vec<f64> {
    let g = mean_gradient(theta, data);
    theta.iter().zip(g).map(|(t, g)| t - lr * g).collect()
}

impl Trainer for QuadraticTrainer {
    type Dataset = QuadData;

    fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::new((0..self.dim).map(|_| rng.random_range(-2.0..2.0)).collect(), 4).unwrap()
    }

    fn train(&self, params: &ModelParams, data: &QuadData, epochs: usize, lr: f64, _seed: u64) -> ModelParams {
        let mut theta = params.values().to_vec();
        for _ in 0..epochs {
            theta = gradient_step(&theta, data, lr);
        }
        ModelParams::new(theta, params.wire_width()).unwrap()
    }

    fn validate(&self, params: &ModelParams, data: &QuadData) -> f64 {
        1.0 / (1.0 + mean_loss(params.values(), data))
    }

    fn predict(&self, _params: &ModelParams, image: &IntensityVolume) -> LabelVolume {
        LabelVolume::zeros(*image.geometry())
    }
}

pub fn quad_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> QuadData {
    (0..n)
        .map(|_| QuadSample {
            a: (0..dim).map(|_| rng.random_range(0.5..2.0)).collect(),
            x: (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
        })
        .collect()
}
