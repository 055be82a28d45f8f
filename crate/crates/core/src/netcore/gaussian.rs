use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::Mlp;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian policy whose standard deviation does not depend on
/// the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, log_std_init: f64) -> Self {
        let dim = mean.output_dim();
        Self {
            mean,
            log_std: vec![log_std_init; dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        log_prob(mean, &self.log_std, action)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.log_std)
    }

    /// Log-probabilities of each row of `actions` under the row means.
    pub fn log_prob_batch(&self, means: &Matrix, actions: &Matrix) -> Vec<f64> {
        (0..means.rows())
            .map(|r| log_prob(means.row(r), &self.log_std, actions.row(r)))
            .collect()
    }
}

pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

/// Partial derivatives of `log_prob` with respect to the mean and to each
/// `log_std` component, written into the two output slices.
pub fn log_prob_grads(
    mean: &[f64],
    log_std: &[f64],
    action: &[f64],
    d_mean: &mut [f64],
    d_log_std: &mut [f64],
) {
    for i in 0..mean.len() {
        let inv_var = (-2.0 * log_std[i]).exp();
        let diff = action[i] - mean[i];
        d_mean[i] = diff * inv_var;
        d_log_std[i] = diff * diff * inv_var - 1.0;
    }
}
