//! Dense-network engine: MLPs with manual reverse-mode gradients, a
//! Gaussian policy head, Adam, global-norm clipping and running
//! observation normalization. Everything runs in `f64`.

mod adam;
mod gaussian;
mod matrix;
mod mlp;
mod normalizer;

pub use adam::{clip_global_norm, Adam};
pub use gaussian::{entropy, log_prob, log_prob_grads, GaussianPolicy};
pub use matrix::Matrix;
pub use mlp::{elu, Init, Mlp, Tape};
pub use normalizer::RunningNormalizer;

/// Largest relative discrepancy between `analytic` and central finite
/// differences of `loss` over every parameter, using step `h`.
///
/// Relative error is `|a - n| / max(1, |a|, |n|)`: near-zero gradients are
/// compared absolutely.
pub fn finite_difference_check<F>(params: &mut [f64], analytic: &[f64], h: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = loss(params);
        params[i] = orig - h;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
