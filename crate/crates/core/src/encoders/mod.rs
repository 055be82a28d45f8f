//! Context encoder, history adapter with epinet, and uncertainty gating.

mod epinet;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use epinet::{encoder_loss, AdapterGrads, Epinet, EpinetAdapter, EpinetStats};

use crate::envsim::{Context, CONTEXT_FEATURES};
use crate::error::{Error, Result};
use crate::netcore::{Init, Matrix, Mlp};

/// Privileged encoder `f: context -> R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoder {
    pub net: Mlp,
}

impl ContextEncoder {
    /// Small output gain so a fresh encoder starts near the zero latent.
    pub const OUTPUT_GAIN: f64 = 0.01;

    pub fn new<R: Rng + ?Sized>(hidden: &[usize], latent_dim: usize, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![CONTEXT_FEATURES];
        sizes.extend_from_slice(hidden);
        sizes.push(latent_dim);
        Ok(Self {
            net: Mlp::new(&sizes, Init::with_output_gain(Self::OUTPUT_GAIN), rng)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn encode(&self, c: &Context) -> Vec<f64> {
        self.net.forward(&c.features()).expect("feature width matches")
    }

    /// One context feature row in, one latent row out.
    pub fn encode_batch(&self, features: &Matrix) -> Result<Matrix> {
        self.net.forward_batch(features)
    }
}

/// The robust anchor latent.
pub fn z_rob(latent_dim: usize) -> Vec<f64> {
    vec![0.0; latent_dim]
}

/// Gating parameters mapping uncertainty to a blend weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub beta: f64,
    pub delta: f64,
    pub q_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub alpha_at_max: f64,
}

impl AlphaParams {
    pub const U_MIN: f64 = 0.90;
    pub const U_MAX: f64 = 0.99;
    pub const ALPHA_AT_MAX: f64 = 0.01;

    /// Parameters placing `alpha_at_max` at `q_max` with the shift at `delta`.
    pub fn from_quantiles(delta: f64, q_max: f64, alpha_at_max: f64) -> Result<Self> {
        if !(q_max > delta) || !delta.is_finite() || !q_max.is_finite() {
            return Err(Error::Calibration(format!(
                "degenerate uncertainty quantiles: shift {delta}, upper {q_max}"
            )));
        }
        if !(alpha_at_max > 0.0 && alpha_at_max < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha at max must lie in (0, 1), got {alpha_at_max}")));
        }
        Ok(Self {
            beta: (1.0 / alpha_at_max).ln() / (q_max - delta),
            delta,
            q_max,
            u_min: Self::U_MIN,
            u_max: Self::U_MAX,
            alpha_at_max,
        })
    }

    pub fn alpha(&self, u: f64) -> f64 {
        alpha(u, self.beta, self.delta)
    }
}

/// `exp(-β · max(u - δ, 0))`.
pub fn alpha(u: f64, beta: f64, delta: f64) -> f64 {
    (-beta * (u - delta).max(0.0)).exp()
}

/// Nearest-rank quantile: the value at 1-based rank `⌈q·n⌉` of the sorted data.
pub fn nearest_rank(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Calibration("empty validation set".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1], got {q}")));
    }
    let n = sorted.len();
    // guard against q·n landing a hair above an integer
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// Fits `(β, δ)` so that `α = 1` up to the `u_min` quantile and `α =
/// alpha_at_max` at the `u_max` quantile of the validation uncertainties.
pub fn finetune_alpha(validation_u: &[f64], u_min: f64, u_max: f64, alpha_at_max: f64) -> Result<AlphaParams> {
    if validation_u.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(Error::Calibration("validation uncertainties must be finite and non-negative".into()));
    }
    if !(u_min < u_max) {
        return Err(Error::InvalidArgument(format!("quantiles out of order: {u_min} >= {u_max}")));
    }
    let mut sorted = validation_u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let delta = nearest_rank(&sorted, u_min)?;
    let q_max = nearest_rank(&sorted, u_max)?;
    let mut p = AlphaParams::from_quantiles(delta, q_max, alpha_at_max)?;
    p.u_min = u_min;
    p.u_max = u_max;
    Ok(p)
}

/// Blends the adapter's sample mean toward the zero latent by the gated
/// confidence. Draws fresh indices from `rng`.
pub fn robust_adapt<R: Rng + ?Sized>(
    adapter: &EpinetAdapter,
    history: &[f64],
    params: &AlphaParams,
    samples: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let stats = adapter.stats(history, samples, rng)?;
    let a = params.alpha(stats.uncertainty);
    Ok((blend(&stats.mean, a), a))
}

/// `(1 − α)·z_rob + α·μ̂` with `z_rob = 0`.
pub fn blend(mean: &[f64], alpha: f64) -> Vec<f64> {
    mean.iter().map(|m| alpha * m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn fresh_context_encoder_is_near_zero() {
        let f = ContextEncoder::new(&[32, 32], 8, &mut rng::stream(0, rng::stream::ENCODER_INIT)).unwrap();
        let mut c = Context::nominal();
        c.frozen_actuator = Some(1);
        let z = f.encode(&c);
        assert_eq!(z.len(), 8);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.2, "norm {norm}");
        assert_eq!(z, f.encode(&c));
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(0.3, 5.0, 0.5), 1.0);
        assert_eq!(alpha(0.5, 5.0, 0.5), 1.0);
        let p = AlphaParams::from_quantiles(0.5, 1.0, 0.01).unwrap();
        assert!((p.beta - 100f64.ln() / 0.5).abs() < 1e-12);
        assert!((p.beta - 9.2103).abs() < 1e-4);
        assert!((p.alpha(0.75) - 0.1).abs() < 1e-12);
        assert!((p.alpha(1.0) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.90).unwrap(), 90.0);
        assert_eq!(nearest_rank(&v, 0.99).unwrap(), 99.0);
        let p = finetune_alpha(&v, 0.90, 0.99, 0.01).unwrap();
        assert_eq!(p.delta, 90.0);
        assert_eq!(p.q_max, 99.0);
        assert!((p.beta - 100f64.ln() / 9.0).abs() < 1e-12);
        assert!((p.beta - 0.5117).abs() < 1e-4);
        let ones = v.iter().filter(|&&u| p.alpha(u) == 1.0).count();
        assert_eq!(ones, 90);
    }

    #[test]
    fn degenerate_validation_set_is_rejected() {
        let v = vec![0.7; 1000];
        assert!(matches!(finetune_alpha(&v, 0.9, 0.99, 0.01), Err(Error::Calibration(_))));
        assert!(finetune_alpha(&[], 0.9, 0.99, 0.01).is_err());
    }

    #[test]
    fn blend_examples() {
        let mu = vec![1.0; 8];
        assert_eq!(blend(&mu, 1.0), mu);
        assert_eq!(blend(&mu, 0.0), z_rob(8));
        for v in blend(&mu, 0.1) {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn robust_adapt_point_adapter_has_full_confidence() {
        let a = EpinetAdapter::new(
            4,
            &[6],
            2,
            None,
            &mut rng::stream(1, 1),
            &mut rng::stream(1, 2),
            &mut rng::stream(1, 3),
        )
        .unwrap();
        let p = AlphaParams::from_quantiles(0.0, 1.0, 0.01).unwrap();
        let h = [0.1, 0.2, 0.3, 0.4];
        let (z, al) = robust_adapt(&a, &h, &p, 8, &mut rng::stream(1, 4)).unwrap();
        assert_eq!(al, 1.0);
        assert_eq!(z, a.base.forward(&h).unwrap());
    }

    proptest! {
        #[test]
        fn alpha_is_monotone_and_bounded(beta in 0.01f64..50.0, delta in 0.0f64..5.0, u1 in 0.0f64..10.0, du in 0.0f64..10.0) {
            let (a1, a2) = (alpha(u1, beta, delta), alpha(u1 + du, beta, delta));
            prop_assert!(a1 >= a2);
            prop_assert!((0.0..=1.0).contains(&a1));
            if u1 <= delta {
                prop_assert_eq!(a1, 1.0);
            } else if beta * (u1 - delta) > 1e-12 {
                prop_assert!(a1 < 1.0);
            }
        }

        #[test]
        fn blend_stays_on_segment(mu in proptest::collection::vec(-5.0f64..5.0, 8), a in 0.0f64..=1.0) {
            let z = blend(&mu, a);
            let nz: f64 = z.iter().map(|v| v * v).sum();
            let nm: f64 = mu.iter().map(|v| v * v).sum();
            prop_assert!(nz <= nm + 1e-12);
        }
    }
}
