//! History adaptation network with an additive epinet.
//!
//! `φ(h, ξ) = φ_base(h) + (η_L(h̃, ξ) − η_P(h̃, ξ))ᵀ ξ` where `h̃` is the
//! history concatenated with the last hidden layer of `φ_base`, treated as a
//! constant (no gradient flows back into the base network through it).
//! `η_P` is a frozen prior with the same shape as `η_L`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::netcore::{Init, Matrix, Mlp, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epinet {
    learnable: Mlp,
    prior: Mlp,
    index_dim: usize,
    latent_dim: usize,
}

impl Epinet {
    /// `feature_dim` is the width of `h̃`. Both branches use the same
    /// initialization scheme with independent generators.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden: &[usize],
        index_dim: usize,
        latent_dim: usize,
        learnable_rng: &mut R,
        prior_rng: &mut R,
    ) -> Result<Self> {
        let sizes = epinet_sizes(feature_dim, hidden, index_dim, latent_dim);
        let init = Init::with_output_gain(1.0);
        Ok(Self {
            learnable: Mlp::new(&sizes, init, learnable_rng)?,
            prior: Mlp::new(&sizes, init, prior_rng)?,
            index_dim,
            latent_dim,
        })
    }

    pub fn from_parts(learnable: Mlp, prior: Mlp, index_dim: usize, latent_dim: usize) -> Result<Self> {
        check_len(learnable.num_params(), prior.num_params())?;
        check_len(index_dim * latent_dim, learnable.output_dim())?;
        Ok(Self {
            learnable,
            prior,
            index_dim,
            latent_dim,
        })
    }

    pub fn learnable(&self) -> &Mlp {
        &self.learnable
    }

    pub fn learnable_mut(&mut self) -> &mut Mlp {
        &mut self.learnable
    }

    pub fn prior(&self) -> &Mlp {
        &self.prior
    }

    pub fn index_dim(&self) -> usize {
        self.index_dim
    }
}

fn epinet_sizes(feature_dim: usize, hidden: &[usize], m: usize, d: usize) -> Vec<usize> {
    let mut sizes = vec![feature_dim + m];
    sizes.extend_from_slice(hidden);
    sizes.push(m * d);
    sizes
}

/// Gradients of the adapter's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub base: Vec<f64>,
    pub learnable: Vec<f64>,
}

impl AdapterGrads {
    pub fn zeros_like(adapter: &EpinetAdapter) -> Self {
        Self {
            base: vec![0.0; adapter.base.num_params()],
            learnable: adapter
                .epinet
                .as_ref()
                .map_or_else(Vec::new, |e| vec![0.0; e.learnable.num_params()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpinetAdapter {
    pub base: Mlp,
    /// `None` gives a point adapter: `φ(h, ξ) = φ_base(h)` for all `ξ`.
    pub epinet: Option<Epinet>,
}

impl EpinetAdapter {
    pub fn new<R: Rng + ?Sized>(
        history_dim: usize,
        base_hidden: &[usize],
        latent_dim: usize,
        epinet: Option<(&[usize], usize)>,
        base_rng: &mut R,
        learnable_rng: &mut R,
        prior_rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![history_dim];
        sizes.extend_from_slice(base_hidden);
        sizes.push(latent_dim);
        let base = Mlp::new(&sizes, Init::with_output_gain(1.0), base_rng)?;
        let feature_dim = history_dim + base_hidden.last().copied().unwrap_or(0);
        let epinet = match epinet {
            Some((hidden, m)) => Some(Epinet::new(
                feature_dim,
                hidden,
                m,
                latent_dim,
                learnable_rng,
                prior_rng,
            )?),
            None => None,
        };
        Ok(Self { base, epinet })
    }

    pub fn history_dim(&self) -> usize {
        self.base.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.base.output_dim()
    }

    /// Random-index dimension `m`; zero for a point adapter.
    pub fn index_dim(&self) -> usize {
        self.epinet.as_ref().map_or(0, |e| e.index_dim)
    }

    /// Draws `rows × m` standard-normal index inputs.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix {
        let m = self.index_dim();
        Matrix::from_vec(rows, m, (0..rows * m).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// `h̃`: each history row followed by the base network's last hidden layer.
    pub fn features(&self, histories: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        self.base.forward_traced(histories, &mut tape)?;
        Ok(stop_gradient_features(histories, &tape))
    }

    /// Additive epinet term for `n` index rows per feature row, or all
    /// zeros for a point adapter. `indices` has `features.rows() * n` rows.
    pub fn epinet_term(&self, features: &Matrix, indices: &Matrix, n: usize) -> Result<Matrix> {
        self.epinet_term_traced(features, indices, n, None)
    }

    fn epinet_term_traced(
        &self,
        features: &Matrix,
        indices: &Matrix,
        n: usize,
        tape: Option<&mut Tape>,
    ) -> Result<Matrix> {
        let d = self.latent_dim();
        let rows = features.rows() * n;
        check_len(rows, indices.rows())?;
        let Some(epi) = &self.epinet else {
            return Ok(Matrix::zeros(rows, d));
        };
        check_len(epi.index_dim, indices.cols())?;
        let input = epinet_input(features, indices, n);
        let learn = match tape {
            Some(t) => epi.learnable.forward_traced(&input, t)?.clone(),
            None => epi.learnable.forward_batch(&input)?,
        };
        let prior = epi.prior.forward_batch(&input)?;
        let m = epi.index_dim;
        let mut out = Matrix::zeros(rows, d);
        for r in 0..rows {
            let (l, p, xi) = (learn.row(r), prior.row(r), indices.row(r));
            let o = out.row_mut(r);
            for i in 0..m {
                for j in 0..d {
                    o[j] += (l[i * d + j] - p[i * d + j]) * xi[i];
                }
            }
        }
        Ok(out)
    }

    /// `φ(h, ξ)` for a single history and index.
    pub fn forward(&self, history: &[f64], index: &[f64]) -> Result<Vec<f64>> {
        let h = Matrix::row_vector(history);
        let xi = Matrix::from_vec(1, index.len(), index.to_vec());
        Ok(self.sample_latents(&h, &xi, 1)?.into_vec())
    }

    /// Latent samples for `n` indices per history: row `b * n + k` is
    /// `φ(h_b, ξ_bk)`.
    pub fn sample_latents(&self, histories: &Matrix, indices: &Matrix, n: usize) -> Result<Matrix> {
        let mut tape = Tape::new();
        let base_out = self.base.forward_traced(histories, &mut tape)?.clone();
        let feats = stop_gradient_features(histories, &tape);
        let mut out = self.epinet_term(&feats, indices, n)?;
        add_repeated(&mut out, &base_out, n);
        Ok(out)
    }

    /// Per-history statistics over `n ≥ 2` samples.
    pub fn stats_batch(&self, histories: &Matrix, indices: &Matrix, n: usize) -> Result<Vec<EpinetStats>> {
        let samples = self.sample_latents(histories, indices, n)?;
        (0..histories.rows())
            .map(|b| EpinetStats::from_rows(&samples, b * n, n))
            .collect()
    }

    pub fn stats<R: Rng + ?Sized>(&self, history: &[f64], n: usize, rng: &mut R) -> Result<EpinetStats> {
        let xi = self.sample_indices(n, rng);
        let mut s = self.stats_batch(&Matrix::row_vector(history), &xi, n)?;
        Ok(s.pop().expect("one history"))
    }

    /// Mean squared distance between each history's target latent and its
    /// `n` samples; gradients are *added* into `grads`. Targets are constants.
    pub fn loss_and_grads(
        &self,
        histories: &Matrix,
        targets: &Matrix,
        indices: &Matrix,
        n: usize,
        grads: &mut AdapterGrads,
    ) -> Result<f64> {
        let b = histories.rows();
        let d = self.latent_dim();
        check_len(b, targets.rows())?;
        check_len(d, targets.cols())?;
        let mut base_tape = Tape::new();
        let base_out = self.base.forward_traced(histories, &mut base_tape)?.clone();
        let feats = stop_gradient_features(histories, &base_tape);
        let mut epi_tape = Tape::new();
        let mut samples = self.epinet_term_traced(&feats, indices, n, Some(&mut epi_tape))?;
        add_repeated(&mut samples, &base_out, n);

        let loss = encoder_loss(targets, &samples, n)?;
        if b == 0 {
            return Ok(loss);
        }
        let scale = 2.0 / (b * n) as f64;
        let mut d_samples = Matrix::zeros(b * n, d);
        for bi in 0..b {
            for k in 0..n {
                let r = bi * n + k;
                let (s, t) = (samples.row(r), targets.row(bi));
                let ds = d_samples.row_mut(r);
                for j in 0..d {
                    ds[j] = scale * (s[j] - t[j]);
                }
            }
        }

        // base: sum of sample gradients over the n indices of each history
        let mut d_base = Matrix::zeros(b, d);
        for bi in 0..b {
            for k in 0..n {
                let src = d_samples.row(bi * n + k).to_vec();
                for (acc, v) in d_base.row_mut(bi).iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        self.base.backward(&base_tape, &d_base, &mut grads.base)?;

        if let Some(epi) = &self.epinet {
            let m = epi.index_dim;
            let mut d_learn = Matrix::zeros(b * n, m * d);
            for r in 0..b * n {
                let xi = indices.row(r).to_vec();
                let ds = d_samples.row(r).to_vec();
                let dl = d_learn.row_mut(r);
                for i in 0..m {
                    for j in 0..d {
                        dl[i * d + j] = xi[i] * ds[j];
                    }
                }
            }
            // input gradient discarded: h̃ is a stopped feature
            epi.learnable.backward(&epi_tape, &d_learn, &mut grads.learnable)?;
        }
        Ok(loss)
    }
}

fn stop_gradient_features(histories: &Matrix, base_tape: &Tape) -> Matrix {
    // a single-layer base has no hidden layer; h̃ is then the history alone
    let layers = base_tape.len().saturating_sub(1);
    match base_tape.last_hidden() {
        Some(hidden) if layers >= 2 => histories.hcat(hidden),
        _ => histories.clone(),
    }
}

fn epinet_input(features: &Matrix, indices: &Matrix, n: usize) -> Matrix {
    let (k, m) = (features.cols(), indices.cols());
    let mut input = Matrix::zeros(features.rows() * n, k + m);
    for b in 0..features.rows() {
        for j in 0..n {
            let r = b * n + j;
            let row = input.row_mut(r);
            row[..k].copy_from_slice(features.row(b));
            row[k..].copy_from_slice(indices.row(r));
        }
    }
    input
}

fn add_repeated(out: &mut Matrix, per_history: &Matrix, n: usize) {
    for b in 0..per_history.rows() {
        for k in 0..n {
            for (o, v) in out.row_mut(b * n + k).iter_mut().zip(per_history.row(b)) {
                *o += v;
            }
        }
    }
}

/// Mean over histories and samples of `‖target_b − sample_bk‖²`.
pub fn encoder_loss(targets: &Matrix, samples: &Matrix, n: usize) -> Result<f64> {
    check_len(targets.rows() * n, samples.rows())?;
    check_len(targets.cols(), samples.cols())?;
    if samples.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for b in 0..targets.rows() {
        for k in 0..n {
            total += targets
                .row(b)
                .iter()
                .zip(samples.row(b * n + k))
                .map(|(t, s)| (t - s).powi(2))
                .sum::<f64>();
        }
    }
    Ok(total / samples.rows() as f64)
}

/// Sample mean and unbiased per-dimension variance of latent estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpinetStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `Σ_j σ̂²_j`, the squared norm of the per-dimension std vector.
    pub uncertainty: f64,
    pub samples: usize,
}

impl EpinetStats {
    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        let m = Matrix::from_rows(samples);
        Self::from_rows(&m, 0, samples.len())
    }

    fn from_rows(m: &Matrix, start: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "sample statistics need at least 2 samples, got {n}"
            )));
        }
        let d = m.cols();
        // shifted by the first sample so identical samples give exactly zero spread
        let pivot = m.row(start).to_vec();
        let mut mean = vec![0.0; d];
        for r in start..start + n {
            for ((acc, v), p) in mean.iter_mut().zip(m.row(r)).zip(&pivot) {
                *acc += v - p;
            }
        }
        mean.iter_mut().zip(&pivot).for_each(|(x, p)| *x = p + *x / n as f64);
        let mut variance = vec![0.0; d];
        for r in start..start + n {
            for ((acc, v), mu) in variance.iter_mut().zip(m.row(r)).zip(&mean) {
                *acc += (v - mu).powi(2);
            }
        }
        variance.iter_mut().for_each(|x| *x /= (n - 1) as f64);
        let uncertainty = variance.iter().sum();
        Ok(Self {
            mean,
            variance,
            uncertainty,
            samples: n,
        })
    }
}
