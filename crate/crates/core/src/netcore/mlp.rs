//! Multilayer perceptron with ELU hidden activations and a linear output.
//!
//! All weights and biases of a network live in one flat parameter vector so
//! optimizers and gradient clipping can treat a network as a single slice.
//! Layer `l` occupies `out_l * in_l` weights (row-major, one row per output
//! unit) followed by `out_l` biases.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::{accumulate_tn, affine_nt, matmul_nn, Matrix};
use crate::error::{check_len, Error, Result};

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output `y = elu(x)`.
#[inline]
fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// Orthogonal initialization gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Init {
    pub hidden_gain: f64,
    pub output_gain: f64,
}

impl Init {
    pub const fn new(hidden_gain: f64, output_gain: f64) -> Self {
        Self {
            hidden_gain,
            output_gain,
        }
    }

    /// `sqrt(2)` hidden gain with the given output gain.
    pub fn with_output_gain(output_gain: f64) -> Self {
        Self::new(std::f64::consts::SQRT_2, output_gain)
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Matrix>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    /// Number of recorded activations, input included.
    pub fn len(&self) -> usize {
        self.acts.len()
    }

    pub fn clear(&mut self) {
        self.acts.clear();
    }

    pub fn output(&self) -> Option<&Matrix> {
        self.acts.last()
    }

    /// Output of layer `l` (`0` is the network input).
    pub fn activation(&self, l: usize) -> Option<&Matrix> {
        self.acts.get(l)
    }

    /// Output of the last hidden layer, or the input for a single-layer net.
    pub fn last_hidden(&self) -> Option<&Matrix> {
        let n = self.acts.len();
        if n >= 2 {
            self.acts.get(n - 2)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero network with the given layer sizes (input first).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    pub fn new<R: Rng + ?Sized>(sizes: &[usize], init: Init, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.num_layers();
        for l in 0..layers {
            let gain = if l + 1 == layers {
                init.output_gain
            } else {
                init.hidden_gain
            };
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = orthogonal(fan_out, fan_in, gain, rng);
            let (w_range, _) = net.layer_ranges(l);
            net.params[w_range].copy_from_slice(&w);
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias index ranges of layer `l` inside the flat vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let offset: usize = self.sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w_end = offset + fan_in * fan_out;
        (offset..w_end, w_end..w_end + fan_out)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(input))?.into_vec())
    }

    /// Forward pass over a batch (one sample per row) without recording.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        check_len(self.input_dim(), x.cols())?;
        let mut cur = x.clone();
        for l in 0..self.num_layers() {
            cur = self.layer_forward(l, &cur);
        }
        Ok(cur)
    }

    /// Forward pass that records activations into `tape` for a later
    /// [`backward`](Self::backward). Returns the network output.
    pub fn forward_traced<'t>(&self, x: &Matrix, tape: &'t mut Tape) -> Result<&'t Matrix> {
        check_len(self.input_dim(), x.cols())?;
        tape.acts.clear();
        tape.acts.push(x.clone());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, &tape.acts[l]);
            tape.acts.push(next);
        }
        Ok(tape.acts.last().expect("output recorded"))
    }

    fn layer_forward(&self, l: usize, x: &Matrix) -> Matrix {
        let (w, b) = self.layer_ranges(l);
        let mut z = Matrix::zeros(x.rows(), self.sizes[l + 1]);
        affine_nt(x, &self.params[w], &self.params[b], &mut z);
        if l + 1 < self.num_layers() {
            z.as_mut_slice().iter_mut().for_each(|v| *v = elu(*v));
        }
        z
    }

    /// Backpropagates `grad_out` (dL/d output, one row per sample) through
    /// the recorded pass, *adding* parameter gradients into `grads`.
    /// Returns dL/d input.
    pub fn backward(&self, tape: &Tape, grad_out: &Matrix, grads: &mut [f64]) -> Result<Matrix> {
        if tape.is_empty() {
            return Err(Error::NoForwardTrace);
        }
        check_len(self.num_layers() + 1, tape.acts.len())?;
        check_len(self.num_params(), grads.len())?;
        check_len(self.output_dim(), grad_out.cols())?;
        check_len(tape.acts[0].rows(), grad_out.rows())?;

        let mut delta = grad_out.clone();
        for l in (0..self.num_layers()).rev() {
            if l + 1 < self.num_layers() {
                let y = &tape.acts[l + 1];
                for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *d *= elu_grad_from_output(yv);
                }
            }
            let (w, b) = self.layer_ranges(l);
            accumulate_tn(&delta, &tape.acts[l], &mut grads[w.clone()]);
            let gb = &mut grads[b];
            for r in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            delta = matmul_nn(&delta, &self.params[w], self.sizes[l]);
        }
        Ok(delta)
    }
}

/// `rows × cols` block with orthonormal rows or columns (whichever is
/// shorter), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if tall { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}
