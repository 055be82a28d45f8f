use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{check_len, Result};

/// Per-dimension running mean and variance, merged batch-wise with the
/// parallel-variance update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: f64,
    eps: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            eps: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.var
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    /// Folds every row of `batch` into the running statistics.
    pub fn update(&mut self, batch: &Matrix) -> Result<()> {
        check_len(self.dim(), batch.cols())?;
        let n = batch.rows() as f64;
        if n == 0.0 {
            return Ok(());
        }
        let total = self.count + n;
        for j in 0..self.dim() {
            let bm = (0..batch.rows()).map(|r| batch.get(r, j)).sum::<f64>() / n;
            let bv = (0..batch.rows())
                .map(|r| {
                    let d = batch.get(r, j) - bm;
                    d * d
                })
                .sum::<f64>()
                / n;
            if self.count == 0.0 {
                self.mean[j] = bm;
                self.var[j] = bv;
            } else {
                let delta = bm - self.mean[j];
                self.mean[j] += delta * n / total;
                let m2 = self.var[j] * self.count + bv * n + delta * delta * self.count * n / total;
                self.var[j] = m2 / total;
            }
        }
        self.count = total;
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(&v, (&m, &s))| (v - m) / (s + self.eps).sqrt())
            .collect()
    }

    pub fn normalize_batch(&self, x: &Matrix) -> Result<Matrix> {
        check_len(self.dim(), x.cols())?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / (self.var[j] + self.eps).sqrt();
            }
        }
        Ok(out)
    }
}
