use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Fixed window of the most recent `len` (observation, action) pairs,
/// flattened oldest-first. Slots not yet written are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    len: usize,
    obs_dim: usize,
    act_dim: usize,
    buf: Vec<f64>,
}

impl History {
    pub fn new(len: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            len,
            obs_dim,
            act_dim,
            buf: vec![0.0; len * (obs_dim + act_dim)],
        }
    }

    pub fn window(&self) -> usize {
        self.len
    }

    pub fn entry_dim(&self) -> usize {
        self.obs_dim + self.act_dim
    }

    pub fn flat_dim(&self) -> usize {
        self.buf.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.buf
    }

    pub fn clear(&mut self) {
        self.buf.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Evicts the oldest pair and appends `(obs, action)` as the newest.
    pub fn push(&mut self, obs: &[f64], action: &[f64]) -> Result<()> {
        check_len(self.obs_dim, obs.len())?;
        check_len(self.act_dim, action.len())?;
        let e = self.entry_dim();
        if self.len == 0 {
            return Ok(());
        }
        self.buf.copy_within(e.., 0);
        let n = self.buf.len();
        let slot = &mut self.buf[n - e..];
        slot[..self.obs_dim].copy_from_slice(obs);
        slot[self.obs_dim..].copy_from_slice(action);
        Ok(())
    }

    /// Entry `i`, oldest first.
    pub fn entry(&self, i: usize) -> &[f64] {
        let e = self.entry_dim();
        &self.buf[i * e..(i + 1) * e]
    }
}
