use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension z-normalization statistics of the training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics over the columns of `rows`, each of length `dim`.
    /// Uses the population variance so that normalized data has unit variance.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::dim(format!(
                    "feature row of length {} (expected {dim})",
                    row.len()
                )));
            }
            count += 1;
            for (d, &v) in row.iter().enumerate() {
                let delta = v - mean[d];
                mean[d] += delta / count as f64;
                m2[d] += delta * (v - mean[d]);
            }
        }
        if count == 0 {
            return Err(Error::Config(
                "no training frames to compute normalization statistics".into(),
            ));
        }
        let std = m2
            .iter()
            .map(|&s| (s / count as f64).sqrt().max(1e-8))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(Error::Config(
                "normalization mean/std lengths differ".into(),
            ));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Config(
                "normalization std must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn normalize(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn denormalize(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }
}
