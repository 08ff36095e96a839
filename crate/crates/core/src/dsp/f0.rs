use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and standard deviation of log F0 over voiced frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    pub mean: f64,
    pub std: f64,
}

impl F0Stats {
    /// Smallest standard deviation reported, so a monotone speaker still
    /// yields a usable transform.
    pub const MIN_STD: f64 = 1e-3;

    pub fn fit<'a>(tracks: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let logs: Vec<f64> = tracks
            .into_iter()
            .flatten()
            .filter(|&&f| f > 0.0)
            .map(|f| f.ln())
            .collect();
        if logs.is_empty() {
            return Err(Error::Config(
                "no voiced frames to estimate F0 statistics".into(),
            ));
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        Ok(F0Stats {
            mean,
            std: var.sqrt().max(Self::MIN_STD),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::Config(format!("invalid F0 statistics {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian-normalized log-F0 mapping; unvoiced frames (0) stay 0.
pub fn logf0_transform(f0: &[f64], src: &F0Stats, tgt: &F0Stats) -> Result<Vec<f64>> {
    src.validate()?;
    tgt.validate()?;
    let ratio = tgt.std / src.std;
    let (src_center, tgt_center) = (src.mean.exp(), tgt.mean.exp());
    // Written as a power of the ratio to the source's geometric mean so that
    // the mean maps onto the target mean without rounding.
    Ok(f0
        .iter()
        .map(|&f| {
            if f > 0.0 {
                tgt_center * (f / src_center).powf(ratio)
            } else {
                0.0
            }
        })
        .collect())
}
