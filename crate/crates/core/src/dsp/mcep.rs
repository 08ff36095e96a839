use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{SpectralFrameSequence, ENVELOPE_FLOOR, GAIN_LIMIT};
use crate::error::{Error, Result};

/// Mel-cepstral coefficients per frame with the energy term `c0` kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct MccSequence {
    pub order: usize,
    pub alpha: f64,
    /// One energy term per frame.
    pub c0: Vec<f64>,
    /// `order` coefficients per frame (`c1..=c_order`).
    pub frames: Vec<Vec<f64>>,
}

impl MccSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c0.len() != self.frames.len() {
            return Err(Error::dim(format!(
                "{} energy terms for {} frames",
                self.c0.len(),
                self.frames.len()
            )));
        }
        if self.frames.iter().any(|f| f.len() != self.order) {
            return Err(Error::dim(format!(
                "every frame must hold {} coefficients",
                self.order
            )));
        }
        if self
            .c0
            .iter()
            .chain(self.frames.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Domain("non-finite mel-cepstral coefficient".into()));
        }
        Ok(())
    }
}

/// Frequency on the all-pass warped axis.
fn warp(omega: f64, alpha: f64) -> f64 {
    ((1.0 - alpha * alpha) * omega.sin()).atan2((1.0 + alpha * alpha) * omega.cos() - 2.0 * alpha)
}

fn warp_slope(omega: f64, alpha: f64) -> f64 {
    (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * omega.cos() + alpha * alpha)
}

/// Truncated cosine series on the warped frequency axis:
/// `log E(ω) = c0 + 2 Σ_{m=1..order} c_m cos(m ω̃(ω))`.
///
/// Coefficients are the least-squares fit of the log envelope with each bin
/// weighted by its width on the warped axis, which approximates the inverse
/// cosine transform over warped frequency while keeping analysis and
/// synthesis exact inverses on the truncated representation.
#[derive(Clone, Debug)]
pub struct MelCepstrum {
    order: usize,
    alpha: f64,
    fft_size: usize,
    basis: DMatrix<f64>,
    projection: DMatrix<f64>,
}

impl MelCepstrum {
    pub fn new(order: usize, alpha: f64, fft_size: usize) -> Result<Self> {
        let bins = fft_size / 2 + 1;
        if !(alpha.abs() < 1.0) || order + 1 >= bins {
            return Err(Error::Config(format!(
                "mel-cepstrum of order {order} with alpha {alpha} over {bins} bins"
            )));
        }
        let basis = DMatrix::from_fn(bins, order + 1, |k, m| {
            let w = warp(PI * k as f64 / (bins - 1) as f64, alpha);
            if m == 0 {
                1.0
            } else {
                2.0 * (m as f64 * w).cos()
            }
        });
        let weights = DVector::from_fn(bins, |k, _| {
            let edge = if k == 0 || k == bins - 1 { 0.5 } else { 1.0 };
            edge * warp_slope(PI * k as f64 / (bins - 1) as f64, alpha)
        });
        let weighted = DMatrix::from_fn(bins, order + 1, |k, m| basis[(k, m)] * weights[k]);
        let normal = basis.transpose() * &weighted;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::Domain("mel-cepstral normal equations are singular".into()))?;
        let projection = chol.solve(&weighted.transpose());
        Ok(MelCepstrum {
            order,
            alpha,
            fft_size,
            basis,
            projection,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    /// `(c0, [c1..=c_order])` of one envelope.
    pub fn analyze(&self, envelope: &[f64]) -> Result<(f64, Vec<f64>)> {
        if envelope.len() != self.basis.nrows() {
            return Err(Error::dim(format!(
                "envelope of {} bins (expected {})",
                envelope.len(),
                self.basis.nrows()
            )));
        }
        let log = DVector::from_iterator(
            envelope.len(),
            envelope.iter().map(|&e| e.max(ENVELOPE_FLOOR).ln()),
        );
        let c = &self.projection * log;
        Ok((c[0], c.as_slice()[1..].to_vec()))
    }

    pub fn log_envelope(&self, c0: f64, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.order {
            return Err(Error::dim(format!(
                "{} coefficients for order {}",
                coeffs.len(),
                self.order
            )));
        }
        let c = DVector::from_iterator(
            self.order + 1,
            std::iter::once(c0).chain(coeffs.iter().copied()),
        );
        Ok((&self.basis * c).as_slice().to_vec())
    }

    pub fn envelope(&self, c0: f64, coeffs: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .log_envelope(c0, coeffs)?
            .into_iter()
            .map(|l| l.exp().max(ENVELOPE_FLOOR))
            .collect())
    }
}

pub fn mcc_from_envelope(
    env: &SpectralFrameSequence,
    order: usize,
    alpha: f64,
) -> Result<MccSequence> {
    let mc = MelCepstrum::new(order, alpha, env.fft_size)?;
    let mut c0 = Vec::with_capacity(env.len());
    let mut frames = Vec::with_capacity(env.len());
    for e in &env.envelopes {
        let (e0, rest) = mc.analyze(e)?;
        c0.push(e0);
        frames.push(rest);
    }
    Ok(MccSequence {
        order,
        alpha,
        c0,
        frames,
    })
}

/// Envelopes (`fft_size / 2 + 1` bins per frame) of a coefficient sequence.
pub fn envelope_from_mcc(mcc: &MccSequence, fft_size: usize) -> Result<Vec<Vec<f64>>> {
    mcc.validate()?;
    let mc = MelCepstrum::new(mcc.order, mcc.alpha, fft_size)?;
    mcc.frames
        .iter()
        .zip(&mcc.c0)
        .map(|(f, &c0)| mc.envelope(c0, f))
        .collect()
}

/// `F(x̂) / max(F(x̄), floor)` per frame and bin, clipped to
/// `[1/GAIN_LIMIT, GAIN_LIMIT]`.
pub fn spectral_gain(
    x_hat: &MccSequence,
    x_bar: &MccSequence,
    fft_size: usize,
) -> Result<Vec<Vec<f64>>> {
    if x_hat.len() != x_bar.len() {
        return Err(Error::Contract(format!(
            "converted sequence has {} frames, reference has {}",
            x_hat.len(),
            x_bar.len()
        )));
    }
    if (x_hat.order, x_hat.alpha) != (x_bar.order, x_bar.alpha) {
        return Err(Error::Contract(
            "gain operands use different mel-cepstral settings".into(),
        ));
    }
    let num = envelope_from_mcc(x_hat, fft_size)?;
    let den = envelope_from_mcc(x_bar, fft_size)?;
    Ok(num
        .iter()
        .zip(&den)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(n, d)| (n / d.max(ENVELOPE_FLOOR)).clamp(1.0 / GAIN_LIMIT, GAIN_LIMIT))
                .collect()
        })
        .collect())
}
