//! The signal path: short-time spectral envelopes and F0, mel-cepstral
//! coefficients, log-F0 conversion, spectral gains and direct waveform
//! filtering with minimum-phase impulse responses.

mod analysis;
mod convert;
mod f0;
mod file;
mod mcep;
mod synth;

pub use analysis::{analyze, frame_count, hann};
pub use convert::{convert_features, pad_frames};
pub use f0::{logf0_transform, F0Stats};
pub use file::FeatureFile;
pub use mcep::{envelope_from_mcc, mcc_from_envelope, spectral_gain, MccSequence, MelCepstrum};
pub use synth::{minimum_phase_response, synthesize_direct};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest envelope value; keeps logarithms finite.
pub const ENVELOPE_FLOOR: f64 = 1e-10;
/// Spectral gains are clipped to `[1 / GAIN_LIMIT, GAIN_LIMIT]`.
pub const GAIN_LIMIT: f64 = 1e3;
pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 600.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    /// Seconds between frame centers.
    pub frame_shift: f64,
    /// FFT size and frame length in samples (a power of two).
    pub fft_size: usize,
    /// Highest quefrency (in samples) kept when smoothing the log spectrum.
    pub lifter: usize,
    /// Mel-cepstral coefficients per frame, excluding the energy term.
    pub order: usize,
    /// All-pass warping constant.
    pub alpha: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Frames with lower RMS are unvoiced.
    pub silence_rms: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sample_rate: 22050,
            frame_shift: 0.005,
            fft_size: 1024,
            lifter: 30,
            order: 36,
            alpha: 0.455,
            voicing_threshold: 0.6,
            silence_rms: 1e-4,
        }
    }
}

impl AnalysisConfig {
    /// Samples between frame centers.
    pub fn hop(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift).round() as usize
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if ![16000, 22050, 44100].contains(&self.sample_rate) {
            return Err(Error::Config(format!(
                "sample rate {} is not one of 16000, 22050, 44100",
                self.sample_rate
            )));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 64 {
            return Err(Error::Config(
                "fft_size must be a power of two of at least 64".into(),
            ));
        }
        let hop = self.hop();
        if !(self.frame_shift > 0.0) || hop == 0 || hop > self.fft_size / 2 {
            return Err(Error::Config(format!(
                "frame shift of {hop} samples must be positive and at most half the frame"
            )));
        }
        if self.lifter == 0 || self.lifter >= self.fft_size / 2 {
            return Err(Error::Config("lifter must lie in (0, fft_size/2)".into()));
        }
        if self.order == 0 || self.order + 1 >= self.bins() {
            return Err(Error::Config(
                "mel-cepstral order must be positive and below the bin count".into(),
            ));
        }
        if !(self.alpha.abs() < 1.0) {
            return Err(Error::Config("alpha must lie in (-1, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.voicing_threshold) || !(self.silence_rms >= 0.0) {
            return Err(Error::Config(
                "voicing_threshold must lie in [0, 1] and silence_rms be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-frame smoothed magnitude envelopes and F0 (0 marks unvoiced frames).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFrameSequence {
    pub sample_rate: u32,
    pub frame_shift: f64,
    pub fft_size: usize,
    /// `fft_size / 2 + 1` values per frame, each at least [`ENVELOPE_FLOOR`].
    pub envelopes: Vec<Vec<f64>>,
    pub f0: Vec<f64>,
}

impl SpectralFrameSequence {
    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }
}
