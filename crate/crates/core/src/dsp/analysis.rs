use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AnalysisConfig, SpectralFrameSequence, ENVELOPE_FLOOR, F0_MAX, F0_MIN};
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Frames are centered on multiples of the hop, the first at sample 0.
pub fn frame_count(samples: usize, hop: usize) -> usize {
    samples.div_ceil(hop).max(1)
}

/// Samples of the frame centered at `t * hop`, zero outside the signal.
pub(crate) fn frame(signal: &[f64], t: usize, hop: usize, len: usize) -> Vec<f64> {
    let start = (t * hop) as isize - (len / 2) as isize;
    (0..len)
        .map(|i| {
            let j = start + i as isize;
            if j >= 0 && (j as usize) < signal.len() {
                signal[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

struct Analyzer {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Analyzer {
    fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Analyzer {
            n,
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
            fwd2: p.plan_fft_forward(2 * n),
            inv2: p.plan_fft_inverse(2 * n),
            window: hann(n),
        }
    }

    /// Cepstrally smoothed magnitude spectrum of one windowed frame.
    fn envelope(&self, frame: &[f64], lifter: usize) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        self.fwd.process(&mut buf);
        for v in buf.iter_mut() {
            *v = Complex::new(v.norm().max(ENVELOPE_FLOOR).ln(), 0.0);
        }
        self.inv.process(&mut buf);
        for (q, v) in buf.iter_mut().enumerate() {
            let quef = q.min(n - q);
            *v = if quef <= lifter {
                *v / n as f64
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        self.fwd.process(&mut buf);
        buf[..=n / 2]
            .iter()
            .map(|v| v.re.exp().max(ENVELOPE_FLOOR))
            .collect()
    }

    /// Normalized autocorrelation pitch estimate; 0 when unvoiced.
    fn f0(&self, frame: &[f64], cfg: &AnalysisConfig) -> f64 {
        let n = self.n;
        let sr = cfg.sample_rate as f64;
        let energy: f64 = frame.iter().map(|x| x * x).sum();
        if (energy / n as f64).sqrt() <= cfg.silence_rms {
            return 0.0;
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)).take(n))
            .collect();
        self.fwd2.process(&mut buf);
        for v in buf.iter_mut() {
            *v = Complex::new(v.norm_sqr(), 0.0);
        }
        self.inv2.process(&mut buf);
        let r: Vec<f64> = buf[..n].iter().map(|v| v.re / (2 * n) as f64).collect();
        // Energies of the overlapping head and tail parts for each lag.
        let mut prefix = vec![0.0; n + 1];
        for (i, x) in frame.iter().enumerate() {
            prefix[i + 1] = prefix[i] + x * x;
        }
        let norm = |tau: usize| {
            let head = prefix[n - tau];
            let tail = prefix[n] - prefix[tau];
            let d = (head * tail).sqrt();
            if d > 0.0 {
                r[tau] / d
            } else {
                0.0
            }
        };
        let lo = (sr / F0_MAX).floor().max(2.0) as usize;
        let hi = ((sr / F0_MIN).ceil() as usize).min(n / 2);
        if lo + 2 > hi {
            return 0.0;
        }
        let nr: Vec<f64> = (lo - 1..=hi + 1).map(norm).collect();
        let peaks: Vec<usize> = (1..nr.len() - 1)
            .filter(|&i| nr[i] >= nr[i - 1] && nr[i] > nr[i + 1])
            .collect();
        let Some(best) = peaks.iter().map(|&i| nr[i]).reduce(f64::max) else {
            return 0.0;
        };
        if best < cfg.voicing_threshold {
            return 0.0;
        }
        // The shortest lag that comes close to the best peak avoids octave errors.
        let i = *peaks
            .iter()
            .find(|&&i| nr[i] >= 0.9 * best)
            .expect("best peak qualifies");
        let (a, b, c) = (nr[i - 1], nr[i], nr[i + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let tau = (lo - 1 + i) as f64 + shift;
        let f0 = sr / tau;
        if (F0_MIN..=F0_MAX).contains(&f0) {
            f0
        } else {
            0.0
        }
    }
}

/// Short-time analysis: a Hann-windowed, cepstrally smoothed magnitude
/// envelope and an autocorrelation F0 per frame.
pub fn analyze(
    signal: &[f64],
    sample_rate: u32,
    cfg: &AnalysisConfig,
) -> Result<SpectralFrameSequence> {
    cfg.validate()?;
    if sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "signal is sampled at {sample_rate} Hz but the analysis expects {} Hz",
            cfg.sample_rate
        )));
    }
    if signal.is_empty() {
        return Err(Error::Contract("empty signal".into()));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("signal contains non-finite samples".into()));
    }
    let (n, hop) = (cfg.fft_size, cfg.hop());
    let az = Analyzer::new(n);
    let frames = frame_count(signal.len(), hop);
    let mut envelopes = Vec::with_capacity(frames);
    let mut f0 = Vec::with_capacity(frames);
    for t in 0..frames {
        let fr = frame(signal, t, hop, n);
        envelopes.push(az.envelope(&fr, cfg.lifter));
        f0.push(az.f0(&fr, cfg));
    }
    Ok(SpectralFrameSequence {
        sample_rate,
        frame_shift: cfg.frame_shift,
        fft_size: n,
        envelopes,
        f0,
    })
}
