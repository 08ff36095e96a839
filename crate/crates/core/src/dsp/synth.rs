use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::analysis::{frame, frame_count, hann};
use super::{AnalysisConfig, GAIN_LIMIT};
use crate::error::{Error, Result};

/// Causal minimum-phase impulse response (`fft_size` taps) whose magnitude
/// response matches `gain` (`fft_size / 2 + 1` bins): the real cepstrum of
/// the log gain is folded onto positive quefrencies and exponentiated.
pub fn minimum_phase_response(gain: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    let n = fft_size;
    if !n.is_power_of_two() || gain.len() != n / 2 + 1 {
        return Err(Error::dim(format!(
            "{} gain bins for an FFT of size {n}",
            gain.len()
        )));
    }
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|k| {
            let g = gain[k.min(n - k)].clamp(1.0 / GAIN_LIMIT, GAIN_LIMIT);
            Complex::new(g.ln(), 0.0)
        })
        .collect();
    inv.process(&mut buf);
    for (q, v) in buf.iter_mut().enumerate() {
        let c = v.re / n as f64;
        *v = Complex::new(
            match q {
                0 => c,
                q if q < n / 2 => 2.0 * c,
                q if q == n / 2 => c,
                _ => 0.0,
            },
            0.0,
        );
    }
    fwd.process(&mut buf);
    for v in buf.iter_mut() {
        *v = v.exp();
    }
    inv.process(&mut buf);
    Ok(buf.iter().map(|v| v.re / n as f64).collect())
}

/// Filters each windowed analysis frame of `signal` with the minimum-phase
/// response of its gain and overlap-adds the results, dividing by the
/// summed window so that unit gains reproduce the input.
pub fn synthesize_direct(
    signal: &[f64],
    gains: &[Vec<f64>],
    cfg: &AnalysisConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (n, hop) = (cfg.fft_size, cfg.hop());
    let frames = frame_count(signal.len(), hop);
    if signal.is_empty() || gains.len() != frames {
        return Err(Error::Contract(format!(
            "{} gain frames for a signal with {frames} analysis frames",
            gains.len()
        )));
    }
    if let Some(g) = gains.iter().find(|g| g.len() != cfg.bins()) {
        return Err(Error::Contract(format!(
            "gain frame has {} bins (expected {})",
            g.len(),
            cfg.bins()
        )));
    }
    if gains.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Domain("non-finite spectral gain".into()));
    }
    let window = hann(n);
    let m = 2 * n;
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(m), planner.plan_fft_inverse(m));
    let mut acc = vec![0.0; signal.len()];
    let mut wsum = vec![0.0; signal.len()];
    for (t, gain) in gains.iter().enumerate() {
        let start = (t * hop) as isize - (n / 2) as isize;
        let h = minimum_phase_response(gain, n)?;
        let fr = frame(signal, t, hop, n);
        let mut xb: Vec<Complex<f64>> = fr
            .iter()
            .zip(&window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)).take(n))
            .collect();
        let mut hb: Vec<Complex<f64>> = h
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)).take(n))
            .collect();
        fwd.process(&mut xb);
        fwd.process(&mut hb);
        for (a, b) in xb.iter_mut().zip(&hb) {
            *a *= b;
        }
        inv.process(&mut xb);
        for (i, y) in xb.iter().enumerate() {
            let j = start + i as isize;
            if j >= 0 && (j as usize) < acc.len() {
                acc[j as usize] += y.re / m as f64;
                if i < n {
                    wsum[j as usize] += window[i];
                }
            }
        }
    }
    Ok(acc
        .iter()
        .zip(&wsum)
        .map(|(a, w)| if *w > 0.0 { a / w } else { 0.0 })
        .collect())
}
