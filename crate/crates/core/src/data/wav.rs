use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Sample encoding used when writing audio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io)
            if matches!(io.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied) =>
        {
            Error::Io(io)
        }
        // Short reads surface as assorted I/O kinds; all of them mean the file ends early.
        hound::Error::IoError(io) => {
            Error::Corrupt(format!("{}: file ends early ({io})", path.display()))
        }
        hound::Error::FormatError(msg) => Error::Corrupt(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::Format(format!(
            "{}: 'fmt ' chunk uses an unsupported encoding",
            path.display()
        )),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file as mono samples in `[-1, 1]`.
/// Stereo input is averaged.
pub fn load_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = WavReader::open(path).map_err(|e| map_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::Format(format!(
            "{}: 'fmt ' chunk declares {channels} channels; only mono and stereo are supported",
            path.display()
        )));
    }
    let declared = reader.len() as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => return Err(Error::Format(format!(
            "{}: 'fmt ' chunk declares {bits}-bit {} samples; expected 16-bit PCM or 32-bit float",
            path.display(),
            match fmt {
                SampleFormat::Int => "integer",
                SampleFormat::Float => "float",
            }
        ))),
    }
    .map_err(|e| map_err(path, e))?;
    if interleaved.len() != declared || declared % channels != 0 {
        return Err(Error::Corrupt(format!(
            "{}: 'data' chunk holds {} of {declared} declared samples",
            path.display(),
            interleaved.len()
        )));
    }
    if interleaved.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupt(format!(
            "{}: non-finite sample values",
            path.display()
        )));
    }
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((samples, spec.sample_rate))
}

fn map_write_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Writes mono samples; 16-bit output is rounded and clipped to the integer range.
pub fn write_wav(
    path: &Path,
    samples: &[f64],
    sample_rate: u32,
    encoding: WavEncoding,
) -> Result<()> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot write non-finite samples".into()));
    }
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| map_write_err(path, e))?;
    for &s in samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(v)
            }
            WavEncoding::Float32 => w.write_sample(s as f32),
        }
        .map_err(|e| map_write_err(path, e))?;
    }
    w.finalize().map_err(|e| map_write_err(path, e))?;
    Ok(())
}
