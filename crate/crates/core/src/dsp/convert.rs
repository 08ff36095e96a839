use super::MccSequence;
use crate::error::{Error, Result};
use crate::model::{AcousticFeatureSequence, ArchConfig, AttributeLabel, Checkpoint};

/// Smallest admissible sequence length for the architecture that is at least `n`.
pub fn pad_frames(n: usize, arch: &ArchConfig) -> Result<usize> {
    let min = arch.min_frames()?;
    let (_, t) = arch.downsampling();
    let mut len = n.max(min).div_ceil(t) * t;
    while arch.check_frames(len).is_err() {
        len += t;
        if len > n.max(min) + 64 * t {
            return Err(Error::Config(format!(
                "no admissible length near {n} frames"
            )));
        }
    }
    Ok(len)
}

/// `x̂ = μθ(μφ(x, c_src), c_tgt)` and `x̄ = μθ(μφ(x, c_src), c_src)`, both in
/// the original (unnormalized) coefficient scale. The energy term is passed
/// through unchanged. Short or odd-length inputs are padded by repeating the
/// last frame and the outputs cropped back.
pub fn convert_features(
    x: &MccSequence,
    c_src: &AttributeLabel,
    c_tgt: &AttributeLabel,
    ckpt: &Checkpoint,
) -> Result<(MccSequence, MccSequence)> {
    x.validate()?;
    let norm = ckpt
        .norm
        .as_ref()
        .ok_or_else(|| Error::State("checkpoint carries no normalization statistics".into()))?;
    let arch = ckpt.model.config();
    if x.order != arch.q_dim || norm.dim() != x.order {
        return Err(Error::Config(format!(
            "features of order {} do not match a model of {} rows with {}-dim normalization",
            x.order,
            arch.q_dim,
            norm.dim()
        )));
    }
    if x.is_empty() {
        return Err(Error::Contract("no frames to convert".into()));
    }
    let n = x.len();
    let padded = pad_frames(n, arch)?;
    let q = x.order;
    let mut values = vec![0.0; q * padded];
    for t in 0..padded {
        let mut row = x.frames[t.min(n - 1)].clone();
        norm.normalize(&mut row);
        for (d, v) in row.into_iter().enumerate() {
            values[d * padded + t] = v;
        }
    }
    let seq = AcousticFeatureSequence::new(q, padded, values)?;
    let (z, _) = ckpt.model.encode(&seq, c_src)?;
    let decode = |c: &AttributeLabel| -> Result<MccSequence> {
        let (mu, _) = ckpt.model.decode(&z, c)?;
        let frames = (0..n)
            .map(|t| {
                let mut row: Vec<f64> = (0..q).map(|d| mu.data()[d * padded + t]).collect();
                norm.denormalize(&mut row);
                row
            })
            .collect();
        Ok(MccSequence {
            order: q,
            alpha: x.alpha,
            c0: x.c0.clone(),
            frames,
        })
    };
    let x_hat = decode(c_tgt)?;
    let x_bar = if c_tgt == c_src {
        x_hat.clone()
    } else {
        decode(c_src)?
    };
    Ok((x_hat, x_bar))
}
