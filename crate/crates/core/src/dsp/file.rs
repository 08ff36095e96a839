use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MccSequence;
use crate::binio;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ACVAEFEA";
const VERSION: u32 = 1;

/// Features of one utterance as stored in the cache.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub sample_rate: u32,
    pub frame_shift: f64,
    pub fft_size: usize,
    pub lifter: usize,
    pub mcc: MccSequence,
    pub f0: Vec<f64>,
    /// Hash of the audio and analysis settings the features came from.
    pub content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    sample_rate: u32,
    frame_shift: f64,
    fft_size: usize,
    lifter: usize,
    order: usize,
    alpha: f64,
    frames: usize,
    content_hash: String,
}

impl FeatureFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.mcc.validate()?;
        if self.f0.len() != self.mcc.len() {
            return Err(Error::dim(
                "F0 track and coefficient frames differ in length",
            ));
        }
        let header = Header {
            sample_rate: self.sample_rate,
            frame_shift: self.frame_shift,
            fft_size: self.fft_size,
            lifter: self.lifter,
            order: self.mcc.order,
            alpha: self.mcc.alpha,
            frames: self.mcc.len(),
            content_hash: self.content_hash.clone(),
        };
        let flat: Vec<f64> = self.mcc.frames.concat();
        binio::encode(MAGIC, VERSION, &header, &[&flat, &self.mcc.c0, &self.f0])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, arrays): (Header, Vec<Vec<f64>>) = binio::decode(bytes, MAGIC, VERSION)?;
        let [flat, c0, f0]: [Vec<f64>; 3] = arrays
            .try_into()
            .map_err(|_| Error::Corrupt("feature file must hold three arrays".into()))?;
        if h.order == 0
            || flat.len() != h.order * h.frames
            || c0.len() != h.frames
            || f0.len() != h.frames
        {
            return Err(Error::Corrupt(
                "feature arrays disagree with the header".into(),
            ));
        }
        Ok(FeatureFile {
            sample_rate: h.sample_rate,
            frame_shift: h.frame_shift,
            fft_size: h.fft_size,
            lifter: h.lifter,
            mcc: MccSequence {
                order: h.order,
                alpha: h.alpha,
                c0,
                frames: flat.chunks(h.order).map(<[f64]>::to_vec).collect(),
            },
            f0,
            content_hash: h.content_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
