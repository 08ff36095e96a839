use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, Model};
use crate::binio;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Tensor};

const MAGIC: &[u8; 8] = b"ACVAECKP";
const VERSION: u32 = 1;

/// A model together with what conversion needs to interpret its inputs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// Statistics the training features were normalized with.
    pub norm: Option<NormStats>,
    /// Speaker names in label-index order.
    pub speakers: Vec<String>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    norm_channels: Vec<usize>,
    has_norm: bool,
    speakers: Vec<String>,
    step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let running = self.model.running_stats();
        let header = Header {
            arch: self.model.config().clone(),
            names: params.names().to_vec(),
            shapes: params
                .tensors()
                .iter()
                .map(|t| t.shape().to_vec())
                .collect(),
            norm_channels: running.iter().map(|s| s.mean.len()).collect(),
            has_norm: self.norm.is_some(),
            speakers: self.speakers.clone(),
            step: self.step,
        };
        let mut arrays: Vec<&[f64]> = params.tensors().iter().map(Tensor::data).collect();
        for s in running {
            arrays.push(&s.mean);
            arrays.push(&s.var);
        }
        if let Some(n) = &self.norm {
            arrays.push(&n.mean);
            arrays.push(&n.std);
        }
        binio::encode(MAGIC, VERSION, &header, &arrays)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, arrays): (Header, _) = binio::decode(bytes, MAGIC, VERSION)?;
        let expected = h.names.len() + 2 * h.norm_channels.len() + if h.has_norm { 2 } else { 0 };
        if arrays.len() != expected || h.shapes.len() != h.names.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint holds {} arrays, header describes {expected}",
                arrays.len()
            )));
        }
        let mut it = arrays.into_iter();
        let mut named = Vec::with_capacity(h.names.len());
        for (name, shape) in h.names.into_iter().zip(&h.shapes) {
            let t = Tensor::new(shape, it.next().expect("counted"))
                .map_err(|e| Error::Corrupt(format!("parameter {name}: {e}")))?;
            named.push((name, t));
        }
        let running = h
            .norm_channels
            .iter()
            .map(|_| BatchStats {
                mean: it.next().expect("counted"),
                var: it.next().expect("counted"),
            })
            .collect();
        let norm = if h.has_norm {
            let n = NormStats {
                mean: it.next().expect("counted"),
                std: it.next().expect("counted"),
            };
            n.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
            Some(n)
        } else {
            None
        };
        let model = Model::from_parts(h.arch, named, running)?;
        Ok(Checkpoint {
            model,
            norm,
            speakers: h.speakers,
            step: h.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::State(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
