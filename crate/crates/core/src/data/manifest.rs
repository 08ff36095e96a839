use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{load_wav, NormStats};
use crate::dsp::{analyze, mcc_from_envelope, AnalysisConfig, F0Stats};
use crate::error::{Error, Result};
use crate::model::{AttributeLabel, Category};

pub const MANIFEST_VERSION: u32 = 1;

/// One audio file, relative to the corpus root, with the SHA-256 of its bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerEntry {
    pub id: String,
    pub train: Vec<FileEntry>,
    pub eval: Vec<FileEntry>,
    pub f0: F0Stats,
}

/// Speakers in one-hot order, their train/eval files and corpus statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub root: PathBuf,
    pub split_ratio: f64,
    pub seed: u64,
    pub analysis: AnalysisConfig,
    pub speakers: Vec<SpeakerEntry>,
    /// Statistics of the training coefficients (energy term excluded).
    pub norm: NormStats,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        out.push(entry?.path());
    }
    out.sort();
    Ok(out)
}

fn is_wav(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Number of training files for `n` files at `ratio`, leaving at least one of each kind.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

/// Scans `root/<speaker>/*.wav`, splits each speaker's files with a seeded
/// shuffle and fits normalization and F0 statistics on the training files.
pub fn build_manifest(
    root: &Path,
    split_ratio: f64,
    seed: u64,
    analysis: &AnalysisConfig,
) -> Result<CorpusManifest> {
    analysis.validate()?;
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio {split_ratio} must lie in (0, 1)"
        )));
    }
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "corpus root {} is not a directory",
            root.display()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut speakers = Vec::new();
    let mut train_rows: Vec<Vec<f64>> = Vec::new();
    for dir in list_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| {
                Error::Config(format!(
                    "speaker directory {} is not valid UTF-8",
                    dir.display()
                ))
            })?
            .to_string();
        let mut files = Vec::new();
        for p in list_dir(&dir)?.into_iter().filter(|p| is_wav(p)) {
            let rel = p
                .strip_prefix(root)
                .map_err(|_| Error::Config("path outside corpus root".into()))?;
            files.push(FileEntry {
                path: rel.to_path_buf(),
                sha256: sha256_hex(&fs::read(&p)?),
            });
        }
        if files.len() < 2 {
            return Err(Error::Config(format!(
                "speaker '{id}' has {} audio files; at least 2 are needed",
                files.len()
            )));
        }
        files.shuffle(&mut rng);
        let k = train_count(files.len(), split_ratio);
        let mut eval = files.split_off(k);
        let mut train = files;
        train.sort_by(|a, b| a.path.cmp(&b.path));
        eval.sort_by(|a, b| a.path.cmp(&b.path));

        let mut tracks = Vec::new();
        for f in &train {
            let path = root.join(&f.path);
            let (signal, sr) = load_wav(&path)?;
            let frames = analyze(&signal, sr, analysis)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mcc = mcc_from_envelope(&frames, analysis.order, analysis.alpha)?;
            train_rows.extend(mcc.frames);
            tracks.push(frames.f0);
        }
        let f0 = F0Stats::fit(tracks.iter().map(Vec::as_slice))
            .map_err(|e| Error::Config(format!("speaker '{id}': {e}")))?;
        speakers.push(SpeakerEntry {
            id,
            train,
            eval,
            f0,
        });
    }
    if speakers.is_empty() {
        return Err(Error::Config(format!(
            "no speaker directories under {}",
            root.display()
        )));
    }
    let norm = NormStats::fit(analysis.order, train_rows.iter().map(Vec::as_slice))?;
    Ok(CorpusManifest {
        version: MANIFEST_VERSION,
        root: root.to_path_buf(),
        split_ratio,
        seed,
        analysis: analysis.clone(),
        speakers,
        norm,
    })
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} is not supported",
                self.version
            )));
        }
        self.analysis.validate()?;
        self.norm.validate()?;
        if self.norm.dim() != self.analysis.order {
            return Err(Error::Config(
                "normalization statistics do not match the analysis order".into(),
            ));
        }
        if self.speakers.is_empty() {
            return Err(Error::Config("manifest lists no speakers".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, s) in self.speakers.iter().enumerate() {
            if seen.insert(s.id.as_str(), i).is_some() {
                return Err(Error::Config(format!("speaker '{}' listed twice", s.id)));
            }
            if s.train.is_empty() {
                return Err(Error::Config(format!(
                    "speaker '{}' has no training files",
                    s.id
                )));
            }
            s.f0.validate()?;
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<Category> {
        vec![Category::new("speaker", self.speakers.len())]
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.speakers.iter().map(|s| s.id.clone()).collect()
    }

    pub fn speaker_index(&self, id: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown speaker '{id}'; known: {}",
                    self.speaker_ids().join(", ")
                ))
            })
    }

    pub fn label(&self, id: &str) -> Result<AttributeLabel> {
        AttributeLabel::new(&self.categories(), &[self.speaker_index(id)?])
    }

    /// `(speaker index, file)` over every file, training files first per speaker.
    pub fn files(&self) -> impl Iterator<Item = (usize, &FileEntry)> {
        self.speakers
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.train.iter().chain(&s.eval).map(move |f| (i, f)))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: CorpusManifest =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        CorpusManifest::from_json(&text)
    }
}
