use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{load_wav, CorpusManifest, FileEntry, NormStats};
use crate::dsp::{analyze, mcc_from_envelope, AnalysisConfig, FeatureFile, MccSequence};
use crate::error::{Error, Result};
use crate::model::AcousticFeatureSequence;
use crate::training::TrainingSet;

/// Outcome of a cache build.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CacheReport {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
    /// Files whose analysis failed, with the reason.
    pub errors: Vec<(PathBuf, String)>,
}

/// Hash binding features to the exact audio bytes and analysis settings.
pub fn content_hash(cfg: &AnalysisConfig, audio: &[u8]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).map_err(|e| Error::Format(e.to_string()))?);
    h.update([0u8]);
    h.update(audio);
    Ok(hex::encode(h.finalize()))
}

/// Location of a file's features inside `cache_dir`, mirroring the corpus layout.
pub fn cache_path(cache_dir: &Path, entry: &FileEntry) -> PathBuf {
    cache_dir.join(&entry.path).with_extension("feat")
}

fn extract(audio_path: &Path, hash: String, cfg: &AnalysisConfig) -> Result<FeatureFile> {
    let (signal, sr) = load_wav(audio_path)?;
    let frames = analyze(&signal, sr, cfg)?;
    let mcc = mcc_from_envelope(&frames, cfg.order, cfg.alpha)?;
    Ok(FeatureFile {
        sample_rate: sr,
        frame_shift: cfg.frame_shift,
        fft_size: cfg.fft_size,
        lifter: cfg.lifter,
        mcc,
        f0: frames.f0,
        content_hash: hash,
    })
}

/// Extracts features for every manifest file into `cache_dir`, skipping
/// entries whose stored hash already matches. Per-file failures are
/// collected in the report; an empty cache is an error.
pub fn feature_cache(
    manifest: &CorpusManifest,
    cfg: &AnalysisConfig,
    cache_dir: &Path,
) -> Result<CacheReport> {
    manifest.validate()?;
    cfg.validate()?;
    let mut report = CacheReport::default();
    for (_, entry) in manifest.files() {
        let audio_path = manifest.root.join(&entry.path);
        let out = cache_path(cache_dir, entry);
        let result = (|| -> Result<bool> {
            let bytes = fs::read(&audio_path)?;
            let hash = content_hash(cfg, &bytes)?;
            if let Ok(existing) = FeatureFile::load(&out) {
                if existing.content_hash == hash {
                    return Ok(false);
                }
            }
            let features = extract(&audio_path, hash, cfg)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            features.save(&out)?;
            Ok(true)
        })();
        match result {
            Ok(true) => report.written.push(out),
            Ok(false) => report.skipped.push(out),
            Err(e) => {
                log::warn!(
                    "feature extraction failed for {}: {e}",
                    audio_path.display()
                );
                report.errors.push((audio_path, e.to_string()));
            }
        }
    }
    if report.written.is_empty() && report.skipped.is_empty() {
        return Err(Error::Config(format!(
            "feature cache is empty: all {} files failed",
            report.errors.len()
        )));
    }
    Ok(report)
}

/// Coefficient frames as a normalized `[order, frames]` model input.
pub fn normalized_sequence(mcc: &MccSequence, norm: &NormStats) -> Result<AcousticFeatureSequence> {
    mcc.validate()?;
    if norm.dim() != mcc.order {
        return Err(Error::Config(format!(
            "normalization of dimension {} for coefficients of order {}",
            norm.dim(),
            mcc.order
        )));
    }
    let n = mcc.len();
    let mut values = vec![0.0; mcc.order * n];
    for (t, frame) in mcc.frames.iter().enumerate() {
        let mut row = frame.clone();
        norm.normalize(&mut row);
        for (d, v) in row.into_iter().enumerate() {
            values[d * n + t] = v;
        }
    }
    AcousticFeatureSequence::new(mcc.order, n, values)
}

/// Normalized, labeled training sequences read from the cache.
/// Files missing from the cache are skipped with a warning.
pub fn load_training_set(manifest: &CorpusManifest, cache_dir: &Path) -> Result<TrainingSet> {
    let cats = manifest.categories();
    let mut items = Vec::new();
    for (k, s) in manifest.speakers.iter().enumerate() {
        let label = crate::model::AttributeLabel::new(&cats, &[k])?;
        for entry in &s.train {
            let path = cache_path(cache_dir, entry);
            match FeatureFile::load(&path) {
                Ok(f) => items.push((normalized_sequence(&f.mcc, &manifest.norm)?, label.clone())),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Config(format!(
            "no cached training features under {}",
            cache_dir.display()
        )));
    }
    Ok(TrainingSet { items })
}
