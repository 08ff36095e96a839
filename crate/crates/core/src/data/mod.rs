//! Corpus handling: audio I/O, manifests, normalization and the feature cache.

mod cache;
mod manifest;
mod norm;
pub mod synthetic;
mod wav;

pub use cache::{
    cache_path, content_hash, feature_cache, load_training_set, normalized_sequence, CacheReport,
};
pub use manifest::{
    build_manifest, train_count, CorpusManifest, FileEntry, SpeakerEntry, MANIFEST_VERSION,
};
pub use norm::NormStats;
pub use wav::{load_wav, write_wav, WavEncoding};
