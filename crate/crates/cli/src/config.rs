use std::fs;
use std::path::{Path, PathBuf};

use acvae_core::dsp::AnalysisConfig;
use acvae_core::model::{ArchConfig, Category};
use acvae_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "ACVAE_CONFIG";

/// Everything a run depends on. Loaded from TOML, then overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    /// Feature extraction settings used when building a manifest; later
    /// stages take them from the manifest.
    pub analysis: AnalysisConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gradcheck: GradCheckConfig,
}

/// Input locations; outputs are always given on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Corpus root with one subdirectory of WAV files per speaker.
    pub corpus: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Feature cache directory.
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Fraction of each speaker's files used for training.
    pub split_ratio: f64,
    pub split_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            split_ratio: 0.7,
            split_seed: 0,
        }
    }
}

/// Channel widths; kernel shapes are fixed by the architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_channels: [usize; 3],
    pub latent_channels: usize,
    pub classifier_channels: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_channels: [16, 32, 64],
            latent_channels: 8,
            classifier_channels: [8, 16],
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, q_dim: usize, categories: Vec<Category>) -> ArchConfig {
        ArchConfig::with_widths(
            q_dim,
            categories,
            self.encoder_channels,
            self.latent_channels,
            self.classifier_channels,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Coordinates sampled per parameter tensor; 0 checks every coordinate.
    pub coords_per_param: usize,
    /// Largest acceptable relative error.
    pub threshold: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            coords_per_param: 4,
            threshold: 1e-4,
        }
    }
}

/// Parses `section.key=value` (value in TOML syntax, bare words as strings)
/// into `table`.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Usage(format!(
            "override '{assignment}' is not of the form key=value"
        ))
    })?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts
        .split_last()
        .filter(|(l, _)| !l.is_empty())
        .ok_or_else(|| CliError::Usage(format!("override '{assignment}' has an empty key")))?;
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Usage(format!("'{s}' in override '{assignment}' is not a section"))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or the file named by [`CONFIG_ENV`], or defaults) and
    /// applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let env_path = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        let mut table = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Writes the resolved configuration to `path`.
    pub fn echo(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_toml()?).map_err(|e| CliError::Core(e.into()))
    }
}
