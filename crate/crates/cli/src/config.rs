//! Fully resolved per-command configuration. Each run echoes its config as
//! TOML; feeding that file back through `--config` reproduces the run.

use std::path::{Path, PathBuf};

use eqnet_core::net::NetworkSpec;
use eqnet_core::noise::NoiseSpec;
use eqnet_core::trainer::{Corpus, EvalGrid, TrainConfig};
use eqnet_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Dir {
        path: PathBuf,
    },
    Synthetic {
        count: usize,
        channels: usize,
        height: usize,
        width: usize,
        seed: u64,
    },
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus> {
        match self {
            CorpusSource::Dir { path } => Corpus::load_dir(path),
            CorpusSource::Synthetic {
                count,
                channels,
                height,
                width,
                seed,
            } => Corpus::synthetic(*count, *channels, *height, *width, *seed),
        }
    }

    pub fn synthetic(count: usize, channels: usize, size: usize, seed: u64) -> Self {
        CorpusSource::Synthetic {
            count,
            channels,
            height: size,
            width: size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenNoiseConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Image `i` (in name order) uses seed `noise.seed + i`.
    pub noise: NoiseSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub out: PathBuf,
    pub corpus: CorpusSource,
    pub spec: NetworkSpec,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub ckpt: PathBuf,
    pub out: PathBuf,
    pub corpus: CorpusSource,
    pub grid: EvalGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub ckpt: PathBuf,
    pub out: PathBuf,
    pub probes: CorpusSource,
    pub noise_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Table4,
    Directional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub out: PathBuf,
    pub train_corpus: CorpusSource,
    pub eval_corpus: CorpusSource,
    pub base: NetworkSpec,
    pub train: TrainConfig,
    pub grid: EvalGrid,
    pub seeds: Vec<u64>,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Prints `config` and writes it next to the outputs as `<command>.toml`.
pub fn echo<T: Serialize>(command: &str, out: &Path, config: &T) -> Result<()> {
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    println!("# effective config for `{command}`");
    print!("{text}");
    println!("# end config");
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(format!("{command}.toml")), text)?;
    Ok(())
}
