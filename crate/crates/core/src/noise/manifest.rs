use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NoiseSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input: String,
    pub output: String,
    pub clipped_fraction: f64,
    pub spec: NoiseSpec,
}

/// Sidecar listing the exact noise spec behind every generated image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseManifest {
    pub entries: Vec<ManifestEntry>,
}

impl NoiseManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
