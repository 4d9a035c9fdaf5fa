use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modules::{AffineSource, GateScaling};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// `x + conv(act(norm(conv(x))))`, ReLU and no normalization by default.
    BaselineRb,
    /// `x + restore(act(norm(conv(x))))` with HNM and IGM by default.
    Sevb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HnmMode {
    /// CS on one half of the channels, NSM on the other.
    Hnm,
    /// CS on every channel.
    FullCs,
    /// CS on the first half, the second half passed through.
    CsOnly,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Igm,
    Relu,
    Elu,
    Gelu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOverride {
    None,
    LayerNorm,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::BaselineRb => "baseline_rb",
            BlockKind::Sevb => "sevb",
        }
    }
}

impl HnmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HnmMode::Hnm => "hnm",
            HnmMode::FullCs => "full_cs",
            HnmMode::CsOnly => "cs_only",
            HnmMode::None => "none",
        }
    }
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Igm => "igm",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        }
    }
}

impl NormOverride {
    pub fn as_str(self) -> &'static str {
        match self {
            NormOverride::None => "none",
            NormOverride::LayerNorm => "layer_norm",
        }
    }
}

/// Declarative description of a U-Net denoiser and its ablation toggles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub blocks_per_stage: usize,
    pub block_kind: BlockKind,
    pub hnm_mode: HnmMode,
    pub activation: Activation,
    pub igm_scaling: GateScaling,
    pub norm_override: NormOverride,
    pub nsm_affine_source: AffineSource,
    pub seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::sevnet()
    }
}

impl NetworkSpec {
    /// The full model: SEV blocks with HNM and dual-scaled IGM.
    pub fn sevnet() -> Self {
        Self {
            in_channels: 3,
            base_channels: 16,
            depth: 2,
            blocks_per_stage: 2,
            block_kind: BlockKind::Sevb,
            hnm_mode: HnmMode::Hnm,
            activation: Activation::Igm,
            igm_scaling: GateScaling::Dual,
            norm_override: NormOverride::None,
            nsm_affine_source: AffineSource::Prenorm,
            seed: 0,
        }
    }

    /// Conv-ReLU-Conv residual U-Net built only from equivariant parts.
    pub fn baseline() -> Self {
        Self {
            block_kind: BlockKind::BaselineRb,
            hnm_mode: HnmMode::None,
            activation: Activation::Relu,
            ..Self::sevnet()
        }
    }

    /// Baseline with a LayerNorm inside each block and GELU activations.
    pub fn layernorm_gelu() -> Self {
        Self {
            norm_override: NormOverride::LayerNorm,
            activation: Activation::Gelu,
            ..Self::baseline()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Registry key of the normalization stage inside each block.
    pub fn norm_stage(&self) -> &'static str {
        match self.norm_override {
            NormOverride::LayerNorm => "layer_norm",
            NormOverride::None => self.hnm_mode.as_str(),
        }
    }

    /// Gating without its scaling term is second-order and known to diverge.
    pub fn expected_unstable(&self) -> bool {
        self.activation == Activation::Igm && self.igm_scaling == GateScaling::None
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels must be positive"));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::invalid(format!(
                "base_channels must be even and at least 2, got {}",
                self.base_channels
            )));
        }
        let pair = |a: String, b: String| Err(Error::InvalidFlags(a, b));
        let kind = format!("block_kind={}", self.block_kind.as_str());
        if self.block_kind == BlockKind::BaselineRb {
            if self.hnm_mode != HnmMode::None {
                return pair(kind, format!("hnm_mode={}", self.hnm_mode.as_str()));
            }
            if self.activation == Activation::Igm {
                return pair(kind, "activation=igm".into());
            }
        }
        if self.activation != Activation::Igm && self.igm_scaling != GateScaling::Dual {
            return pair(
                format!("activation={}", self.activation.as_str()),
                format!("igm_scaling={}", self.igm_scaling.as_str()),
            );
        }
        if self.norm_override == NormOverride::LayerNorm
            && self.block_kind == BlockKind::Sevb
            && self.hnm_mode != HnmMode::Hnm
        {
            return pair(
                "norm_override=layer_norm".into(),
                format!("hnm_mode={}", self.hnm_mode.as_str()),
            );
        }
        if self.nsm_affine_source == AffineSource::Postnorm {
            if self.norm_override == NormOverride::LayerNorm {
                return pair("nsm_affine_source=postnorm".into(), "norm_override=layer_norm".into());
            }
            if self.hnm_mode != HnmMode::Hnm {
                return pair(
                    "nsm_affine_source=postnorm".into(),
                    format!("hnm_mode={}", self.hnm_mode.as_str()),
                );
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("NetworkSpec serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// The ablation variants in canonical table order, each with its row label.
pub fn ablation_variants(base: &NetworkSpec) -> Vec<(String, NetworkSpec)> {
    let v = |label: &str, f: &dyn Fn(&mut NetworkSpec)| {
        let mut s = base.clone();
        f(&mut s);
        (label.to_string(), s)
    };
    vec![
        v("(1a) Ours", &|_| {}),
        v("(1b) HNM -> Full CS", &|s| s.hnm_mode = HnmMode::FullCs),
        v("(1c) w/ CS + w/o NSM", &|s| s.hnm_mode = HnmMode::CsOnly),
        v("(1d) w/ HNM, IGM -> ELU", &|s| s.activation = Activation::Elu),
        v("(1e) w/ HNM, IGM -> GELU", &|s| s.activation = Activation::Gelu),
        v("(1f) w/o HNM, IGM -> ELU", &|s| {
            s.hnm_mode = HnmMode::None;
            s.activation = Activation::Elu;
        }),
        v("(1g) w/o HNM, IGM -> GELU", &|s| {
            s.hnm_mode = HnmMode::None;
            s.activation = Activation::Gelu;
        }),
        v("(1h) Scale-independent affine", &|s| s.nsm_affine_source = AffineSource::Postnorm),
        v("(2a) w/o IGM", &|s| s.activation = Activation::Identity),
        v("(2b) IGM -> ReLU", &|s| s.activation = Activation::Relu),
        v("(2c) Dual -> Single scaling", &|s| s.igm_scaling = GateScaling::Single),
        v("(2d) HNM -> LN, w/ IGM", &|s| s.norm_override = NormOverride::LayerNorm),
        v("(2e) HNM -> LN, IGM -> ReLU", &|s| {
            s.norm_override = NormOverride::LayerNorm;
            s.activation = Activation::Relu;
        }),
        v("(2f) HNM -> LN, IGM -> GELU", &|s| {
            s.norm_override = NormOverride::LayerNorm;
            s.activation = Activation::Gelu;
        }),
        v("(2g) w/o scaling term", &|s| s.igm_scaling = GateScaling::None),
    ]
}
