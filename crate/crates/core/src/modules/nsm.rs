//! Normalized Self-Modulator.
//!
//! `NSM(F) = gamma * (F - mu) / sigma + beta`, where `[gamma; beta]` is a
//! bias-free 1x1 projection of the input. Projecting the *pre-normalized*
//! input keeps `gamma` and `beta` first-order homogeneous; the `Postnorm`
//! source projects the normalized features instead and is only used as an
//! ablation.

use serde::{Deserialize, Serialize};

use super::{evaluate, expect_channels, token_norm, DEGENERATE_TAU};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineSource {
    #[default]
    Prenorm,
    Postnorm,
}

impl AffineSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AffineSource::Prenorm => "prenorm",
            AffineSource::Postnorm => "postnorm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NsmLayer<T: Real = f32> {
    /// `(2c, c, 1, 1)`: output channels `0..c` give gamma, `c..2c` give beta.
    pub projection: Tensor<T>,
    pub source: AffineSource,
    pub tau: f64,
}

impl<T: Real> NsmLayer<T> {
    pub fn new(projection: Tensor<T>) -> Result<Self> {
        let s = projection.shape();
        if s.n != 2 * s.c || s.h != 1 || s.w != 1 {
            return Err(Error::invalid(format!(
                "NSM projection must be (2c, c, 1, 1), got {s}"
            )));
        }
        Ok(Self {
            projection,
            source: AffineSource::Prenorm,
            tau: DEGENERATE_TAU,
        })
    }

    pub fn with_source(mut self, source: AffineSource) -> Self {
        self.source = source;
        self
    }

    pub fn channels(&self) -> usize {
        self.projection.shape().c
    }
}

pub fn nsm<T: Real>(input: &Tensor<T>, layer: &NsmLayer<T>) -> Result<Tensor<T>> {
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let p = tape.leaf(layer.projection.clone());
        record(tape, x, p, layer.source, layer.tau)
    })
}

pub fn record<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    projection: Var,
    source: AffineSource,
    tau: f64,
) -> Result<Var> {
    expect_channels("nsm", tape.shape(x).c, tape.shape(projection).c)?;
    let normalized = token_norm::record(tape, x, tau);
    let affine_in = match source {
        AffineSource::Prenorm => x,
        AffineSource::Postnorm => normalized,
    };
    let affine = tape.conv2d(affine_in, projection, 1, 0)?;
    let (gamma, beta) = tape.split(affine)?;
    let modulated = tape.mul(gamma, normalized)?;
    tape.add(modulated, beta)
}
