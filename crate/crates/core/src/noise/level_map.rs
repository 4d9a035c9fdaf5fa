use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VARIANT_MIN: f64 = 60.0;
pub const VARIANT_MAX: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// `sin(2*pi*i/h) * cos(2*pi*j/w)`.
    Sincos,
    /// The three-term Gaussian mixture surface on `[-3, 3]^2`.
    Peaks,
    /// Sum of four seeded isotropic Gaussian bumps.
    GaussKernels,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::Sincos, VariantKind::Peaks, VariantKind::GaussKernels];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Sincos => "sincos",
            VariantKind::Peaks => "peaks",
            VariantKind::GaussKernels => "gauss_kernels",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| Error::Unknown {
                kind: "level map",
                name: name.to_string(),
            })
    }

    /// 1-based variant number used in evaluation tables.
    pub fn index(self) -> usize {
        self as usize + 1
    }
}

/// Per-pixel positive level factors, shape `(1, 1, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelMap {
    phi: Tensor<f64>,
}

impl LevelMap {
    pub fn new(phi: Tensor<f64>) -> Result<Self> {
        let s = phi.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::invalid(format!("level map must be (1, 1, h, w), got {s}")));
        }
        if phi.data().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("level map entries must be finite and positive"));
        }
        Ok(Self { phi })
    }

    pub fn constant(h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(Tensor::full([1, 1, h, w], value))
    }

    pub fn phi(&self) -> &Tensor<f64> {
        &self.phi
    }

    pub fn height(&self) -> usize {
        self.phi.shape().h
    }

    pub fn width(&self) -> usize {
        self.phi.shape().w
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.phi.at(0, 0, i, j)
    }

    pub fn min(&self) -> f64 {
        self.phi.data().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.phi.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.phi.scale(k))
    }
}

/// Smooth field of the given kind, rescaled so its range is exactly `[60, 120]`.
pub fn make_level_map(kind: VariantKind, h: usize, w: usize, seed: u64) -> Result<LevelMap> {
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("level maps need h, w >= 8, got {h}x{w}")));
    }
    let raw: Tensor<f64> = match kind {
        VariantKind::Sincos => Tensor::from_fn([1, 1, h, w], |_, _, i, j| {
            (2.0 * PI * i as f64 / h as f64).sin() * (2.0 * PI * j as f64 / w as f64).cos()
        }),
        VariantKind::Peaks => {
            let axis = |t: usize, len: usize| -3.0 + 6.0 * t as f64 / (len - 1) as f64;
            Tensor::from_fn([1, 1, h, w], |_, _, i, j| peaks(axis(j, w), axis(i, h)))
        }
        VariantKind::GaussKernels => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let side = h.min(w) as f64;
            let bumps: Vec<[f64; 4]> = (0..4)
                .map(|_| {
                    [
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..w as f64),
                        rng.random_range(side / 8.0..side / 3.0),
                        rng.random_range(0.5..1.5),
                    ]
                })
                .collect();
            Tensor::from_fn([1, 1, h, w], |_, _, i, j| {
                bumps
                    .iter()
                    .map(|&[ci, cj, s, a]| {
                        let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                        a * (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum()
            })
        }
    };
    LevelMap::new(rescale(raw, VARIANT_MIN, VARIANT_MAX))
}

fn peaks(x: f64, y: f64) -> f64 {
    3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - (-(x + 1.0).powi(2) - y * y).exp() / 3.0
}

fn rescale(raw: Tensor<f64>, lo: f64, hi: f64) -> Tensor<f64> {
    let min = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return raw.map(|_| 0.5 * (lo + hi));
    }
    // (v - min) / (max - min) is exactly 0 and 1 at the extremes.
    raw.map(|v| lo + (hi - lo) * ((v - min) / (max - min)))
}
