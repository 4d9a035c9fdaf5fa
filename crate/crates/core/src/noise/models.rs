use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use super::{make_level_map, BaseDist, LevelMap, NoiseModel, NoiseSpec, GAUSSIAN, MIXTURE, POISSON, SPECKLE, SPECKLE_VARIANT};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const LAPLACE_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One unit-variance draw from `base`.
pub fn base_sample<R: Rng + ?Sized>(base: BaseDist, rng: &mut R) -> f64 {
    match base {
        BaseDist::Gaussian => StandardNormal.sample(rng),
        BaseDist::Laplace => {
            let a: f64 = Exp1.sample(rng);
            let b: f64 = Exp1.sample(rng);
            LAPLACE_SCALE * (a - b)
        }
    }
}

/// `(phi / 255) * sqrt(X) * B`, with `phi` broadcast over batch and channels.
pub fn level_perturbation<R: Rng + ?Sized>(
    clean: &Tensor<f32>,
    map: &LevelMap,
    base: BaseDist,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let s = clean.shape();
    if map.height() != s.h || map.width() != s.w {
        return Err(Error::ShapeMismatch {
            op: "speckle_variant",
            left: s,
            right: map.phi().shape(),
        });
    }
    let phi = map.phi().data();
    let plane = s.h * s.w;
    let data = clean
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let b = base_sample(base, rng);
            (phi[i % plane] / 255.0 * f64::from(x.max(0.0)).sqrt() * b) as f32
        })
        .collect();
    Tensor::from_vec(s, data)
}

fn poisson_perturbation<R: Rng + ?Sized>(clean: &Tensor<f32>, alpha: f64, rng: &mut R) -> Result<Tensor<f32>> {
    let data = clean
        .data()
        .iter()
        .map(|&x| {
            let x = f64::from(x.max(0.0));
            let lambda = 255.0 * x;
            if lambda <= 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(lambda).map_err(|e| Error::invalid(format!("poisson rate {lambda}: {e}")))?;
            let k: f64 = dist.sample(rng);
            Ok((alpha * (k / 255.0 - x)) as f32)
        })
        .collect::<Result<Vec<f32>>>()?;
    Tensor::from_vec(clean.shape(), data)
}

fn constant_map(s: Shape, sigma: f64) -> Result<LevelMap> {
    // A zero sigma still needs a valid (positive) map; the result is scaled away.
    if sigma == 0.0 {
        return LevelMap::constant(s.h, s.w, 1.0);
    }
    LevelMap::constant(s.h, s.w, sigma)
}

fn speckle_part(clean: &Tensor<f32>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let p = level_perturbation(clean, &constant_map(clean.shape(), spec.sigma)?, spec.base, rng)?;
    Ok(if spec.sigma == 0.0 { p.scale(0.0) } else { p })
}

/// `(sigma / 255) * N`.
pub struct GaussianNoise;

impl NoiseModel for GaussianNoise {
    fn name(&self) -> &'static str {
        GAUSSIAN
    }

    fn perturbation(&self, clean: &Tensor<f32>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        let data = (0..clean.len())
            .map(|_| (spec.sigma / 255.0 * base_sample(spec.base, rng)) as f32)
            .collect();
        Tensor::from_vec(clean.shape(), data)
    }
}

/// `(sigma / 255) * sqrt(X) * B`.
pub struct SpeckleNoise;

impl NoiseModel for SpeckleNoise {
    fn name(&self) -> &'static str {
        SPECKLE
    }

    fn perturbation(&self, clean: &Tensor<f32>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        speckle_part(clean, spec, rng)
    }
}

/// `alpha * (Pois(255 X) / 255 - X)`.
pub struct PoissonNoise;

impl NoiseModel for PoissonNoise {
    fn name(&self) -> &'static str {
        POISSON
    }

    fn perturbation(&self, clean: &Tensor<f32>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        poisson_perturbation(clean, spec.alpha, rng)
    }
}

/// Speckle plus an independent Poisson component.
pub struct MixtureNoise;

impl NoiseModel for MixtureNoise {
    fn name(&self) -> &'static str {
        MIXTURE
    }

    fn perturbation(&self, clean: &Tensor<f32>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        let speckle = speckle_part(clean, spec, rng)?;
        let shot = poisson_perturbation(clean, spec.alpha, rng)?;
        speckle.add(&shot)
    }
}

/// Speckle with a smooth level map in `[60, 120]` generated from the spec seed.
pub struct SpeckleVariantNoise;

impl NoiseModel for SpeckleVariantNoise {
    fn name(&self) -> &'static str {
        SPECKLE_VARIANT
    }

    fn perturbation(&self, clean: &Tensor<f32>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        let s = clean.shape();
        let map = make_level_map(spec.variant, s.h, s.w, spec.seed)?;
        level_perturbation(clean, &map, spec.base, rng)
    }
}
