mod common;

use common::{excess_kurtosis, ks_normal, mean, rng, variance};
use eqnet_core::image_io::to_u8;
use eqnet_core::noise::{
    base_sample, gaussian, make_level_map, speckle, speckle_variant, training_sampler, BaseDist, LevelMap,
    NoiseRegistry, NoiseSpec, VariantKind,
};
use eqnet_core::Tensor;

fn perturbation(clean: &Tensor<f32>, spec: NoiseSpec) -> Vec<f64> {
    let p = NoiseRegistry::builtin().perturbation(clean, &spec).unwrap();
    p.data().iter().map(|&v| f64::from(v)).collect()
}

/// Three vertical bands of constant intensity; returns per-band samples.
fn banded(levels: &[f32], spec: NoiseSpec) -> Vec<Vec<f64>> {
    let (h, w) = (400, 300 * levels.len());
    let clean = Tensor::from_fn([1, 1, h, w], |_, _, _, x| levels[x / 300]);
    let p = NoiseRegistry::builtin().perturbation(&clean, &spec).unwrap();
    let mut out = vec![Vec::new(); levels.len()];
    for y in 0..h {
        for x in 0..w {
            out[x / 300].push(f64::from(p.at(0, 0, y, x)));
        }
    }
    out
}

#[test]
fn gaussian_base_passes_ks() {
    let g = perturbation(&Tensor::full([1, 1, 200, 200], 0.5), NoiseSpec::gaussian(255.0).with_seed(1));
    let (d, p) = ks_normal(&g);
    assert!(p > 0.01, "KS D={d} p={p}");
    assert!(mean(&g).abs() < 0.01);
}

#[test]
fn speckle_variance_tracks_signal() {
    let levels = [0.1f32, 0.4, 0.9];
    let bands = banded(&levels, NoiseSpec::speckle(80.0).with_seed(2));
    let vars: Vec<f64> = bands.iter().map(|b| variance(b)).collect();
    for (v, x) in vars.iter().zip(levels) {
        let want = (80.0f64 / 255.0).powi(2) * f64::from(x);
        assert!((v - want).abs() / want < 0.02, "x={x}: {v} vs {want}");
    }
    assert!(vars.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn poisson_variance_tracks_signal() {
    let levels = [0.1f32, 0.4, 0.9];
    let vars: Vec<f64> = banded(&levels, NoiseSpec::poisson(5.0).with_seed(3)).iter().map(|b| variance(b)).collect();
    for (v, x) in vars.iter().zip(levels) {
        let want = 25.0 * f64::from(x) / 255.0;
        assert!((v - want).abs() / want < 0.03, "x={x}: {v} vs {want}");
    }
    assert!(vars.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn laplace_base_is_unit_variance_and_heavy_tailed() {
    let mut r = rng(4);
    let v: Vec<f64> = (0..1_000_000).map(|_| base_sample(BaseDist::Laplace, &mut r)).collect();
    assert!((variance(&v) - 1.0).abs() < 0.01);
    let k = excess_kurtosis(&v);
    assert!((k - 3.0).abs() < 0.3, "{k}");
}

#[test]
fn constant_level_map_reproduces_speckle_bit_for_bit() {
    let clean = Tensor::<f32>::uniform([1, 3, 20, 24], 0.0, 1.0, &mut rng(5));
    let map = LevelMap::constant(20, 24, 70.0).unwrap();
    for base in [BaseDist::Gaussian, BaseDist::Laplace] {
        let a = speckle(&clean, 70.0, base, 9).unwrap();
        let b = speckle_variant(&clean, &map, base, 9).unwrap();
        assert_eq!(a.image, b.image);
    }
}

#[test]
fn zero_sigma_gaussian_survives_8bit_round_trip() {
    let clean = Tensor::from_fn([1, 1, 8, 8], |_, _, y, x| ((y * 8 + x) * 4) as f32 / 255.0);
    let noisy = gaussian(&clean, 0.0, 1).unwrap();
    let bytes = |t: &Tensor<f32>| t.data().iter().map(|&v| to_u8(v)).collect::<Vec<u8>>();
    assert_eq!(bytes(&noisy.image), bytes(&clean));
    assert_eq!(noisy.clipped_fraction, 0.0);
}

#[test]
fn level_maps_span_exact_range_for_any_seed() {
    for kind in VariantKind::ALL {
        for seed in 0..5 {
            let m = make_level_map(kind, 33, 47, seed).unwrap();
            assert_eq!((m.min(), m.max()), (60.0, 120.0), "{kind:?} seed {seed}");
        }
    }
}

#[test]
fn training_sampler_levels_lie_in_range() {
    let batch = Tensor::full([6, 1, 8, 8], 0.5f32);
    let (noisy, sigmas) = training_sampler(&batch, 3).unwrap();
    assert_eq!(noisy.shape(), batch.shape());
    assert!(sigmas.iter().all(|s| (5.0..20.0).contains(s)));
    assert_eq!(training_sampler(&batch, 3).unwrap().0, noisy);
}
