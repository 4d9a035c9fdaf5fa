#![allow(dead_code)]

use eqnet_core::autodiff::{Tape, Var};
use eqnet_core::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub mod cases;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn<T: eqnet_core::Real>(shape: impl Into<Shape>, std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::<f64>::randn(shape, std, rng).cast()
}

/// Kaiming-style conv weight in f64.
pub fn conv_weight(cout: usize, cin: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn([cout, cin, k, k], (2.0 / (cin * k * k) as f64).sqrt(), rng)
}

/// `max |f(kx) - k f(x)| / max |k f(x)|`, computed in the tensor's own precision.
pub fn max_rel_deviation<T: eqnet_core::Real>(
    f: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>,
    x: &Tensor<T>,
    k: f64,
) -> Result<f64> {
    let kt = T::of(k);
    let lhs = f(&x.scale(kt))?;
    let rhs = f(x)?.scale(kt);
    let denom = rhs.max_abs();
    if denom == 0.0 {
        return Ok(lhs.max_abs());
    }
    Ok(lhs.sub(&rhs)?.max_abs() / denom)
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradCheck {
    pub fn passed(&self, min_checked: usize) -> bool {
        self.checked >= min_checked && self.worst <= FD_TOLERANCE
    }
}

type Build<'a> = &'a dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn weighted_sum(build: Build<'_>, leaves: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let value = tape.value(out);
    Ok(value.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

/// Compares tape gradients of `sum(out * R)` against central differences on
/// randomly sampled coordinates until `target` coordinates are checked.
///
/// With `kinked`, coordinates whose one-sided slopes disagree are skipped:
/// the step straddles a non-differentiable point there.
pub fn grad_check(
    leaves: &[Tensor<f64>],
    build: Build<'_>,
    target: usize,
    kinked: bool,
    seed: u64,
) -> Result<GradCheck> {
    let mut r = rng(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let weights = Tensor::<f64>::randn(tape.shape(out), 1.0, &mut r);
    let grads = tape.backward(out, &weights)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(leaves)
        .map(|(v, l)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(l.shape())))
        .collect();

    let base = weighted_sum(build, leaves, &weights)?;
    let mut report = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let mut attempts = 0;
    let mut cursor = 0usize;
    while report.checked < target && attempts < 4 * target {
        attempts += 1;
        // Round-robin over leaves so small parameter tensors are always covered.
        let li = cursor % leaves.len();
        cursor += 1;
        let idx = r.random_range(0..leaves[li].len());
        let eval = |delta: f64| -> Result<f64> {
            let mut moved = leaves.to_vec();
            moved[li].data_mut()[idx] += delta;
            weighted_sum(build, &moved, &weights)
        };
        let (plus, minus) = (eval(FD_STEP)?, eval(-FD_STEP)?);
        if kinked {
            let (right, left) = ((plus - base) / FD_STEP, (base - minus) / FD_STEP);
            if (right - left).abs() > 1e-2 * right.abs().max(left.abs()).max(1e-3) {
                report.skipped += 1;
                continue;
            }
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[li].data()[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        if rel > report.worst {
            report.worst = rel;
            report.worst_at = format!("leaf {li} index {idx}: analytic {a:.6e}, numeric {numeric:.6e}");
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Direct-formula SSIM: explicit 2D Gaussian window, per-window moments.

pub fn ssim_reference(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let size = 11usize;
    let sigma = 1.5f64;
    let mut window = vec![vec![0.0; size]; size];
    let mut norm = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            norm += *w;
        }
    }
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..=s.h - size {
                for x in 0..=s.w - size {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..size {
                        for j in 0..size {
                            let w = window[i][j] / norm;
                            mx += w * a.at(n, c, y + i, x + j);
                            my += w * b.at(n, c, y + i, x + j);
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..size {
                        for j in 0..size {
                            let w = window[i][j] / norm;
                            let dx = a.at(n, c, y + i, x + j) - mx;
                            let dy = b.at(n, c, y + i, x + j) - my;
                            vx += w * dx * dx;
                            vy += w * dy * dy;
                            cov += w * dx * dy;
                        }
                    }
                    total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Random image pair: a clean-ish base and a degraded copy.
pub fn ssim_pair(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let c = if rng.random_bool(0.5) { 1 } else { 3 };
    let (h, w) = (rng.random_range(11..28), rng.random_range(11..28));
    let a = Tensor::<f64>::uniform([1, c, h, w], 0.0, 1.0, rng);
    let amount = rng.random_range(0.0..0.5);
    let noise = Tensor::<f64>::uniform([1, c, h, w], -amount, amount, rng);
    let b = a.add(&noise).unwrap().clamp(0.0, 1.0);
    (a, b)
}

// ---------------------------------------------------------------------------
// Sample statistics.

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn excess_kurtosis(v: &[f64]) -> f64 {
    let m = mean(v);
    let n = v.len() as f64;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// One-sample Kolmogorov-Smirnov statistic against the standard normal and
/// its asymptotic p-value.
pub fn ks_normal(v: &[f64]) -> (f64, f64) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..100 {
        let j = j as f64;
        p += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * t * t).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}
