//! Numerical homogeneity auditing in f64.
//!
//! A map `f` is order-`p` homogeneous when `f(k x) = k^p f(x)` for all `k > 0`.
//! The order is estimated as the slope of `log ||f(k x)||` against `log k`
//! and confirmed by the elementwise residual at every probe scale.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modules::centralize;
use crate::net::Network;
use crate::noise::LevelMap;
use crate::tensor::Tensor;

pub const PROBE_SCALES: [f64; 5] = [1e-2, 1e-1, 1.0, 10.0, 1e2];
pub const SLOPE_TOLERANCE: f64 = 0.01;
pub const RESIDUAL_TOLERANCE: f64 = 1e-4;
/// Floor in the denominator of elementwise relative residuals.
pub const RESIDUAL_FLOOR: f64 = 1e-8;
pub const DECOUPLING_CONSTANTS: [f64; 3] = [0.1, 3.0, 50.0];
pub const DECOUPLING_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Order0,
    Order1,
    Order2,
    NonHomogeneous,
}

impl Verdict {
    pub fn order(self) -> Option<u32> {
        match self {
            Verdict::Order0 => Some(0),
            Verdict::Order1 => Some(1),
            Verdict::Order2 => Some(2),
            Verdict::NonHomogeneous => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Order0 => "order0",
            Verdict::Order1 => "order1",
            Verdict::Order2 => "order2",
            Verdict::NonHomogeneous => "non_homogeneous",
        }
    }
}

/// Least-squares slope of `log ||f(k x)||_2` against `log k`.
pub fn estimate_order(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    input: &Tensor<f64>,
    scales: &[f64],
) -> Result<OrderFit> {
    if scales.len() < 4 {
        return Err(Error::invalid(format!("need at least 4 probe scales, got {}", scales.len())));
    }
    if scales.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::invalid("probe scales must be positive"));
    }
    let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().copied().fold(0.0, f64::max);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(Error::invalid("probe scales must span at least two decades"));
    }
    let mut xs = Vec::with_capacity(scales.len());
    let mut ys = Vec::with_capacity(scales.len());
    for &k in scales {
        let norm = f(&input.scale(k))?.norm_l2();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Unobservable(format!("output norm {norm} at k = {k}")));
        }
        xs.push(k.ln());
        ys.push(norm.ln());
    }
    Ok(fit_line(&xs, &ys))
}

fn fit_line(xs: &[f64], ys: &[f64]) -> OrderFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    OrderFit { slope, intercept, r2 }
}

/// `max_e |f(k x)_e - k^p f(x)_e| / (|k^p f(x)_e| + 1e-8)`.
pub fn homogeneity_residual(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    input: &Tensor<f64>,
    k: f64,
    order: u32,
) -> Result<f64> {
    let base = f(input)?;
    let scaled = f(&input.scale(k))?;
    base.expect_shape(scaled.shape(), "homogeneity_residual")?;
    let kp = k.powi(order as i32);
    Ok(scaled
        .data()
        .iter()
        .zip(base.data())
        .map(|(&s, &b)| (s - kp * b).abs() / ((kp * b).abs() + RESIDUAL_FLOOR))
        .fold(0.0, f64::max))
}

/// First-order residual `max_e |f(k x)_e - k f(x)_e| / (|k f(x)_e| + 1e-8)`.
pub fn equivariance_residual(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    input: &Tensor<f64>,
    k: f64,
) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {k}")));
    }
    homogeneity_residual(f, input, k, 1)
}

/// Fit, verdict and worst residuals for one probe input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub fit: OrderFit,
    pub verdict: Verdict,
    /// Worst first-order residual over the probe scales.
    pub order1_residual: f64,
    /// Worst residual at the order the slope rounds to.
    pub fitted_residual: f64,
}

pub fn probe(f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>, input: &Tensor<f64>, scales: &[f64]) -> Result<Probe> {
    let fit = estimate_order(&f, input, scales)?;
    let worst = |p: u32| -> Result<f64> {
        scales
            .iter()
            .map(|&k| homogeneity_residual(&f, input, k, p))
            .try_fold(0.0, |acc, r| r.map(|r| f64::max(acc, r)))
    };
    let order1_residual = worst(1)?;
    let rounded = fit.slope.round();
    let (verdict, fitted_residual) = if (0.0..=2.0).contains(&rounded) {
        let p = rounded as u32;
        let residual = if p == 1 { order1_residual } else { worst(p)? };
        let ok = (fit.slope - rounded).abs() <= SLOPE_TOLERANCE && residual <= RESIDUAL_TOLERANCE;
        let verdict = match (ok, p) {
            (false, _) => Verdict::NonHomogeneous,
            (true, 0) => Verdict::Order0,
            (true, 1) => Verdict::Order1,
            _ => Verdict::Order2,
        };
        (verdict, residual)
    } else {
        (Verdict::NonHomogeneous, f64::INFINITY)
    };
    Ok(Probe {
        fit,
        verdict,
        order1_residual,
        fitted_residual,
    })
}

/// Aggregate of [`probe`] over several inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeAudit {
    pub name: String,
    pub slope: f64,
    pub slope_spread: f64,
    pub r2: f64,
    pub max_residual: f64,
    pub verdict: Verdict,
    /// Same verdict on every probe input.
    pub stable: bool,
    pub probes: usize,
}

pub fn audit_fn(
    name: &str,
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    inputs: &[Tensor<f64>],
    scales: &[f64],
) -> Result<NodeAudit> {
    if inputs.is_empty() {
        return Err(Error::invalid("audit needs at least one probe input"));
    }
    let probes = inputs.iter().map(|x| probe(&f, x, scales)).collect::<Result<Vec<_>>>()?;
    let slopes: Vec<f64> = probes.iter().map(|p| p.fit.slope).collect();
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = probes[0].verdict;
    let stable = probes.iter().all(|p| p.verdict == first);
    Ok(NodeAudit {
        name: name.to_string(),
        slope: slopes.iter().sum::<f64>() / slopes.len() as f64,
        slope_spread: hi - lo,
        r2: probes.iter().map(|p| p.fit.r2).fold(f64::INFINITY, f64::min),
        max_residual: probes.iter().map(|p| p.order1_residual).fold(0.0, f64::max),
        verdict: if stable { first } else { Verdict::NonHomogeneous },
        stable,
        probes: probes.len(),
    })
}

/// Relative L2 distance between `G(Z + L*N)` and `L * G(Z / L + N)`.
pub fn decoupling_residual(
    g: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    z: &Tensor<f64>,
    lambda: &LevelMap,
    noise: &Tensor<f64>,
) -> Result<f64> {
    let s = z.shape();
    z.expect_shape(noise.shape(), "decoupling_probe")?;
    if lambda.height() != s.h || lambda.width() != s.w {
        return Err(Error::ShapeMismatch {
            op: "decoupling_probe",
            left: s,
            right: lambda.phi().shape(),
        });
    }
    let l = Tensor::from_fn(s, |_, _, i, j| lambda.at(i, j));
    let lhs = g(&z.add(&l.mul(noise)?)?)?;
    let inner = z.zip_map(&l, "decoupling_probe", |a, b| a / b)?.add(noise)?;
    let rhs = l.mul(&g(&inner)?)?;
    let denom = lhs.norm_l2().max(f64::MIN_POSITIVE);
    Ok(lhs.sub(&rhs)?.norm_l2() / denom)
}

/// Decoupling residual of `net` on centered `clean` with seeded unit Gaussian base noise.
pub fn decoupling_probe(net: &Network<f64>, clean: &Tensor<f64>, lambda: &LevelMap, noise_seed: u64) -> Result<f64> {
    let z = centralize(clean);
    let noise = Tensor::randn(z.shape(), 1.0, &mut ChaCha8Rng::seed_from_u64(noise_seed));
    decoupling_residual(|x| net.core(x), &z, lambda, &noise)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingRow {
    pub lambda: String,
    pub residual: f64,
    /// Constant maps reduce to first-order homogeneity and are asserted;
    /// spatially varying maps are only measured.
    pub asserted: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub certified: bool,
    pub all_order1: bool,
    pub summary: String,
    pub end_to_end: NodeAudit,
    pub nodes: Vec<NodeAudit>,
    pub decoupling: Vec<DecouplingRow>,
}

impl AuditReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("audit report serializes to TOML")
    }

    /// Per-node CSV: `node, slope, r2, max_residual, verdict, stable`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node", "slope", "r2", "max_residual", "verdict", "stable"])?;
        for n in self.nodes.iter().chain(std::iter::once(&self.end_to_end)) {
            out.write_record([
                n.name.clone(),
                format!("{:.6}", n.slope),
                format!("{:.6}", n.r2),
                format!("{:.3e}", n.max_residual),
                n.verdict.as_str().to_string(),
                n.stable.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn decoupling_passed(&self) -> bool {
        self.decoupling.iter().all(|r| r.passed)
    }
}

/// Per-node and end-to-end verdicts on centered versions of `inputs`,
/// plus decoupling probes on the first input.
pub fn audit_network(net: &Network<f32>, inputs: &[Tensor<f32>], noise_seed: u64) -> Result<AuditReport> {
    if inputs.len() < 3 {
        return Err(Error::invalid(format!("audit needs at least 3 probe inputs, got {}", inputs.len())));
    }
    let net64 = net.cast::<f64>()?;
    let centered: Vec<Tensor<f64>> = inputs.iter().map(|x| centralize(&x.cast::<f64>())).collect();
    let captures = centered
        .iter()
        .map(|z| net64.node_inputs(z))
        .collect::<Result<Vec<_>>>()?;

    let mut nodes = Vec::with_capacity(net64.nodes().len());
    for (i, node) in net64.nodes().iter().enumerate() {
        let node_inputs: Vec<Tensor<f64>> = captures.iter().map(|c| c[i].clone()).collect();
        let name = format!("{} ({})", node.label, node.stage().name());
        nodes.push(audit_fn(&name, |x| net64.node_forward(i, x), &node_inputs, &PROBE_SCALES)?);
    }
    let end_to_end = audit_fn("G", |x| net64.core(x), &centered, &PROBE_SCALES)?;

    let first = inputs[0].cast::<f64>();
    let (h, w) = (first.shape().h, first.shape().w);
    let mut decoupling = Vec::new();
    for k in DECOUPLING_CONSTANTS {
        let residual = decoupling_probe(&net64, &first, &LevelMap::constant(h, w, k)?, noise_seed)?;
        decoupling.push(DecouplingRow {
            lambda: format!("constant({k})"),
            residual,
            asserted: true,
            passed: residual <= DECOUPLING_TOLERANCE,
        });
    }
    if h >= 8 && w >= 8 {
        let map = crate::noise::make_level_map(crate::noise::VariantKind::Sincos, h, w, noise_seed)?.scaled(1.0 / 255.0)?;
        let residual = decoupling_probe(&net64, &first, &map, noise_seed)?;
        decoupling.push(DecouplingRow {
            lambda: "sincos(phi/255)".into(),
            residual,
            asserted: false,
            passed: true,
        });
    }

    let all_order1 = end_to_end.verdict == Verdict::Order1 && nodes.iter().all(|n| n.verdict == Verdict::Order1);
    let offenders: Vec<&str> = nodes
        .iter()
        .filter(|n| n.verdict != Verdict::Order1)
        .map(|n| n.name.as_str())
        .collect();
    let summary = if all_order1 {
        "every node and the end-to-end map are first-order homogeneous".to_string()
    } else if offenders.is_empty() {
        format!("end-to-end map is {}", end_to_end.verdict.as_str())
    } else {
        format!("not scale-equivariant; non-order1 nodes: {}", offenders.join(", "))
    };
    Ok(AuditReport {
        certified: net.certified(),
        all_order1,
        summary,
        end_to_end,
        nodes,
        decoupling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkSpec;

    fn input() -> Tensor<f64> {
        Tensor::from_fn([1, 4, 3, 3], |_, c, h, w| ((c * 9 + h * 3 + w) as f64 * 0.37).sin())
    }

    #[test]
    fn exact_orders_have_exact_slopes() {
        let x = input();
        for (p, f) in [
            (0.0, Box::new(|t: &Tensor<f64>| Ok(t.map(|v| v.signum() + 2.0))) as Box<dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>>),
            (1.0, Box::new(|t: &Tensor<f64>| Ok(t.scale(3.0)))),
            (2.0, Box::new(|t: &Tensor<f64>| Ok(t.map(|v| v * v)))),
        ] {
            let fit = estimate_order(&f, &x, &PROBE_SCALES).unwrap();
            assert!((fit.slope - p).abs() < 1e-6, "{p}: {}", fit.slope);
            assert!(fit.r2 > 1.0 - 1e-9);
        }
    }

    #[test]
    fn identity_residual_is_zero() {
        let x = input();
        assert_eq!(equivariance_residual(|t| Ok(t.clone()), &x, 7.0).unwrap(), 0.0);
        for k in PROBE_SCALES {
            assert_eq!(equivariance_residual(|t| Ok(t.map(|v| v.sin())), &x, 1.0).unwrap(), 0.0, "{k}");
        }
    }

    #[test]
    fn preconditions() {
        let x = input();
        assert!(estimate_order(|t| Ok(t.clone()), &x, &[1.0, 2.0, 3.0]).is_err());
        assert!(estimate_order(|t| Ok(t.clone()), &x, &[1.0, 2.0, 3.0, 4.0]).is_err());
        let err = estimate_order(|t| Ok(t.scale(0.0)), &x, &PROBE_SCALES).unwrap_err();
        assert!(matches!(err, Error::Unobservable(_)));
    }

    #[test]
    fn network_audit_needs_three_inputs() {
        let net = Network::<f32>::build(&NetworkSpec::baseline()).unwrap();
        assert!(audit_network(&net, &[Tensor::zeros([1, 3, 8, 8])], 0).is_err());
    }
}
