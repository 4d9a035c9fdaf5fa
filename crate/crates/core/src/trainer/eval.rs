use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::image_io::{crop, reflect_pad};
use crate::metrics::{self, psnr, ssim, MetricReport, MetricRow};
use crate::net::Network;
use crate::noise::{BaseDist, NoiseRegistry, NoiseSpec, VariantKind};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    /// Rows sharing a group are averaged together in the report.
    pub group: String,
    pub in_distribution: bool,
    pub spec: NoiseSpec,
}

impl EvalRow {
    fn new(label: impl Into<String>, group: &str, in_distribution: bool, spec: NoiseSpec) -> Self {
        Self {
            label: label.into(),
            group: group.to_string(),
            in_distribution,
            spec,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub rows: Vec<EvalRow>,
}

impl EvalGrid {
    /// ID Gaussian, Speckle, Poisson, mixture, Variants 1-3 and the Laplace-base rows.
    pub fn standard(seed: u64) -> Self {
        let mut rows = vec![EvalRow::new("Gaussian s=20", "gaussian", true, NoiseSpec::gaussian(20.0))];
        for s in [60.0, 80.0, 90.0] {
            rows.push(EvalRow::new(format!("Speckle s={s}"), "speckle", false, NoiseSpec::speckle(s)));
        }
        for a in [4.0, 5.0, 6.0] {
            rows.push(EvalRow::new(format!("Poisson a={a}"), "poisson", false, NoiseSpec::poisson(a)));
        }
        rows.push(EvalRow::new("Mixture s=90 a=6", "mixture", false, NoiseSpec::mixture(90.0, 6.0)));
        for kind in VariantKind::ALL {
            rows.push(EvalRow::new(format!("Variant {}", kind.index()), "variant", false, NoiseSpec::variant(kind)));
        }
        for s in [60.0, 80.0, 90.0] {
            rows.push(EvalRow::new(
                format!("Laplace speckle s={s}"),
                "laplace_speckle",
                false,
                NoiseSpec::speckle(s).with_base(BaseDist::Laplace),
            ));
        }
        for kind in VariantKind::ALL {
            rows.push(EvalRow::new(
                format!("Laplace variant {}", kind.index()),
                "laplace_variant",
                false,
                NoiseSpec::variant(kind).with_base(BaseDist::Laplace),
            ));
        }
        Self::seeded(rows, seed)
    }

    /// ID Gaussian plus Speckle s=90 and Variants 1-3.
    pub fn directional(seed: u64) -> Self {
        let mut rows = vec![
            EvalRow::new("Gaussian s=20", "gaussian", true, NoiseSpec::gaussian(20.0)),
            EvalRow::new("Speckle s=90", "speckle", false, NoiseSpec::speckle(90.0)),
        ];
        for kind in VariantKind::ALL {
            rows.push(EvalRow::new(format!("Variant {}", kind.index()), "variant", false, NoiseSpec::variant(kind)));
        }
        Self::seeded(rows, seed)
    }

    fn seeded(mut rows: Vec<EvalRow>, seed: u64) -> Self {
        for (i, row) in rows.iter_mut().enumerate() {
            row.spec.seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64 * 10_007);
        }
        Self { rows }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("EvalGrid serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Reflect-pads to the network's size multiple, runs it and crops back.
pub fn denoise(net: &Network<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    let f = net.factor();
    let (ph, pw) = ((f - s.h % f) % f, (f - s.w % f) % f);
    if ph == 0 && pw == 0 {
        return net.forward(image);
    }
    let out = net.forward(&reflect_pad(image, ph, pw)?)?;
    Ok(crop(&out, s.h, s.w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowResult {
    pub row: EvalRow,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub corpus_fingerprint: u64,
    pub rows: Vec<RowResult>,
}

impl EvalReport {
    fn merged(&self, keep: impl Fn(&EvalRow) -> bool) -> MetricReport {
        let mut out = MetricReport::default();
        for r in self.rows.iter().filter(|r| keep(&r.row)) {
            out.rows.extend(r.report.rows.iter().cloned());
        }
        out
    }

    pub fn id_report(&self) -> MetricReport {
        self.merged(|r| r.in_distribution)
    }

    pub fn ood_report(&self) -> MetricReport {
        self.merged(|r| !r.in_distribution)
    }

    pub fn select(&self, labels: &[&str]) -> MetricReport {
        self.merged(|r| labels.contains(&r.label.as_str()))
    }

    /// `(label, psnr, ssim)` for every group with more than one row.
    pub fn averages(&self) -> Vec<(String, f64, f64)> {
        let mut groups: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !groups.contains(&r.row.group.as_str()) {
                groups.push(&r.row.group);
            }
        }
        groups
            .into_iter()
            .filter_map(|g| {
                let members: Vec<&RowResult> = self.rows.iter().filter(|r| r.row.group == g).collect();
                (members.len() > 1).then(|| {
                    (
                        format!("{g} (avg)"),
                        metrics::mean(members.iter().map(|r| r.report.mean_psnr())),
                        metrics::mean(members.iter().map(|r| r.report.mean_ssim())),
                    )
                })
            })
            .collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:>4} {:>9} {:>8} {:>8}\n", "row", "id", "psnr", "ssim", "clipped");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>4} {:>9.3} {:>8.4} {:>8.4}\n",
                r.row.label,
                if r.row.in_distribution { "yes" } else { "no" },
                r.report.mean_psnr(),
                r.report.mean_ssim(),
                r.report.mean_clipped()
            ));
        }
        for (label, p, s) in self.averages() {
            out.push_str(&format!("{label:<28} {:>4} {p:>9.3} {s:>8.4}\n", ""));
        }
        out
    }

    /// Per-image rows with columns `image_id, noise_spec, psnr, ssim`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.merged(|_| true).write_csv(w)
    }
}

/// Denoises every corpus image under every grid row. Image `i` of a row uses
/// noise seed `row.spec.seed + i`.
pub fn evaluate(net: &Network<f32>, grid: &EvalGrid, corpus: &Corpus) -> Result<EvalReport> {
    let registry = NoiseRegistry::builtin();
    let rows = grid
        .rows
        .iter()
        .map(|row| {
            let rows = corpus
                .images
                .par_iter()
                .zip(corpus.names.par_iter())
                .enumerate()
                .map(|(i, (clean, name))| {
                    let spec = NoiseSpec {
                        seed: row.spec.seed.wrapping_add(i as u64),
                        ..row.spec.clone()
                    };
                    let noisy = registry.apply(clean, &spec)?;
                    let restored = denoise(net, &noisy.image)?;
                    Ok(MetricRow {
                        image_id: name.clone(),
                        noise_spec: row.spec.label(),
                        psnr: psnr(&restored, clean)?,
                        ssim: ssim(&restored, clean)?,
                        clipped_fraction: noisy.clipped_fraction,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RowResult {
                row: row.clone(),
                report: MetricReport { rows },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        corpus_fingerprint: corpus.fingerprint(),
        rows,
    })
}

/// Mean ID PSNR minus mean OOD PSNR; positive means degradation.
pub fn ood_gap(report_id: &MetricReport, report_ood: &MetricReport) -> Result<f64> {
    let ids = |r: &MetricReport| r.rows.iter().map(|x| x.image_id.clone()).collect::<BTreeSet<_>>();
    if report_id.rows.is_empty() || report_ood.rows.is_empty() {
        return Err(Error::invalid("ood_gap needs non-empty ID and OOD reports"));
    }
    if ids(report_id) != ids(report_ood) {
        return Err(Error::invalid("ID and OOD reports were computed on different corpora"));
    }
    Ok(report_id.mean_psnr() - report_ood.mean_psnr())
}
