use serde::{Deserialize, Serialize};

use super::{evaluate, ood_gap, train, Corpus, EvalGrid, TrainConfig};
use crate::audit::{audit_fn, PROBE_SCALES};
use crate::error::Result;
use crate::modules::centralize;
use crate::net::{Network, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub certified: bool,
    pub expected_unstable: bool,
    pub diverged_at: Option<usize>,
    pub final_loss: f64,
    pub id_psnr: f64,
    pub ood_psnr: f64,
    pub ood_gap: f64,
    /// End-to-end audit verdict of the trained network.
    pub verdict: String,
    pub max_residual: f64,
    pub parameters: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<34} {:>5} {:>8} {:>9} {:>9} {:>8} {:>16} {:>10}\n",
            "variant", "cert", "params", "id_psnr", "ood_psnr", "gap", "verdict", "residual"
        );
        for r in &self.rows {
            let verdict = match r.diverged_at {
                Some(s) => format!("diverged@{s}"),
                None => r.verdict.clone(),
            };
            out.push_str(&format!(
                "{:<34} {:>5} {:>8} {:>9.3} {:>9.3} {:>8.3} {:>16} {:>10.2e}\n",
                r.label, r.certified, r.parameters, r.id_psnr, r.ood_psnr, r.ood_gap, verdict, r.max_residual
            ));
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep table serializes to TOML")
    }
}

/// Top-left crops whose sides are multiples of the network factor.
fn audit_inputs(net: &Network<f32>, corpus: &Corpus, count: usize) -> Vec<Tensor<f64>> {
    let f = net.factor();
    corpus
        .images
        .iter()
        .cycle()
        .take(count)
        .map(|img| {
            let s = img.shape();
            let (h, w) = (s.h / f * f, s.w / f * f);
            let c = Tensor::from_fn([1, s.c, h, w], |_, ch, y, x| img.at(0, ch, y, x));
            centralize(&c.cast::<f64>())
        })
        .collect()
}

/// Trains and evaluates every variant under the same config, in input order.
pub fn ablation_sweep(
    variants: &[(String, NetworkSpec)],
    cfg: &TrainConfig,
    grid: &EvalGrid,
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
) -> Result<SweepTable> {
    let mut table = SweepTable::default();
    for (label, spec) in variants {
        log::info!("sweep: training {label}");
        let outcome = train(spec, cfg, train_corpus)?;
        let final_loss = outcome.losses.last().copied().unwrap_or(f64::NAN);
        let parameters = outcome.net.count_parameters();
        let certified = outcome.net.certified();
        let row = if let Some(step) = outcome.diverged_at {
            SweepRow {
                label: label.clone(),
                certified,
                expected_unstable: spec.expected_unstable(),
                diverged_at: Some(step),
                final_loss,
                id_psnr: f64::NAN,
                ood_psnr: f64::NAN,
                ood_gap: f64::NAN,
                verdict: "diverged".into(),
                max_residual: f64::NAN,
                parameters,
            }
        } else {
            let report = evaluate(&outcome.net, grid, eval_corpus)?;
            let (id, ood) = (report.id_report(), report.ood_report());
            let net64 = outcome.net.cast::<f64>()?;
            let inputs = audit_inputs(&outcome.net, eval_corpus, 3);
            let (verdict, max_residual) = match audit_fn("G", |x| net64.core(x), &inputs, &PROBE_SCALES) {
                Ok(a) => (a.verdict.as_str().to_string(), a.max_residual),
                Err(e) => (format!("unobservable: {e}"), f64::NAN),
            };
            SweepRow {
                label: label.clone(),
                certified,
                expected_unstable: spec.expected_unstable(),
                diverged_at: None,
                final_loss,
                id_psnr: id.mean_psnr(),
                ood_psnr: ood.mean_psnr(),
                ood_gap: ood_gap(&id, &ood)?,
                verdict,
                max_residual,
                parameters,
            }
        };
        table.rows.push(row);
    }
    Ok(table)
}

/// Desk-scale comparison of an equivariant baseline against a
/// LayerNorm + GELU variant trained identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionalConfig {
    pub seeds: Vec<u64>,
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub blocks_per_stage: usize,
    pub train: TrainConfig,
    pub train_images: usize,
    pub eval_images: usize,
    pub image_size: usize,
}

impl Default for DirectionalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            in_channels: 1,
            base_channels: 8,
            depth: 2,
            blocks_per_stage: 1,
            train: TrainConfig {
                patch_size: 32,
                batch_size: 4,
                epochs: 6,
                steps_per_epoch: 50,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            train_images: 16,
            eval_images: 6,
            image_size: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalOutcome {
    pub seed: u64,
    pub baseline_id_psnr: f64,
    pub baseline_ood_psnr: f64,
    pub baseline_gap: f64,
    pub variant_id_psnr: f64,
    pub variant_ood_psnr: f64,
    pub variant_gap: f64,
}

impl DirectionalOutcome {
    pub fn baseline_wins(&self) -> bool {
        self.baseline_gap < self.variant_gap
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub outcomes: Vec<DirectionalOutcome>,
    pub wins: usize,
    pub required: usize,
}

impl DirectionalReport {
    pub fn passed(&self) -> bool {
        self.wins >= self.required
    }
}

pub fn directional_experiment(cfg: &DirectionalConfig) -> Result<DirectionalReport> {
    let shape = |spec: NetworkSpec, seed: u64| NetworkSpec {
        in_channels: cfg.in_channels,
        base_channels: cfg.base_channels,
        depth: cfg.depth,
        blocks_per_stage: cfg.blocks_per_stage,
        seed,
        ..spec
    };
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let train_corpus = Corpus::synthetic(cfg.train_images, cfg.in_channels, cfg.image_size, cfg.image_size, seed)?;
        let eval_corpus = Corpus::synthetic(
            cfg.eval_images,
            cfg.in_channels,
            cfg.image_size,
            cfg.image_size,
            seed.wrapping_add(0x5eed_0000),
        )?;
        let grid = EvalGrid::directional(seed);
        let tcfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut gaps = Vec::with_capacity(2);
        for spec in [NetworkSpec::baseline(), NetworkSpec::layernorm_gelu()] {
            let outcome = train(&shape(spec, seed), &tcfg, &train_corpus)?;
            let report = evaluate(&outcome.net, &grid, &eval_corpus)?;
            let (id, ood) = (report.id_report(), report.ood_report());
            gaps.push((id.mean_psnr(), ood.mean_psnr(), ood_gap(&id, &ood)?));
        }
        let o = DirectionalOutcome {
            seed,
            baseline_id_psnr: gaps[0].0,
            baseline_ood_psnr: gaps[0].1,
            baseline_gap: gaps[0].2,
            variant_id_psnr: gaps[1].0,
            variant_ood_psnr: gaps[1].1,
            variant_gap: gaps[1].2,
        };
        log::info!(
            "directional seed {seed}: baseline gap {:.3} dB, layernorm+gelu gap {:.3} dB",
            o.baseline_gap,
            o.variant_gap
        );
        outcomes.push(o);
    }
    let wins = outcomes.iter().filter(|o| o.baseline_wins()).count();
    Ok(DirectionalReport {
        required: outcomes.len() / 2 + 1,
        wins,
        outcomes,
    })
}
