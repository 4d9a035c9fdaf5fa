//! Desk-scale training, the ID/OOD evaluation grid and ablation sweeps.

mod corpus;
mod eval;
mod sweep;

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::modules::centralize;
use crate::net::{check_magic, read_named, read_u32, write_named, write_u32, Network, NetworkSpec};
use crate::noise::TrainingSampler;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub use corpus::Corpus;
pub use eval::{denoise, evaluate, ood_gap, EvalGrid, EvalReport, EvalRow, RowResult};
pub use sweep::{
    ablation_sweep, directional_experiment, DirectionalConfig, DirectionalOutcome, DirectionalReport, SweepRow, SweepTable,
};

const STATE_MAGIC: &[u8; 6] = b"EQTRN1";
const STATE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Decay interval as a fraction of the total step budget.
    pub lr_decay_period: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub flips: bool,
    pub rotations: bool,
    pub loss: Loss,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            batch_size: 4,
            epochs: 10,
            steps_per_epoch: 100,
            lr: 2e-4,
            lr_decay_factor: 0.5,
            lr_decay_period: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            flips: true,
            rotations: true,
            loss: Loss::L1,
            sigma_min: 5.0,
            sigma_max: 20.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn decay_interval(&self) -> usize {
        ((self.lr_decay_period * self.total_steps() as f64).round() as usize).max(1)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((step / self.decay_interval()) as i32)
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::invalid("batch_size and patch_size must be positive"));
        }
        let factor = 1 << spec.depth;
        if self.patch_size % factor != 0 {
            return Err(Error::invalid(format!(
                "patch_size {} is not divisible by 2^depth = {factor}",
                self.patch_size
            )));
        }
        if !(0.0 <= self.sigma_min && self.sigma_min < self.sigma_max) {
            return Err(Error::invalid("need 0 <= sigma_min < sigma_max"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("TrainConfig serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Deterministic per-step generator, so resumed runs draw the same batches.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Square patch transform: optional flips, then `rot` quarter turns.
fn augment(patch: &Tensor<f32>, flip_h: bool, flip_v: bool, rot: usize) -> Tensor<f32> {
    let p = patch.shape().h;
    let last = p - 1;
    Tensor::from_fn(patch.shape(), |n, c, y, x| {
        let (mut sy, mut sx) = (y, x);
        for _ in 0..rot {
            (sy, sx) = (sx, last - sy);
        }
        if flip_v {
            sy = last - sy;
        }
        if flip_h {
            sx = last - sx;
        }
        patch.at(n, c, sy, sx)
    })
}

/// Clean and noisy `(batch, c, p, p)` tensors drawn from `rng`.
pub fn sample_batch<R: Rng + ?Sized>(corpus: &Corpus, cfg: &TrainConfig, rng: &mut R) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let p = cfg.patch_size;
    let mut patches = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let img = &corpus.images[rng.random_range(0..corpus.len())];
        let s = img.shape();
        let (oy, ox) = (rng.random_range(0..=s.h - p), rng.random_range(0..=s.w - p));
        let crop = Tensor::from_fn([1, s.c, p, p], |_, c, y, x| img.at(0, c, oy + y, ox + x));
        let flip_h = cfg.flips && rng.random_bool(0.5);
        let flip_v = cfg.flips && rng.random_bool(0.5);
        let rot = if cfg.rotations { rng.random_range(0..4) } else { 0 };
        patches.push(augment(&crop, flip_h, flip_v, rot));
    }
    let clean = Tensor::stack(&patches)?;
    let sampler = TrainingSampler {
        sigma_lo: cfg.sigma_min,
        sigma_hi: cfg.sigma_max,
    };
    let (noisy, _) = sampler.sample(&clean, rng)?;
    Ok((clean, noisy))
}

/// Network, optimizer state and loss history of one training run.
pub struct Trainer {
    net: Network<f32>,
    cfg: TrainConfig,
    adam: Adam,
    losses: Vec<f64>,
    diverged_at: Option<usize>,
}

impl Trainer {
    pub fn new(spec: &NetworkSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(spec)?;
        let net = Network::build(spec)?;
        let adam = Adam::new(
            AdamConfig {
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                ..AdamConfig::default()
            },
            net.params(),
        );
        Ok(Self {
            net,
            cfg: cfg.clone(),
            adam,
            losses: Vec::new(),
            diverged_at: None,
        })
    }

    pub fn net(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_net(self) -> Network<f32> {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn steps_done(&self) -> usize {
        self.losses.len()
    }

    /// Step at which the loss first became non-finite.
    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        let spec = self.net.spec();
        if corpus.channels() != spec.in_channels {
            return Err(Error::invalid(format!(
                "corpus has {} channels, network expects {}",
                corpus.channels(),
                spec.in_channels
            )));
        }
        let (h, w) = corpus.min_size();
        if self.cfg.patch_size > h.min(w) {
            return Err(Error::invalid(format!(
                "patch size {} exceeds the smallest corpus image ({h}x{w})",
                self.cfg.patch_size
            )));
        }
        Ok(())
    }

    /// One optimization step; returns its loss.
    pub fn step(&mut self, corpus: &Corpus) -> Result<f64> {
        self.check_corpus(corpus)?;
        let step = self.losses.len();
        let mut rng = step_rng(self.cfg.seed, step);
        let (clean, noisy) = sample_batch(corpus, &self.cfg, &mut rng)?;

        let mut tape = Tape::new();
        let params = self.net.param_leaves(&mut tape);
        let z = tape.leaf(centralize(&noisy));
        let trace = self.net.record_core(&mut tape, z, &params)?;
        let target = centralize(&clean);
        let loss = match self.cfg.loss {
            Loss::L1 => tape.l1_loss(trace.output, &target)?,
            Loss::L2 => tape.l2_loss(trace.output, &target)?,
        };
        let value = f64::from(tape.value(loss).data()[0]);
        self.losses.push(value);
        if !value.is_finite() {
            self.diverge(step, value);
            return Ok(value);
        }
        let mut grads = tape.backward(loss, &Tensor::full([1, 1, 1, 1], 1.0))?;
        let grads: Vec<Tensor<f32>> = params
            .iter()
            .zip(self.net.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        if grads.iter().any(|g| !g.is_finite()) {
            self.diverge(step, value);
            return Ok(value);
        }
        let lr = self.cfg.lr_at(step);
        self.adam.step(self.net.params_mut(), &grads, lr)?;
        Ok(value)
    }

    fn diverge(&mut self, step: usize, value: f64) {
        log::warn!("training diverged at step {step} (loss {value})");
        self.diverged_at = Some(step);
    }

    /// Runs up to `steps` more steps, stopping early on divergence.
    pub fn run(&mut self, corpus: &Corpus, steps: usize) -> Result<()> {
        for _ in 0..steps {
            if self.diverged_at.is_some() {
                break;
            }
            let step = self.losses.len();
            let loss = self.step(corpus)?;
            if step % 50 == 0 {
                log::debug!("step {step} loss {loss:.6} lr {:.3e}", self.cfg.lr_at(step));
            }
        }
        Ok(())
    }

    /// Runs the remainder of the configured budget.
    pub fn run_to_end(&mut self, corpus: &Corpus) -> Result<()> {
        let remaining = self.cfg.total_steps().saturating_sub(self.losses.len());
        self.run(corpus, remaining)
    }

    pub fn write_state<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        write_u32(&mut w, STATE_VERSION as usize)?;
        let cfg = self.cfg.to_toml();
        write_u32(&mut w, cfg.len())?;
        w.write_all(cfg.as_bytes())?;
        write_u32(&mut w, self.losses.len())?;
        for l in &self.losses {
            w.write_all(&l.to_le_bytes())?;
        }
        let diverged = self.diverged_at.map_or(u64::MAX, |s| s as u64);
        w.write_all(&diverged.to_le_bytes())?;
        w.write_all(&self.adam.steps.to_le_bytes())?;
        self.net.write_to(&mut w)?;
        let names = self.net.param_names();
        write_named(&mut w, names, &self.adam.m)?;
        write_named(&mut w, names, &self.adam.v)
    }

    pub fn read_state<R: Read>(mut r: R) -> Result<Self> {
        check_magic(&mut r, STATE_MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != STATE_VERSION {
            return Err(Error::Version(version));
        }
        let len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let cfg = TrainConfig::from_toml(&String::from_utf8(buf).map_err(|e| Error::Corrupt(e.to_string()))?)?;
        let n = read_u32(&mut r)? as usize;
        let mut losses = Vec::with_capacity(n.min(1 << 20));
        let mut b8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            losses.push(f64::from_le_bytes(b8));
        }
        r.read_exact(&mut b8)?;
        let diverged = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let adam_steps = u64::from_le_bytes(b8);
        let net = Network::read_from(&mut r)?;
        let (_, m) = read_named(&mut r)?;
        let (_, v) = read_named(&mut r)?;
        let mut trainer = Trainer::new(net.spec(), &cfg)?;
        if m.len() != net.params().len() || v.len() != net.params().len() {
            return Err(Error::Corrupt("optimizer state does not match the network".into()));
        }
        trainer.net = net;
        trainer.adam.m = m;
        trainer.adam.v = v;
        trainer.adam.steps = adam_steps;
        trainer.losses = losses;
        trainer.diverged_at = (diverged != u64::MAX).then_some(diverged as usize);
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_state(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_state(bytes)
    }

    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load_state(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loss curve as CSV with columns `step, loss, lr`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss,lr\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l},{}\n", self.cfg.lr_at(i)));
        }
        out
    }
}

/// Final state of a completed [`train`] call.
pub struct TrainOutcome {
    pub net: Network<f32>,
    pub losses: Vec<f64>,
    pub diverged_at: Option<usize>,
}

pub fn train(spec: &NetworkSpec, cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(spec, cfg)?;
    trainer.check_corpus(corpus)?;
    trainer.run_to_end(corpus)?;
    Ok(TrainOutcome {
        losses: trainer.losses.clone(),
        diverged_at: trainer.diverged_at,
        net: trainer.net,
    })
}
