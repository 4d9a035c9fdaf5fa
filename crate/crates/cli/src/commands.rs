use std::path::{Path, PathBuf};

use eqnet_core::audit::audit_network;
use eqnet_core::image_io::{list_images, load_image, save_image};
use eqnet_core::net::{ablation_variants, Network, NetworkSpec};
use eqnet_core::noise::{apply_noise, BaseDist, ManifestEntry, NoiseManifest, NoiseSpec, VariantKind};
use eqnet_core::trainer::{
    ablation_sweep, denoise, directional_experiment, evaluate, DirectionalConfig, EvalGrid, TrainConfig, Trainer,
};

use crate::config::{
    self, AuditConfig, CorpusSource, DenoiseConfig, EvalConfig, GenNoiseConfig, SweepConfig, SweepKind,
    TrainRunConfig,
};
use crate::{
    AuditArgs, Base, Cli, Command, CorpusArgs, DenoiseArgs, EvalArgs, Failure, Family, GenNoiseArgs, Preset,
    SweepArgs, TrainArgs, Variant,
};

type Outcome = Result<(), Failure>;

const DEFAULT_OUT: &str = "eqnet-out";

struct Globals {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Globals {
    fn out(&self, from_config: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| from_config.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn base<T: serde::de::DeserializeOwned>(&self) -> Result<Option<T>, Failure> {
        self.config.as_deref().map(config::load).transpose().map_err(Failure::from)
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(format!("{flag} is required (or pass --config)")))
}

pub fn run(cli: Cli) -> Outcome {
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
        out: cli.out,
    };
    match cli.command {
        Command::GenNoise(a) => gen_noise(&g, a),
        Command::Train(a) => train(&g, a),
        Command::Denoise(a) => run_denoise(&g, a),
        Command::Eval(a) => eval(&g, a),
        Command::Audit(a) => audit(&g, a),
        Command::Sweep(a) => sweep(&g, a),
    }
}

fn corpus_source(args: &CorpusArgs, channels: usize, seed: u64) -> Option<CorpusSource> {
    match (&args.data, args.synthetic) {
        (Some(path), _) => Some(CorpusSource::Dir { path: path.clone() }),
        (None, Some(count)) => Some(CorpusSource::synthetic(count, channels, args.size, seed)),
        (None, None) => None,
    }
}

fn image_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn gen_noise(g: &Globals, a: GenNoiseArgs) -> Outcome {
    let base: Option<GenNoiseConfig> = g.base()?;
    let mut cfg = match base {
        Some(c) => c,
        None => GenNoiseConfig {
            input: required(a.input.clone(), "--in")?,
            out: g.out(None),
            noise: NoiseSpec::default(),
        },
    };
    cfg.out = g.out(Some(&cfg.out));
    if let Some(p) = a.input {
        cfg.input = p;
    }
    if let Some(f) = a.family {
        cfg.noise.family = match f {
            Family::Gaussian => "gaussian",
            Family::Speckle => "speckle",
            Family::Poisson => "poisson",
            Family::Mixture => "mixture",
            Family::SpeckleVariant => "speckle_variant",
        }
        .into();
    }
    if let Some(s) = a.sigma {
        cfg.noise.sigma = s;
    }
    if let Some(al) = a.alpha {
        cfg.noise.alpha = al;
    }
    if let Some(b) = a.base {
        cfg.noise.base = match b {
            Base::Gaussian => BaseDist::Gaussian,
            Base::Laplace => BaseDist::Laplace,
        };
    }
    if let Some(v) = a.variant {
        cfg.noise.variant = match v {
            Variant::Sincos => VariantKind::Sincos,
            Variant::Peaks => VariantKind::Peaks,
            Variant::GaussKernels => VariantKind::GaussKernels,
        };
    }
    if let Some(s) = g.seed {
        cfg.noise.seed = s;
    }
    cfg.noise.validate()?;
    config::echo("gen-noise", &cfg.out, &cfg)?;

    let images_dir = cfg.out.join("noisy");
    std::fs::create_dir_all(&images_dir).map_err(eqnet_core::Error::from)?;
    let mut manifest = NoiseManifest::default();
    for (i, path) in list_images(&cfg.input)?.iter().enumerate() {
        let clean = load_image(path)?;
        let spec = NoiseSpec {
            seed: cfg.noise.seed.wrapping_add(i as u64),
            ..cfg.noise.clone()
        };
        let noisy = apply_noise(&clean, &spec)?;
        let name = format!("{}.png", image_stem(path));
        save_image(&noisy.image, images_dir.join(&name))?;
        manifest.entries.push(ManifestEntry {
            input: path.display().to_string(),
            output: format!("noisy/{name}"),
            clipped_fraction: noisy.clipped_fraction,
            spec,
        });
    }
    manifest.save(cfg.out.join("manifest.toml"))?;
    log::info!("wrote {} noisy images to {}", manifest.entries.len(), images_dir.display());
    Ok(())
}

fn preset(p: Preset) -> NetworkSpec {
    match p {
        Preset::Sevnet => NetworkSpec::sevnet(),
        Preset::Baseline => NetworkSpec::baseline(),
        Preset::LayernormGelu => NetworkSpec::layernorm_gelu(),
    }
}

fn train(g: &Globals, a: TrainArgs) -> Outcome {
    let base: Option<TrainRunConfig> = g.base()?;
    let mut cfg = match base {
        Some(c) => c,
        None => {
            let spec = match (&a.spec, a.preset) {
                (Some(path), _) => NetworkSpec::load(path)?,
                (None, p) => preset(p.unwrap_or(Preset::Sevnet)),
            };
            let channels = a.in_channels.unwrap_or(spec.in_channels);
            TrainRunConfig {
                out: g.out(None),
                corpus: required(corpus_source(&a.corpus, channels, 0), "--data or --synthetic")?,
                spec,
                train: TrainConfig::default(),
            }
        }
    };
    cfg.out = g.out(Some(&cfg.out));
    let seed = g.seed;
    if let Some(src) = corpus_source(&a.corpus, a.in_channels.unwrap_or(cfg.spec.in_channels), seed.unwrap_or(0)) {
        cfg.corpus = src;
    }
    let s = &mut cfg.spec;
    s.in_channels = a.in_channels.unwrap_or(s.in_channels);
    s.base_channels = a.base_channels.unwrap_or(s.base_channels);
    s.depth = a.depth.unwrap_or(s.depth);
    s.blocks_per_stage = a.blocks.unwrap_or(s.blocks_per_stage);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.steps_per_epoch = a.steps_per_epoch.unwrap_or(t.steps_per_epoch);
    t.patch_size = a.patch.unwrap_or(t.patch_size);
    t.batch_size = a.batch.unwrap_or(t.batch_size);
    t.lr = a.lr.unwrap_or(t.lr);
    if let Some(seed) = seed {
        cfg.spec.seed = seed;
        cfg.train.seed = seed;
        if let CorpusSource::Synthetic { seed: s, .. } = &mut cfg.corpus {
            *s = seed;
        }
    }
    cfg.spec.validate()?;
    cfg.train.validate(&cfg.spec)?;
    config::echo("train", &cfg.out, &cfg)?;

    let corpus = cfg.corpus.load()?;
    let mut trainer = Trainer::new(&cfg.spec, &cfg.train)?;
    trainer.run_to_end(&corpus)?;
    let io = |e: std::io::Error| Failure::Data(e.into());
    std::fs::write(cfg.out.join("losses.csv"), trainer.loss_csv()).map_err(io)?;
    trainer.save_state(cfg.out.join("train_state.bin"))?;
    trainer.net().save(cfg.out.join("model.eqnet"))?;
    match trainer.diverged_at() {
        Some(step) => log::warn!("training diverged at step {step}; checkpoint holds the last finite weights"),
        None => log::info!(
            "trained {} steps, final loss {:.6}",
            trainer.steps_done(),
            trainer.losses().last().copied().unwrap_or(f64::NAN)
        ),
    }
    Ok(())
}

fn run_denoise(g: &Globals, a: DenoiseArgs) -> Outcome {
    let base: Option<DenoiseConfig> = g.base()?;
    let mut cfg = match base {
        Some(c) => c,
        None => DenoiseConfig {
            ckpt: required(a.ckpt.clone(), "--ckpt")?,
            input: required(a.input.clone(), "--in")?,
            out: g.out(None),
        },
    };
    cfg.out = g.out(Some(&cfg.out));
    cfg.ckpt = a.ckpt.unwrap_or(cfg.ckpt);
    cfg.input = a.input.unwrap_or(cfg.input);
    config::echo("denoise", &cfg.out, &cfg)?;

    let net = Network::load(&cfg.ckpt)?;
    let dir = cfg.out.join("denoised");
    std::fs::create_dir_all(&dir).map_err(eqnet_core::Error::from)?;
    let paths = list_images(&cfg.input)?;
    for path in &paths {
        let restored = denoise(&net, &load_image(path)?)?;
        save_image(&restored, dir.join(format!("{}.png", image_stem(path))))?;
    }
    log::info!("denoised {} images into {}", paths.len(), dir.display());
    Ok(())
}

fn eval(g: &Globals, a: EvalArgs) -> Outcome {
    let base: Option<EvalConfig> = g.base()?;
    let mut cfg = match base {
        Some(c) => c,
        None => EvalConfig {
            ckpt: required(a.ckpt.clone(), "--ckpt")?,
            out: g.out(None),
            corpus: required(corpus_source(&a.corpus, 3, 0), "--data or --synthetic")?,
            grid: EvalGrid::standard(0),
        },
    };
    cfg.out = g.out(Some(&cfg.out));
    cfg.ckpt = a.ckpt.unwrap_or(cfg.ckpt);
    let net = Network::load(&cfg.ckpt)?;
    let channels = net.spec().in_channels;
    if let Some(src) = corpus_source(&a.corpus, channels, g.seed.unwrap_or(0)) {
        cfg.corpus = src;
    }
    if let Some(path) = &a.grid {
        cfg.grid = EvalGrid::load(path)?;
    }
    if let Some(seed) = g.seed {
        if a.grid.is_none() {
            cfg.grid = EvalGrid::standard(seed);
        }
    }
    config::echo("eval", &cfg.out, &cfg)?;

    let report = evaluate(&net, &cfg.grid, &cfg.corpus.load()?)?;
    print!("{}", report.table());
    let file = std::fs::File::create(cfg.out.join("metrics.csv")).map_err(eqnet_core::Error::from)?;
    report.write_csv(file)?;
    Ok(())
}

fn audit(g: &Globals, a: AuditArgs) -> Outcome {
    let base: Option<AuditConfig> = g.base()?;
    let mut cfg = match base {
        Some(c) => c,
        None => AuditConfig {
            ckpt: required(a.ckpt.clone(), "--ckpt")?,
            out: g.out(None),
            probes: CorpusSource::synthetic(3, 0, 32, 0),
            noise_seed: 0,
        },
    };
    cfg.out = g.out(Some(&cfg.out));
    cfg.ckpt = a.ckpt.unwrap_or(cfg.ckpt);
    let net = Network::load(&cfg.ckpt)?;
    if let Some(path) = a.data {
        cfg.probes = CorpusSource::Dir { path };
    }
    if let CorpusSource::Synthetic {
        channels,
        height,
        width,
        seed,
        ..
    } = &mut cfg.probes
    {
        *channels = net.spec().in_channels;
        let f = net.factor();
        *height = (*height).div_ceil(f) * f;
        *width = (*width).div_ceil(f) * f;
        *seed = g.seed.unwrap_or(*seed);
    }
    if let Some(seed) = g.seed {
        cfg.noise_seed = seed;
    }
    config::echo("audit", &cfg.out, &cfg)?;

    let probes = cfg.probes.load()?;
    let report = audit_network(&net, &probes.images, cfg.noise_seed)?;
    std::fs::write(cfg.out.join("audit.toml"), report.to_toml()).map_err(eqnet_core::Error::from)?;
    let file = std::fs::File::create(cfg.out.join("audit.csv")).map_err(eqnet_core::Error::from)?;
    report.write_csv(file)?;
    println!("{}", report.summary);
    for row in &report.decoupling {
        println!(
            "decoupling {:<24} residual {:.3e} {}",
            row.lambda,
            row.residual,
            if row.asserted { "(asserted)" } else { "(measured)" }
        );
    }
    if report.certified && !(report.all_order1 && report.decoupling_passed()) {
        return Err(Failure::Assertion(
            "certified network failed the first-order audit".into(),
        ));
    }
    Ok(())
}

fn sweep(g: &Globals, a: SweepArgs) -> Outcome {
    let base: Option<SweepConfig> = g.base()?;
    let defaults = DirectionalConfig::default();
    let mut cfg = match base {
        Some(c) => c,
        None => {
            let kind = match (a.table4, a.directional) {
                (true, _) => SweepKind::Table4,
                (_, true) => SweepKind::Directional,
                _ => return Err(Failure::Usage("sweep needs --table4 or --directional".into())),
            };
            let base = NetworkSpec {
                in_channels: defaults.in_channels,
                base_channels: defaults.base_channels,
                depth: defaults.depth,
                blocks_per_stage: defaults.blocks_per_stage,
                ..NetworkSpec::sevnet()
            };
            let size = defaults.image_size;
            SweepConfig {
                kind,
                out: g.out(None),
                train_corpus: CorpusSource::synthetic(defaults.train_images, base.in_channels, size, 0),
                eval_corpus: CorpusSource::synthetic(defaults.eval_images, base.in_channels, size, 0x5eed_0000),
                base,
                train: defaults.train.clone(),
                grid: EvalGrid::standard(0),
                seeds: defaults.seeds.clone(),
            }
        }
    };
    cfg.out = g.out(Some(&cfg.out));
    if let Some(src) = corpus_source(&a.corpus, cfg.base.in_channels, 0) {
        cfg.train_corpus = src;
    }
    if let Some(path) = a.eval_data {
        cfg.eval_corpus = CorpusSource::Dir { path };
    }
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.train.steps_per_epoch = a.steps_per_epoch.unwrap_or(cfg.train.steps_per_epoch);
    if let Some(seed) = g.seed {
        cfg.base.seed = seed;
        cfg.train.seed = seed;
        cfg.grid = EvalGrid::standard(seed);
        cfg.seeds = vec![seed, seed + 1, seed + 2];
    }
    config::echo("sweep", &cfg.out, &cfg)?;

    match cfg.kind {
        SweepKind::Table4 => {
            let variants = ablation_variants(&cfg.base);
            let table = ablation_sweep(
                &variants,
                &cfg.train,
                &cfg.grid,
                &cfg.train_corpus.load()?,
                &cfg.eval_corpus.load()?,
            )?;
            print!("{}", table.table());
            std::fs::write(cfg.out.join("sweep.toml"), table.to_toml()).map_err(eqnet_core::Error::from)?;
            Ok(())
        }
        SweepKind::Directional => {
            let dcfg = DirectionalConfig {
                seeds: cfg.seeds.clone(),
                in_channels: cfg.base.in_channels,
                base_channels: cfg.base.base_channels,
                depth: cfg.base.depth,
                blocks_per_stage: cfg.base.blocks_per_stage,
                train: cfg.train.clone(),
                ..defaults
            };
            let report = directional_experiment(&dcfg)?;
            for o in &report.outcomes {
                println!(
                    "seed {:>3}: baseline gap {:>7.3} dB, layernorm+gelu gap {:>7.3} dB",
                    o.seed, o.baseline_gap, o.variant_gap
                );
            }
            let text = toml::to_string(&report).map_err(|e| Failure::Usage(e.to_string()))?;
            std::fs::write(cfg.out.join("directional.toml"), text).map_err(eqnet_core::Error::from)?;
            if !report.passed() {
                return Err(Failure::Assertion(format!(
                    "baseline had the smaller OOD gap in {}/{} seeds, needed {}",
                    report.wins,
                    report.outcomes.len(),
                    report.required
                )));
            }
            Ok(())
        }
    }
}
