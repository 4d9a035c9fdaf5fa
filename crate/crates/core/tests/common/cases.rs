//! Module tables shared by the integration tests and the acceptance suite.

use eqnet_core::audit::Verdict;
use eqnet_core::autodiff::{Tape, Var};
use eqnet_core::modules::{
    self, constant_scaling, hnm, igm, nsm, residual_block, sevb, token_normalize, AffineSource, CsLayer,
    GateScaling, HnmLayer, IgmLayer, NsmLayer, SevbParams, DEGENERATE_TAU,
};
use eqnet_core::net::{Network, NetworkSpec};
use eqnet_core::tensor::{conv2d, downsample, gelu, relu, upsample, ConvKernel};
use eqnet_core::{Real, Result, Shape, Tensor};
use rand::Rng;

use super::{conv_weight, rng};

pub type Map<T> = Box<dyn Fn(&Tensor<T>) -> Result<Tensor<T>>>;

pub struct Case<T: Real> {
    pub name: &'static str,
    pub input: Shape,
    pub f: Map<T>,
}

fn case<T: Real>(name: &'static str, input: [usize; 4], f: impl Fn(&Tensor<T>) -> Result<Tensor<T>> + 'static) -> Case<T> {
    Case {
        name,
        input: input.into(),
        f: Box::new(f),
    }
}

/// Randomly parameterised layers in precision `T`, all built from one seed.
pub struct Layers<T: Real> {
    pub cs: CsLayer<T>,
    pub nsm: NsmLayer<T>,
    pub hnm: HnmLayer<T>,
    pub igm: IgmLayer<T>,
    pub conv1: ConvKernel<T>,
    pub conv2: ConvKernel<T>,
    pub sevb: SevbParams<T>,
    pub down: ConvKernel<T>,
    pub up: ConvKernel<T>,
}

pub const C: usize = 8;

impl<T: Real> Layers<T> {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let gains: Vec<T> = (0..C).map(|_| T::of(r.random_range(0.5..2.0))).collect();
        let cast = |t: Tensor<f64>| t.cast::<T>();
        let nsm_proj = cast(conv_weight(2 * C, C, 1, &mut r));
        let half_gains: Vec<T> = gains[..C / 2].to_vec();
        let hnm_layer = HnmLayer::new(
            CsLayer::from_gains(&half_gains),
            NsmLayer::new(cast(conv_weight(C, C / 2, 1, &mut r))).unwrap(),
        )
        .unwrap();
        let sevb_params = SevbParams {
            conv: cast(conv_weight(C, C, 3, &mut r)),
            hnm: HnmLayer::new(
                CsLayer::from_gains(&half_gains),
                NsmLayer::new(cast(conv_weight(C, C / 2, 1, &mut r))).unwrap(),
            )
            .unwrap(),
            igm: IgmLayer::new(cast(conv_weight(C / 2, C / 2, 3, &mut r))).unwrap(),
            restore: cast(conv_weight(C, C / 2, 1, &mut r)),
        };
        Self {
            cs: CsLayer::from_gains(&gains),
            nsm: NsmLayer::new(nsm_proj).unwrap(),
            hnm: hnm_layer,
            igm: IgmLayer::new(cast(conv_weight(C / 2, C / 2, 3, &mut r))).unwrap(),
            conv1: ConvKernel::new(cast(conv_weight(C, C, 3, &mut r))),
            conv2: ConvKernel::new(cast(conv_weight(C, C, 3, &mut r))),
            sevb: sevb_params,
            down: ConvKernel::new(cast(conv_weight(2 * C, C, 3, &mut r))),
            up: ConvKernel::new(cast(conv_weight(2 * C, C, 1, &mut r))),
        }
    }
}

pub fn small_spec(base: NetworkSpec, in_channels: usize) -> NetworkSpec {
    NetworkSpec {
        in_channels,
        base_channels: 8,
        depth: 2,
        blocks_per_stage: 1,
        ..base
    }
}

/// Network with every weight redrawn at unit-ish scale, so branches are not
/// dwarfed by the identity paths.
pub fn perturbed_net<T: Real>(spec: &NetworkSpec, seed: u64) -> Network<T> {
    let mut net = Network::<T>::build(spec).unwrap();
    let mut r = rng(seed);
    for p in net.params_mut() {
        let s = p.shape();
        let fan_in = (s.c * s.h * s.w).max(1);
        let std = if s.h == 1 && s.w == 1 && s.n == 1 { 0.5 } else { (1.0 / fan_in as f64).sqrt() };
        let noise = Tensor::<f64>::randn(s, std, &mut r).cast::<T>();
        *p = if s.n == 1 && s.h == 1 { p.add(&noise).unwrap() } else { noise };
    }
    net
}

/// Every first-order module of the certified set, plus certified networks.
pub fn equivariance_cases<T: Real>(seed: u64) -> Vec<Case<T>> {
    let l = std::rc::Rc::new(Layers::<T>::new(seed));
    let sh = [1, C, 16, 16];
    let mut out = Vec::new();
    let l1 = l.clone();
    out.push(case("cs", sh, move |x| constant_scaling(x, &l1.cs)));
    let l1 = l.clone();
    out.push(case("nsm", sh, move |x| nsm(x, &l1.nsm)));
    let l1 = l.clone();
    out.push(case("hnm", sh, move |x| hnm(x, &l1.hnm)));
    let l1 = l.clone();
    out.push(case("igm", sh, move |x| igm(x, &l1.igm)));
    let l1 = l.clone();
    out.push(case("residual_block", sh, move |x| residual_block(x, &l1.conv1, &l1.conv2)));
    let l1 = l.clone();
    out.push(case("sevb", sh, move |x| sevb(x, &l1.sevb)));
    let l1 = l.clone();
    out.push(case("downsample", sh, move |x| downsample(x, &l1.down)));
    let l1 = l;
    out.push(case("upsample", sh, move |x| upsample(x, &l1.up)));
    for (name, spec) in [("network(sevnet)", NetworkSpec::sevnet()), ("network(baseline)", NetworkSpec::baseline())] {
        let net = perturbed_net::<T>(&small_spec(spec, 3), seed);
        assert!(net.certified());
        out.push(case(name, [1, 3, 16, 16], move |x| net.core(x)));
    }
    out
}

pub struct AuditCase {
    pub name: &'static str,
    pub expected: Verdict,
    pub input: Shape,
    pub f: Map<f64>,
}

pub fn audit_cases(seed: u64) -> Vec<AuditCase> {
    let l = std::rc::Rc::new(Layers::<f64>::new(seed));
    let sh: Shape = [1, C, 12, 12].into();
    let mk = |name, expected, f: Map<f64>| AuditCase {
        name,
        expected,
        input: sh,
        f,
    };
    let (a, b, c, d, e) = (l.clone(), l.clone(), l.clone(), l.clone(), l.clone());
    vec![
        mk("relu", Verdict::Order1, Box::new(|x| Ok(relu(x)))),
        mk("conv", Verdict::Order1, Box::new(move |x| conv2d(x, &a.conv1, 1, 1))),
        mk("cs", Verdict::Order1, Box::new(move |x| constant_scaling(x, &b.cs))),
        mk("nsm", Verdict::Order1, Box::new(move |x| nsm(x, &c.nsm))),
        mk("igm", Verdict::Order1, Box::new(move |x| igm(x, &d.igm))),
        mk(
            "layer_norm (no affine)",
            Verdict::Order0,
            Box::new(|x| Ok(token_normalize(x, DEGENERATE_TAU))),
        ),
        mk("square", Verdict::Order2, Box::new(|x| Ok(x.map(|v| v * v)))),
        mk(
            "gating without scaling",
            Verdict::Order2,
            Box::new(move |x| igm(x, &e.igm.clone().with_scaling(GateScaling::None))),
        ),
        mk("gelu", Verdict::NonHomogeneous, Box::new(|x| Ok(gelu(x)))),
    ]
}

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub leaves: Vec<Tensor<f64>>,
    pub build: Build,
    /// Contains a non-differentiable point (ReLU, absolute value).
    pub kinked: bool,
}

fn grad(name: &'static str, leaves: Vec<Tensor<f64>>, kinked: bool, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> GradCase {
    GradCase {
        name,
        leaves,
        build: Box::new(build),
        kinked,
    }
}

/// Every differentiable operation and module, with inputs and parameters as leaves.
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let c = 6;
    let mut x = || Tensor::<f64>::randn([2, c, 5, 6], 1.0, &mut r);
    let (x0, x1, x2) = (x(), x(), x());
    let mut r = rng(seed + 1);
    let mut w = |cout: usize, cin: usize, k: usize| conv_weight(cout, cin, k, &mut r);
    let (w3, w3b, w1) = (w(c, c, 3), w(c, c, 3), w(2 * c, c, 1));
    let (wh, wh1) = (w(c / 2, c / 2, 3), w(c, c / 2, 1));
    let (wd, wr) = (w(2 * c, c, 3), w(c, c / 2, 1));
    let mut r = rng(seed + 2);
    let gains = Tensor::<f64>::uniform([1, c, 1, 1], 0.5, 2.0, &mut r);
    let half_gains = Tensor::<f64>::uniform([1, c / 2, 1, 1], 0.5, 2.0, &mut r);
    let ln_w = Tensor::<f64>::uniform([1, c, 1, 1], 0.5, 1.5, &mut r);
    let ln_b = Tensor::<f64>::uniform([1, c, 1, 1], -0.5, 0.5, &mut r);
    let target = Tensor::<f64>::randn(x0.shape(), 1.0, &mut r);
    let even = Tensor::<f64>::randn([2, c, 6, 6], 1.0, &mut r);
    let (t1, t2) = (target.clone(), target);

    let mut cases = vec![
        grad("conv2d", vec![x0.clone(), w3.clone()], false, |t, v| t.conv2d(v[0], v[1], 1, 1)),
        grad("conv2d stride 2", vec![even.clone(), wd.clone()], false, |t, v| t.conv2d(v[0], v[1], 2, 1)),
        grad("relu", vec![x0.clone()], true, |t, v| Ok(t.relu(v[0]))),
        grad("gelu", vec![x0.clone()], false, |t, v| Ok(t.gelu(v[0]))),
        grad("elu", vec![x0.clone()], true, |t, v| Ok(t.elu(v[0]))),
        grad("add", vec![x0.clone(), x1.clone()], false, |t, v| t.add(v[0], v[1])),
        grad("mul", vec![x0.clone(), x1.clone()], false, |t, v| t.mul(v[0], v[1])),
        grad("scale", vec![x0.clone()], false, |t, v| Ok(t.scale(v[0], 2.5))),
        grad("add_scalar", vec![x0.clone()], false, |t, v| Ok(t.add_scalar(v[0], 0.3))),
        grad("square", vec![x0.clone()], false, |t, v| Ok(t.square(v[0]))),
        grad("split/concat", vec![x0.clone()], false, |t, v| {
            let (a, b) = t.split(v[0])?;
            let b2 = t.scale(b, 3.0);
            t.concat(b2, a)
        }),
        grad("pixel_shuffle", vec![Tensor::randn([1, 8, 3, 4], 1.0, &mut rng(seed + 3))], false, |t, v| {
            t.pixel_shuffle(v[0], 2)
        }),
        grad("token_norm", vec![x0.clone()], false, |t, v| Ok(modules::token_norm::record(t, v[0], DEGENERATE_TAU))),
        grad("cs", vec![x0.clone(), gains.clone()], false, |t, v| modules::cs::record(t, v[0], v[1])),
        grad("nsm (prenorm)", vec![x0.clone(), w1.clone()], false, |t, v| {
            modules::nsm::record(t, v[0], v[1], AffineSource::Prenorm, DEGENERATE_TAU)
        }),
        grad("nsm (postnorm)", vec![x0.clone(), w1.clone()], false, |t, v| {
            modules::nsm::record(t, v[0], v[1], AffineSource::Postnorm, DEGENERATE_TAU)
        }),
        grad("hnm", vec![x0.clone(), half_gains.clone(), wh1.clone()], false, |t, v| {
            let layer = NsmLayer::new(Tensor::<f64>::zeros([6, 3, 1, 1])).unwrap();
            modules::hnm::record(t, v[0], v[1], v[2], &layer)
        }),
        grad("layer_norm", vec![x0.clone(), ln_w, ln_b], false, |t, v| {
            modules::layer_norm::record(t, v[0], v[1], v[2], DEGENERATE_TAU)
        }),
        grad("residual_block", vec![x0.clone(), w3.clone(), w3b.clone()], true, |t, v| {
            modules::residual::record(t, v[0], v[1], v[2])
        }),
        grad("l1_loss", vec![x0.clone()], true, move |t, v| t.l1_loss(v[0], &t1)),
        grad("l2_loss", vec![x0.clone()], false, move |t, v| t.l2_loss(v[0], &t2)),
        grad(
            "sevb",
            vec![x2.clone(), w3.clone(), half_gains, wh1, wh.clone(), wr],
            false,
            |t, v| {
                let layer = NsmLayer::new(Tensor::<f64>::zeros([6, 3, 1, 1])).unwrap();
                let h = t.conv2d(v[0], v[1], 1, 1)?;
                let h = modules::hnm::record(t, h, v[2], v[3], &layer)?;
                let h = modules::igm::record(t, h, v[4], GateScaling::Dual, DEGENERATE_TAU)?;
                let h = t.conv2d(h, v[5], 1, 0)?;
                t.add(v[0], h)
            },
        ),
    ];
    for (name, scaling) in [
        ("igm (dual)", GateScaling::Dual),
        ("igm (single)", GateScaling::Single),
        ("igm (none)", GateScaling::None),
    ] {
        cases.push(grad(name, vec![x1.clone(), wh.clone()], false, move |t, v| {
            modules::igm::record(t, v[0], v[1], scaling, DEGENERATE_TAU)
        }));
    }
    for (name, spec, kinked) in [
        ("network (sevnet)", NetworkSpec::sevnet(), false),
        ("network (baseline)", NetworkSpec::baseline(), true),
        ("network (layernorm+gelu)", NetworkSpec::layernorm_gelu(), false),
    ] {
        let spec = NetworkSpec {
            depth: 1,
            ..small_spec(spec, 2)
        };
        let net = perturbed_net::<f64>(&spec, seed);
        let mut leaves = vec![Tensor::<f64>::randn([1, 2, 6, 6], 1.0, &mut rng(seed + 4))];
        leaves.extend(net.params().iter().cloned());
        cases.push(grad(name, leaves, kinked, move |t, v| Ok(net.record_core(t, v[0], &v[1..])?.output)));
    }
    cases
}
