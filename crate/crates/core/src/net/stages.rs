//! Built-in stages and their registration.

use super::stage::{Init, ParamDecl, Role, Stage, StageCtx, StageRegistry};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::modules::{cs, igm, layer_norm, nsm, AffineSource, GateScaling, DEGENERATE_TAU};
use crate::tensor::Real;

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
/// Gain of the last convolution on every residual branch, so freshly built
/// networks start close to the identity.
pub const BRANCH_OUT_GAIN: f64 = 0.1;

pub(crate) fn register_builtin<T: Real>(reg: &mut StageRegistry<T>) {
    reg.register(Role::Norm, "hnm", |ctx, _| {
        Ok(Box::new(HnmStage::new(ctx.channels, ctx.spec.nsm_affine_source)?))
    });
    reg.register(Role::Norm, "full_cs", |ctx, _| Ok(Box::new(FullCsStage { c: ctx.channels })));
    reg.register(Role::Norm, "cs_only", |ctx, _| {
        Ok(Box::new(CsOnlyStage { c: even(ctx.channels)? }))
    });
    reg.register(Role::Norm, "none", |_, _| Ok(Box::new(IdentityStage("none"))));
    reg.register(Role::Norm, "layer_norm", |ctx, _| {
        Ok(Box::new(LayerNormStage { c: ctx.channels }))
    });

    reg.register(Role::Activation, "igm", |ctx, _| {
        Ok(Box::new(IgmStage {
            c: even(ctx.channels)?,
            scaling: ctx.spec.igm_scaling,
        }))
    });
    reg.register(Role::Activation, "relu", |_, _| Ok(Box::new(Pointwise::Relu)));
    reg.register(Role::Activation, "elu", |_, _| Ok(Box::new(Pointwise::Elu)));
    reg.register(Role::Activation, "gelu", |_, _| Ok(Box::new(Pointwise::Gelu)));
    reg.register(Role::Activation, "identity", |_, _| Ok(Box::new(IdentityStage("identity"))));

    reg.register(Role::Block, "baseline_rb", |ctx, reg| {
        Ok(Box::new(ResidualStage::new("baseline_rb", ctx, reg, 3)?))
    });
    reg.register(Role::Block, "sevb", |ctx, reg| Ok(Box::new(ResidualStage::new("sevb", ctx, reg, 1)?)));
}

fn even(c: usize) -> Result<usize> {
    if c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    Ok(c)
}

fn prefixed(prefix: &str, decls: Vec<ParamDecl>) -> Vec<ParamDecl> {
    decls
        .into_iter()
        .map(|mut d| {
            d.name = format!("{prefix}.{}", d.name);
            d
        })
        .collect()
}

/// Bias-free convolution with "same" padding (or stride-2 downsampling).
pub struct ConvStage {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub gain: f64,
}

impl<T: Real> Stage<T> for ConvStage {
    fn name(&self) -> &str {
        if self.stride == 2 {
            "downsample"
        } else {
            "conv"
        }
    }

    fn params(&self) -> Vec<ParamDecl> {
        vec![ParamDecl::conv("weight", self.cout, self.cin, self.kernel, self.gain)]
    }

    fn certified(&self) -> bool {
        true
    }

    fn out_channels(&self, _: usize) -> usize {
        self.cout
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        if self.stride == 2 {
            let s = tape.shape(x);
            if s.h % 2 != 0 || s.w % 2 != 0 {
                return Err(Error::Indivisible {
                    h: s.h,
                    w: s.w,
                    factor: 2,
                    pad_h: s.h % 2,
                    pad_w: s.w % 2,
                });
            }
        }
        tape.conv2d(x, params[0], self.stride, self.kernel / 2)
    }
}

/// Bias-free 1x1 convolution to `2c` channels followed by depth-to-space.
pub struct UpsampleStage {
    pub c: usize,
}

impl<T: Real> Stage<T> for UpsampleStage {
    fn name(&self) -> &str {
        "upsample"
    }

    fn params(&self) -> Vec<ParamDecl> {
        vec![ParamDecl::conv("weight", 2 * self.c, self.c, 1, 1.0)]
    }

    fn certified(&self) -> bool {
        true
    }

    fn out_channels(&self, c: usize) -> usize {
        c / 2
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let y = tape.conv2d(x, params[0], 1, 0)?;
        tape.pixel_shuffle(y, 2)
    }
}

struct IdentityStage(&'static str);

impl<T: Real> Stage<T> for IdentityStage {
    fn name(&self) -> &str {
        self.0
    }

    fn params(&self) -> Vec<ParamDecl> {
        Vec::new()
    }

    fn certified(&self) -> bool {
        true
    }

    fn record(&self, _: &mut Tape<T>, x: Var, _: &[Var]) -> Result<Var> {
        Ok(x)
    }
}

struct HnmStage {
    c: usize,
    source: AffineSource,
}

impl HnmStage {
    fn new(c: usize, source: AffineSource) -> Result<Self> {
        Ok(Self { c: even(c)?, source })
    }
}

impl<T: Real> Stage<T> for HnmStage {
    fn name(&self) -> &str {
        "hnm"
    }

    fn params(&self) -> Vec<ParamDecl> {
        let h = self.c / 2;
        vec![
            ParamDecl::channel_vector("eta", h, Init::Ones),
            ParamDecl::conv("projection", 2 * h, h, 1, 1.0),
        ]
    }

    fn certified(&self) -> bool {
        self.source == AffineSource::Prenorm
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let (a, b) = tape.split(x)?;
        let a = cs::record(tape, a, params[0])?;
        let b = nsm::record(tape, b, params[1], self.source, DEGENERATE_TAU)?;
        tape.concat(a, b)
    }
}

struct FullCsStage {
    c: usize,
}

impl<T: Real> Stage<T> for FullCsStage {
    fn name(&self) -> &str {
        "full_cs"
    }

    fn params(&self) -> Vec<ParamDecl> {
        vec![ParamDecl::channel_vector("eta", self.c, Init::Ones)]
    }

    fn certified(&self) -> bool {
        true
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        cs::record(tape, x, params[0])
    }
}

struct CsOnlyStage {
    c: usize,
}

impl<T: Real> Stage<T> for CsOnlyStage {
    fn name(&self) -> &str {
        "cs_only"
    }

    fn params(&self) -> Vec<ParamDecl> {
        vec![ParamDecl::channel_vector("eta", self.c / 2, Init::Ones)]
    }

    fn certified(&self) -> bool {
        true
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let (a, b) = tape.split(x)?;
        let a = cs::record(tape, a, params[0])?;
        tape.concat(a, b)
    }
}

struct LayerNormStage {
    c: usize,
}

impl<T: Real> Stage<T> for LayerNormStage {
    fn name(&self) -> &str {
        "layer_norm"
    }

    fn params(&self) -> Vec<ParamDecl> {
        vec![
            ParamDecl::channel_vector("weight", self.c, Init::Ones),
            ParamDecl::channel_vector("bias", self.c, Init::Zeros),
        ]
    }

    fn certified(&self) -> bool {
        false
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        layer_norm::record(tape, x, params[0], params[1], DEGENERATE_TAU)
    }
}

struct IgmStage {
    c: usize,
    scaling: GateScaling,
}

impl<T: Real> Stage<T> for IgmStage {
    fn name(&self) -> &str {
        "igm"
    }

    fn params(&self) -> Vec<ParamDecl> {
        let h = self.c / 2;
        vec![ParamDecl::conv("value_projection", h, h, 3, 1.0)]
    }

    fn certified(&self) -> bool {
        self.scaling != GateScaling::None
    }

    fn out_channels(&self, c: usize) -> usize {
        c / 2
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        igm::record(tape, x, params[0], self.scaling, DEGENERATE_TAU)
    }
}

#[derive(Clone, Copy)]
enum Pointwise {
    Relu,
    Elu,
    Gelu,
}

impl<T: Real> Stage<T> for Pointwise {
    fn name(&self) -> &str {
        match self {
            Pointwise::Relu => "relu",
            Pointwise::Elu => "elu",
            Pointwise::Gelu => "gelu",
        }
    }

    fn params(&self) -> Vec<ParamDecl> {
        Vec::new()
    }

    fn certified(&self) -> bool {
        matches!(self, Pointwise::Relu)
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, _: &[Var]) -> Result<Var> {
        Ok(match self {
            Pointwise::Relu => tape.relu(x),
            Pointwise::Elu => tape.elu(x),
            Pointwise::Gelu => tape.gelu(x),
        })
    }
}

/// `x + out_conv(act(norm(in_conv(x))))`.
///
/// With a 3x3 output convolution this is the Conv-ReLU-Conv baseline block;
/// with a 1x1 output convolution it is the SEV block.
pub struct ResidualStage<T: Real> {
    name: &'static str,
    c: usize,
    out_kernel: usize,
    norm: Box<dyn Stage<T>>,
    act: Box<dyn Stage<T>>,
}

impl<T: Real> ResidualStage<T> {
    fn new(name: &'static str, ctx: &StageCtx<'_>, reg: &StageRegistry<T>, out_kernel: usize) -> Result<Self> {
        let norm = reg.build(Role::Norm, ctx.spec.norm_stage(), ctx)?;
        let act = reg.build(Role::Activation, ctx.spec.activation.as_str(), ctx)?;
        Ok(Self {
            name,
            c: ctx.channels,
            out_kernel,
            norm,
            act,
        })
    }

    pub fn norm(&self) -> &dyn Stage<T> {
        self.norm.as_ref()
    }

    pub fn activation(&self) -> &dyn Stage<T> {
        self.act.as_ref()
    }

    fn branch_channels(&self) -> usize {
        self.act.out_channels(self.norm.out_channels(self.c))
    }

    fn in_gain(&self) -> f64 {
        if self.act.name() == "relu" {
            RELU_GAIN
        } else {
            1.0
        }
    }
}

impl<T: Real> Stage<T> for ResidualStage<T> {
    fn name(&self) -> &str {
        self.name
    }

    fn params(&self) -> Vec<ParamDecl> {
        let mut out = vec![ParamDecl::conv("conv_in.weight", self.c, self.c, 3, self.in_gain())];
        out.extend(prefixed("norm", self.norm.params()));
        out.extend(prefixed("act", self.act.params()));
        out.push(ParamDecl::conv(
            "conv_out.weight",
            self.c,
            self.branch_channels(),
            self.out_kernel,
            BRANCH_OUT_GAIN,
        ));
        out
    }

    fn certified(&self) -> bool {
        self.norm.certified() && self.act.certified()
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let n_norm = self.norm.params().len();
        let n_act = self.act.params().len();
        if params.len() != 2 + n_norm + n_act {
            return Err(Error::Tape(format!(
                "{} expects {} parameters, got {}",
                self.name,
                2 + n_norm + n_act,
                params.len()
            )));
        }
        let h = tape.conv2d(x, params[0], 1, 1)?;
        let h = self.norm.record(tape, h, &params[1..1 + n_norm])?;
        let h = self.act.record(tape, h, &params[1 + n_norm..1 + n_norm + n_act])?;
        let h = tape.conv2d(h, params[1 + n_norm + n_act], 1, self.out_kernel / 2)?;
        tape.add(x, h)
    }
}
