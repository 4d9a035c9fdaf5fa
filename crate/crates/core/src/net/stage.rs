use std::collections::BTreeMap;

use super::spec::NetworkSpec;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape};

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean normal with std `gain / sqrt(fan_in)`.
    Kaiming { fan_in: usize, gain: f64 },
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamDecl {
    pub fn conv(name: &str, cout: usize, cin: usize, k: usize, gain: f64) -> Self {
        Self {
            name: name.to_string(),
            shape: Shape::new(cout, cin, k, k),
            init: Init::Kaiming {
                fan_in: cin * k * k,
                gain,
            },
        }
    }

    pub fn channel_vector(name: &str, c: usize, init: Init) -> Self {
        Self {
            name: name.to_string(),
            shape: Shape::new(1, c, 1, 1),
            init,
        }
    }
}

pub fn count_parameters(decls: &[ParamDecl]) -> usize {
    decls.iter().map(|d| d.shape.numel()).sum()
}

/// One interchangeable piece of a network.
///
/// A stage declares its parameters and records its forward computation on a
/// tape, receiving its parameters as tape variables in declaration order.
pub trait Stage<T: Real>: Send + Sync {
    /// Registry key this stage was built from.
    fn name(&self) -> &str;

    fn params(&self) -> Vec<ParamDecl>;

    /// True when the stage is first-order homogeneous for every parameter value.
    fn certified(&self) -> bool;

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }

    fn record(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var>;

    fn param_count(&self) -> usize {
        count_parameters(&self.params())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Norm,
    Activation,
    Block,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Norm => "normalization stage",
            Role::Activation => "activation stage",
            Role::Block => "block",
        }
    }
}

/// Construction context handed to stage constructors.
pub struct StageCtx<'a> {
    pub channels: usize,
    pub spec: &'a NetworkSpec,
}

pub type StageCtor<T> = fn(&StageCtx<'_>, &StageRegistry<T>) -> Result<Box<dyn Stage<T>>>;

/// Name-keyed constructors for normalization stages, activations and blocks.
pub struct StageRegistry<T: Real> {
    ctors: BTreeMap<(Role, String), StageCtor<T>>,
}

impl<T: Real> Default for StageRegistry<T> {
    fn default() -> Self {
        Self::builtin()
    }
}

impl<T: Real> StageRegistry<T> {
    pub fn empty() -> Self {
        Self {
            ctors: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        super::stages::register_builtin(&mut reg);
        reg
    }

    pub fn register(&mut self, role: Role, name: impl Into<String>, ctor: StageCtor<T>) {
        self.ctors.insert((role, name.into()), ctor);
    }

    pub fn names(&self, role: Role) -> Vec<&str> {
        self.ctors
            .keys()
            .filter(|(r, _)| *r == role)
            .map(|(_, n)| n.as_str())
            .collect()
    }

    pub fn build(&self, role: Role, name: &str, ctx: &StageCtx<'_>) -> Result<Box<dyn Stage<T>>> {
        let ctor = self
            .ctors
            .get(&(role, name.to_string()))
            .ok_or_else(|| Error::Unknown {
                kind: role.as_str(),
                name: name.to_string(),
            })?;
        ctor(ctx, self)
    }
}
