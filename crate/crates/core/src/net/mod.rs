//! Declarative U-Net construction, ablation variants and checkpoints.

mod checkpoint;
mod network;
pub mod spec;
pub mod stage;
mod stages;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{check_magic, read_named, read_u32, write_named, write_u32};
pub use network::{count_spec_parameters, CoreTrace, Network, Node, NodeKind};
pub use spec::{ablation_variants, Activation, BlockKind, HnmMode, NetworkSpec, NormOverride};
pub use stage::{count_parameters, Init, ParamDecl, Role, Stage, StageCtor, StageCtx, StageRegistry};
pub use stages::{ConvStage, ResidualStage, UpsampleStage, BRANCH_OUT_GAIN};
