//! Scale-equivariant building blocks.
//!
//! Each module exposes a tape-recording function (`record`) used by the
//! network graph and by gradient checks, plus a plain tensor-in/tensor-out
//! function built on the same recording path.

pub mod centralize;
pub mod cs;
pub mod hnm;
pub mod igm;
pub mod layer_norm;
pub mod nsm;
pub mod residual;
pub mod sevb;
pub mod token_norm;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub use centralize::{centralize, decentralize, CENTER};
pub use cs::{constant_scaling, CsLayer};
pub use hnm::{hnm, HnmLayer};
pub use igm::{igm, GateScaling, IgmLayer};
pub use layer_norm::{layer_norm, LayerNormLayer};
pub use nsm::{nsm, AffineSource, NsmLayer};
pub use residual::residual_block;
pub use sevb::{sevb, SevbParams};
pub use token_norm::token_normalize;

/// Per-token variance below this is treated as degenerate.
pub const DEGENERATE_TAU: f64 = 1e-12;

/// Runs `f` on a scratch tape and returns the resulting value.
pub(crate) fn evaluate<T: Real>(f: impl FnOnce(&mut Tape<T>) -> Result<Var>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    Ok(tape.into_value(out))
}

pub(crate) fn expect_channels(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(crate::Error::invalid(format!(
            "{op}: input has {got} channels, layer expects {want}"
        )));
    }
    Ok(())
}
