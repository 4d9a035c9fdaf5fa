//! Heterogeneous Normalization Module: Constant Scaling on the first half of
//! the channels, NSM on the second half, re-concatenated.

use super::{cs, evaluate, nsm, CsLayer, NsmLayer};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct HnmLayer<T: Real = f32> {
    pub cs: CsLayer<T>,
    pub nsm: NsmLayer<T>,
}

impl<T: Real> HnmLayer<T> {
    pub fn new(cs: CsLayer<T>, nsm: NsmLayer<T>) -> Result<Self> {
        if cs.channels() == 0 || cs.channels() != nsm.channels() {
            return Err(Error::invalid(format!(
                "HNM branches must split channels evenly, got CS {} / NSM {}",
                cs.channels(),
                nsm.channels()
            )));
        }
        Ok(Self { cs, nsm })
    }

    pub fn channels(&self) -> usize {
        self.cs.channels() + self.nsm.channels()
    }
}

pub fn hnm<T: Real>(input: &Tensor<T>, layer: &HnmLayer<T>) -> Result<Tensor<T>> {
    let c = input.shape().c;
    if c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    super::expect_channels("hnm", c, layer.channels())?;
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let eta = tape.leaf(layer.cs.eta.clone());
        let proj = tape.leaf(layer.nsm.projection.clone());
        record(tape, x, eta, proj, &layer.nsm)
    })
}

pub fn record<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    eta: Var,
    projection: Var,
    nsm_cfg: &NsmLayer<T>,
) -> Result<Var> {
    let (a, b) = tape.split(x)?;
    let a = cs::record(tape, a, eta)?;
    let b = nsm::record(tape, b, projection, nsm_cfg.source, nsm_cfg.tau)?;
    tape.concat(a, b)
}
