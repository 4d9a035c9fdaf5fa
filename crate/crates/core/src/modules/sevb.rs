//! Scale-equivariant block:
//! `x + restore(IGM(HNM(conv3x3(x))))`, where `restore` is a bias-free 1x1
//! convolution from `c/2` back to `c` channels.

use super::{evaluate, hnm, igm, HnmLayer, IgmLayer};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SevbParams<T: Real = f32> {
    /// `(c, c, 3, 3)`
    pub conv: Tensor<T>,
    pub hnm: HnmLayer<T>,
    pub igm: IgmLayer<T>,
    /// `(c, c/2, 1, 1)`
    pub restore: Tensor<T>,
}

pub fn sevb<T: Real>(input: &Tensor<T>, params: &SevbParams<T>) -> Result<Tensor<T>> {
    let c = input.shape().c;
    if c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    let cs = params.conv.shape();
    if cs.c != c || cs.n != c || params.hnm.channels() != c || params.restore.shape().n != c {
        return Err(Error::invalid(format!(
            "SEVB parameters do not match {c} input channels"
        )));
    }
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let w = tape.leaf(params.conv.clone());
        let eta = tape.leaf(params.hnm.cs.eta.clone());
        let proj = tape.leaf(params.hnm.nsm.projection.clone());
        let wv = tape.leaf(params.igm.value_projection.clone());
        let wr = tape.leaf(params.restore.clone());
        let h = tape.conv2d(x, w, 1, 1)?;
        let h = hnm::record(tape, h, eta, proj, &params.hnm.nsm)?;
        let h = igm::record(tape, h, wv, params.igm.scaling, params.igm.tau)?;
        let h = tape.conv2d(h, wr, 1, 0)?;
        tape.add(x, h)
    })
}
