//! Per-token LayerNorm with a learnable channel affine.
//!
//! Scale-independent by construction; it exists for the ablation networks
//! and as a known order-0 probe for the auditor.

use super::{evaluate, expect_channels, token_norm, DEGENERATE_TAU};
use crate::autodiff::{Adjoint, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormLayer<T: Real = f32> {
    /// `(1, c, 1, 1)`, initialised to one.
    pub weight: Tensor<T>,
    /// `(1, c, 1, 1)`, initialised to zero.
    pub bias: Tensor<T>,
    pub tau: f64,
}

impl<T: Real> LayerNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Tensor::full([1, channels, 1, 1], T::one()),
            bias: Tensor::zeros([1, channels, 1, 1]),
            tau: DEGENERATE_TAU,
        }
    }
}

pub fn layer_norm<T: Real>(input: &Tensor<T>, layer: &LayerNormLayer<T>) -> Result<Tensor<T>> {
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let w = tape.leaf(layer.weight.clone());
        let b = tape.leaf(layer.bias.clone());
        record(tape, x, w, b, layer.tau)
    })
}

pub fn record<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var, tau: f64) -> Result<Var> {
    expect_channels("layer_norm", tape.shape(x).c, tape.shape(weight).c)?;
    let n = token_norm::record(tape, x, tau);
    channel_affine(tape, n, weight, bias)
}

/// `y = x * weight[c] + bias[c]`.
fn channel_affine<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let s = tape.shape(x);
    let plane = s.plane();
    let (w, b) = (tape.value(weight).data().to_vec(), tape.value(bias).data().to_vec());
    let mut y = tape.value(x).clone();
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        chunk.iter_mut().for_each(|v| *v = *v * w[c] + b[c]);
    }
    Ok(tape.record(y, &[x, weight, bias], ChannelAffineAdjoint))
}

struct ChannelAffineAdjoint;

impl<T: Real> Adjoint<T> for ChannelAffineAdjoint {
    fn name(&self) -> &'static str {
        "channel_affine"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let s = x.shape();
        let plane = s.plane();
        let mut dx = grad.clone();
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros(w.shape());
        for (i, (dchunk, xchunk)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
            let c = i % s.c;
            let (mut sw, mut sb) = (T::zero(), T::zero());
            for (d, &xv) in dchunk.iter_mut().zip(xchunk) {
                sw += *d * xv;
                sb += *d;
                *d *= w.data()[c];
            }
            dw.data_mut()[c] += sw;
            db.data_mut()[c] += sb;
        }
        Ok(vec![dx, dw, db])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_is_scale_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::uniform([1, 8, 4, 4], -1.0, 1.0, &mut rng);
        let l = LayerNormLayer::new(8);
        let a = layer_norm(&x, &l).unwrap();
        let b = layer_norm(&x.scale(10.0), &l).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_is_applied_per_channel() {
        let x = Tensor::<f64>::from_vec([1, 2, 1, 1], vec![3.0, 1.0]).unwrap();
        let mut l = LayerNormLayer::new(2);
        l.weight = Tensor::from_vec([1, 2, 1, 1], vec![2.0, 3.0]).unwrap();
        l.bias = Tensor::from_vec([1, 2, 1, 1], vec![0.5, -0.5]).unwrap();
        assert_eq!(layer_norm(&x, &l).unwrap().data(), &[2.5, -3.5]);
    }
}
