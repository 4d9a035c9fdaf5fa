//! Constant Scaling: `CS(F) = F / sqrt(c) * eta`, with per-channel gain `eta`.

use super::{evaluate, expect_channels};
use crate::autodiff::{Adjoint, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CsLayer<T: Real = f32> {
    /// Per-channel gain, shape `(1, c, 1, 1)`.
    pub eta: Tensor<T>,
}

impl<T: Real> CsLayer<T> {
    /// Gains initialised to one.
    pub fn new(channels: usize) -> Self {
        Self {
            eta: Tensor::full([1, channels, 1, 1], T::one()),
        }
    }

    pub fn from_gains(gains: &[T]) -> Self {
        Self {
            eta: Tensor::from_vec([1, gains.len(), 1, 1], gains.to_vec()).expect("length matches"),
        }
    }

    pub fn channels(&self) -> usize {
        self.eta.shape().c
    }
}

pub fn constant_scaling<T: Real>(input: &Tensor<T>, layer: &CsLayer<T>) -> Result<Tensor<T>> {
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let eta = tape.leaf(layer.eta.clone());
        record(tape, x, eta)
    })
}

pub fn record<T: Real>(tape: &mut Tape<T>, x: Var, eta: Var) -> Result<Var> {
    let s = tape.shape(x);
    expect_channels("constant_scaling", s.c, tape.shape(eta).c)?;
    let inv_sqrt_c = T::one() / T::of(s.c as f64).sqrt();
    let gains: Vec<T> = tape.value(eta).data().iter().map(|&e| e * inv_sqrt_c).collect();
    let plane = s.plane();
    let mut y = tape.value(x).clone();
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let g = gains[i % s.c];
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    Ok(tape.record(y, &[x, eta], CsAdjoint))
}

struct CsAdjoint;

impl<T: Real> Adjoint<T> for CsAdjoint {
    fn name(&self) -> &'static str {
        "constant_scaling"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (x, eta) = (inputs[0], inputs[1]);
        let s = x.shape();
        let inv_sqrt_c = T::one() / T::of(s.c as f64).sqrt();
        let plane = s.plane();
        let mut dx = grad.clone();
        let mut deta = Tensor::zeros(eta.shape());
        for (i, (dchunk, xchunk)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
            let c = i % s.c;
            let g = eta.data()[c] * inv_sqrt_c;
            let mut acc = T::zero();
            for (d, &xv) in dchunk.iter_mut().zip(xchunk) {
                acc += *d * xv;
                *d *= g;
            }
            deta.data_mut()[c] += acc * inv_sqrt_c;
        }
        Ok(vec![dx, deta])
    }
}
