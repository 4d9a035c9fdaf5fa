//! `Conv-ReLU-Conv` residual block: `x + conv2(relu(conv1(x)))`.

use super::evaluate;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ConvKernel, Real, Tensor};

pub fn residual_block<T: Real>(input: &Tensor<T>, conv1: &ConvKernel<T>, conv2: &ConvKernel<T>) -> Result<Tensor<T>> {
    if !conv1.is_equivariant() || !conv2.is_equivariant() {
        return Err(Error::invalid("residual block convolutions must be bias-free"));
    }
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let w1 = tape.leaf(conv1.weight.clone());
        let w2 = tape.leaf(conv2.weight.clone());
        record(tape, x, w1, w2)
    })
}

pub fn record<T: Real>(tape: &mut Tape<T>, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let branch = record_branch(tape, x, w1, w2, |tape, h| Ok(tape.relu(h)))?;
    tape.add(x, branch)
}

/// `conv2(act(conv1(x)))` with "same" padding; the channel count must be preserved.
pub fn record_branch<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w1: Var,
    w2: Var,
    act: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let c = tape.shape(x).c;
    let (s1, s2) = (tape.shape(w1), tape.shape(w2));
    if s1.c != c || s2.n != c || s1.n != s2.c {
        return Err(Error::invalid(format!(
            "residual block kernels {s1} / {s2} do not preserve {c} channels"
        )));
    }
    let h = tape.conv2d(x, w1, 1, s1.h / 2)?;
    let h = act(tape, h)?;
    tape.conv2d(h, w2, 1, s2.h / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::uniform([2, 4, 5, 5], -1.0, 1.0, &mut rng);
        let k = ConvKernel::new(Tensor::zeros([4, 4, 3, 3]));
        assert_eq!(residual_block(&x, &k, &k).unwrap(), x);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros([1, 4, 3, 3]);
        let k1 = ConvKernel::new(Tensor::zeros([4, 3, 3, 3]));
        let k2 = ConvKernel::new(Tensor::zeros([4, 4, 3, 3]));
        assert!(residual_block(&x, &k1, &k2).is_err());
    }

    #[test]
    fn biased_kernels_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 3, 3]);
        let k = ConvKernel::with_bias(Tensor::zeros([1, 1, 3, 3]), vec![1.0]).unwrap();
        assert!(residual_block(&x, &k, &k).is_err());
    }
}
