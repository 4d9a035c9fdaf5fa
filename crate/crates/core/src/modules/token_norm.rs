use crate::autodiff::{Adjoint, Tape, Var};
use crate::error::Result;
use crate::tensor::{token_stats, Real, Tensor};

/// Per-token standardisation `(x - mu) / sigma` across channels.
///
/// Tokens whose variance is below `tau` map to zero (with zero gradient)
/// instead of being regularised by an additive epsilon, which would break
/// exact scale behaviour.
pub fn token_normalize<T: Real>(input: &Tensor<T>, tau: f64) -> Tensor<T> {
    normalize_with_inv_std(input, tau).0
}

fn normalize_with_inv_std<T: Real>(input: &Tensor<T>, tau: f64) -> (Tensor<T>, Vec<T>) {
    let s = input.shape();
    let stats = token_stats(input);
    let tau = T::of(tau);
    let inv_std: Vec<T> = stats
        .variance
        .data()
        .iter()
        .map(|&v| if v < tau { T::zero() } else { T::one() / v.sqrt() })
        .collect();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let mu = &stats.mean.data()[n * plane..(n + 1) * plane];
        let inv = &inv_std[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let start = (n * s.c + c) * plane;
            let src = &input.data()[start..start + plane];
            let dst = &mut out.data_mut()[start..start + plane];
            for p in 0..plane {
                dst[p] = (src[p] - mu[p]) * inv[p];
            }
        }
    }
    (out, inv_std)
}

struct TokenNormAdjoint<T> {
    inv_std: Vec<T>,
}

impl<T: Real> Adjoint<T> for TokenNormAdjoint<T> {
    fn name(&self) -> &'static str {
        "token_normalize"
    }

    // dx = (g - mean(g) - n * mean(g * n)) / sigma, per token.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = inputs[0].shape();
        let plane = s.plane();
        let inv_c = T::one() / T::of(s.c as f64);
        let mut dx = Tensor::zeros(s);
        for n in 0..s.n {
            for p in 0..plane {
                let inv = self.inv_std[n * plane + p];
                if inv == T::zero() {
                    continue;
                }
                let (mut mg, mut mgn) = (T::zero(), T::zero());
                for c in 0..s.c {
                    let i = (n * s.c + c) * plane + p;
                    mg += grad.data()[i];
                    mgn += grad.data()[i] * output.data()[i];
                }
                mg *= inv_c;
                mgn *= inv_c;
                for c in 0..s.c {
                    let i = (n * s.c + c) * plane + p;
                    dx.data_mut()[i] = (grad.data()[i] - mg - output.data()[i] * mgn) * inv;
                }
            }
        }
        Ok(vec![dx])
    }
}

pub fn record<T: Real>(tape: &mut Tape<T>, x: Var, tau: f64) -> Var {
    let (y, inv_std) = normalize_with_inv_std(tape.value(x), tau);
    tape.record(y, &[x], TokenNormAdjoint { inv_std })
}
