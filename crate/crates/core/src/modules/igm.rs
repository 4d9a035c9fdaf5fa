//! Interactive Gating Module.
//!
//! The input is split into `F1 | F2`; `Fv = conv3x3(F1)` and `Fg = F2`. The
//! gated product is divided, per token, by `sqrt(var(Fv) + var(Fg))`, which
//! turns the second-order product back into a first-order map.

use serde::{Deserialize, Serialize};

use super::{evaluate, DEGENERATE_TAU};
use crate::autodiff::{Adjoint, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{token_stats, Real, Tensor};

/// Denominator of the gated product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateScaling {
    /// `sqrt(var(Fv) + var(Fg))`
    #[default]
    Dual,
    /// `sqrt(var(Fg))`
    Single,
    /// No denominator: the plain product, homogeneous of order two.
    None,
}

impl GateScaling {
    pub fn as_str(self) -> &'static str {
        match self {
            GateScaling::Dual => "dual",
            GateScaling::Single => "single",
            GateScaling::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgmLayer<T: Real = f32> {
    /// `(c/2, c/2, 3, 3)`, applied to the first channel half.
    pub value_projection: Tensor<T>,
    pub scaling: GateScaling,
    pub tau: f64,
}

impl<T: Real> IgmLayer<T> {
    pub fn new(value_projection: Tensor<T>) -> Result<Self> {
        let s = value_projection.shape();
        if s.n != s.c || s.h != s.w || s.h % 2 == 0 {
            return Err(Error::invalid(format!(
                "IGM value projection must be square with an odd kernel, got {s}"
            )));
        }
        Ok(Self {
            value_projection,
            scaling: GateScaling::Dual,
            tau: DEGENERATE_TAU,
        })
    }

    /// Value projection that passes `F1` through unchanged.
    pub fn identity(half_channels: usize) -> Self {
        let w = Tensor::from_fn([half_channels, half_channels, 3, 3], |o, i, y, x| {
            if o == i && y == 1 && x == 1 {
                T::one()
            } else {
                T::zero()
            }
        });
        Self::new(w).expect("identity kernel is well formed")
    }

    pub fn with_scaling(mut self, scaling: GateScaling) -> Self {
        self.scaling = scaling;
        self
    }
}

pub fn igm<T: Real>(input: &Tensor<T>, layer: &IgmLayer<T>) -> Result<Tensor<T>> {
    evaluate(|tape| {
        let x = tape.leaf(input.clone());
        let w = tape.leaf(layer.value_projection.clone());
        record(tape, x, w, layer.scaling, layer.tau)
    })
}

pub fn record<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    value_projection: Var,
    scaling: GateScaling,
    tau: f64,
) -> Result<Var> {
    let (f1, f2) = tape.split(x)?;
    let pad = tape.shape(value_projection).h / 2;
    let fv = tape.conv2d(f1, value_projection, 1, pad)?;
    record_gate(tape, fv, f2, scaling, tau)
}

/// Gated product of two equally shaped signals with the chosen denominator.
pub fn record_gate<T: Real>(tape: &mut Tape<T>, fv: Var, fg: Var, scaling: GateScaling, tau: f64) -> Result<Var> {
    let (v, g) = (tape.value(fv), tape.value(fg));
    if v.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "gate (value vs gate)",
            left: v.shape(),
            right: g.shape(),
        });
    }
    let s = v.shape();
    let plane = s.plane();
    let vs = token_stats(v);
    let gs = token_stats(g);
    let tau = T::of(tau);
    let inv_scale: Vec<T> = (0..s.n * plane)
        .map(|i| {
            let d = match scaling {
                GateScaling::Dual => vs.variance.data()[i] + gs.variance.data()[i],
                GateScaling::Single => gs.variance.data()[i],
                GateScaling::None => return T::one(),
            };
            if d < tau {
                T::zero()
            } else {
                T::one() / d.sqrt()
            }
        })
        .collect();
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for p in 0..plane {
                let i = base + p;
                y.data_mut()[i] = v.data()[i] * g.data()[i] * inv_scale[n * plane + p];
            }
        }
    }
    Ok(tape.record(
        y,
        &[fv, fg],
        GateAdjoint {
            scaling,
            inv_scale,
            mean_v: vs.mean.into_data(),
            mean_g: gs.mean.into_data(),
        },
    ))
}

struct GateAdjoint<T> {
    scaling: GateScaling,
    inv_scale: Vec<T>,
    mean_v: Vec<T>,
    mean_g: Vec<T>,
}

impl<T: Real> Adjoint<T> for GateAdjoint<T> {
    fn name(&self) -> &'static str {
        "gate"
    }

    // out_i = v_i g_i / s with s^2 = D(v, g). With A = sum_i grad_i v_i g_i:
    //   dv_j = grad_j g_j / s - A / s^3 * (dD/dv_j) / 2
    // and dvar(u)/du_j = 2 (u_j - mean(u)) / c.
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (v, g) = (inputs[0], inputs[1]);
        let s = v.shape();
        let plane = s.plane();
        let inv_c = T::one() / T::of(s.c as f64);
        let mut dv = Tensor::zeros(s);
        let mut dg = Tensor::zeros(s);
        for n in 0..s.n {
            for p in 0..plane {
                let t = n * plane + p;
                let inv = self.inv_scale[t];
                if inv == T::zero() {
                    continue;
                }
                let idx = |c: usize| (n * s.c + c) * plane + p;
                let coupling = match self.scaling {
                    GateScaling::None => T::zero(),
                    _ => {
                        let a: T = (0..s.c)
                            .map(|c| grad.data()[idx(c)] * v.data()[idx(c)] * g.data()[idx(c)])
                            .sum();
                        a * inv * inv * inv * inv_c
                    }
                };
                let (mv, mg) = (self.mean_v[t], self.mean_g[t]);
                for c in 0..s.c {
                    let i = idx(c);
                    let gr = grad.data()[i];
                    let mut dvi = gr * g.data()[i] * inv;
                    let mut dgi = gr * v.data()[i] * inv;
                    match self.scaling {
                        GateScaling::Dual => {
                            dvi -= coupling * (v.data()[i] - mv);
                            dgi -= coupling * (g.data()[i] - mg);
                        }
                        GateScaling::Single => dgi -= coupling * (g.data()[i] - mg),
                        GateScaling::None => {}
                    }
                    dv.data_mut()[i] = dvi;
                    dg.data_mut()[i] = dgi;
                }
            }
        }
        Ok(vec![dv, dg])
    }
}
