//! Reverse-mode gradient tape.
//!
//! Every recorded node owns its forward value. Differentiable nodes carry an
//! [`Adjoint`] that maps the gradient of the node's output to gradients of its
//! inputs; [`Tape::backward`] walks the nodes in reverse recording order.

use crate::error::{Error, Result};
use crate::tensor::{self, ConvKernel, Real, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Hand-derived vector-Jacobian product of one operation.
pub trait Adjoint<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>)
        -> Result<Vec<Tensor<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    adjoint: Option<Box<dyn Adjoint<T>>>,
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            adjoint: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Records an already-computed value produced from `inputs` by `adjoint`'s op.
    pub fn record(&mut self, value: Tensor<T>, inputs: &[Var], adjoint: impl Adjoint<T> + 'static) -> Var {
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            adjoint: Some(Box::new(adjoint)),
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse accumulation from `output`, seeded with `output_grad`.
    pub fn backward(&self, output: Var, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "variable {} is not on this tape ({} nodes)",
                output.0,
                self.nodes.len()
            )));
        }
        if output_grad.shape() != self.nodes[output.0].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward (seed gradient vs output)",
                left: output_grad.shape(),
                right: self.nodes[output.0].value.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(output_grad.clone());
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(adjoint) = &node.adjoint else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let input_grads = adjoint.backward(&inputs, &node.value, &g)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Tape(format!(
                    "{} returned {} gradients for {} inputs",
                    adjoint.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (&i, gi) in node.inputs.iter().zip(input_grads) {
                if gi.shape() != self.nodes[i].value.shape() {
                    return Err(Error::Tape(format!(
                        "{} produced gradient {} for input of shape {}",
                        adjoint.name(),
                        gi.shape(),
                        self.nodes[i].value.shape()
                    )));
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // ---- recorded primitives ----

    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let kernel = ConvKernel::new(self.value(weight).clone());
        let y = tensor::conv2d(self.value(x), &kernel, stride, padding)?;
        Ok(self.record(y, &[x, weight], Conv2dAdjoint { stride, padding }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = tensor::relu(self.value(x));
        self.record(y, &[x], ReluAdjoint)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = tensor::gelu(self.value(x));
        self.record(y, &[x], GeluAdjoint)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let y = tensor::elu(self.value(x));
        self.record(y, &[x], EluAdjoint)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.record(y, &[a, b], AddAdjoint))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.record(y, &[a, b], MulAdjoint))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let y = self.value(x).scale(k);
        self.record(y, &[x], ScaleAdjoint(k))
    }

    pub fn add_scalar(&mut self, x: Var, v: T) -> Var {
        let y = tensor::add_scalar(self.value(x), v);
        self.record(y, &[x], AddScalarAdjoint)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = tensor::slice_channels(self.value(x), start, len)?;
        Ok(self.record(y, &[x], SliceAdjoint { start }))
    }

    pub fn split(&mut self, x: Var) -> Result<(Var, Var)> {
        let c = self.shape(x).c;
        if c % 2 != 0 {
            return Err(Error::OddChannels(c));
        }
        Ok((self.slice_channels(x, 0, c / 2)?, self.slice_channels(x, c / 2, c / 2)?))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::channel_concat(self.value(a), self.value(b))?;
        let split = self.shape(a).c;
        Ok(self.record(y, &[a, b], ConcatAdjoint { split }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = tensor::pixel_shuffle(self.value(x), r)?;
        Ok(self.record(y, &[x], PixelShuffleAdjoint { r }))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.record(y, &[x], SquareAdjoint)
    }

    /// Mean absolute error, as a `(1, 1, 1, 1)` scalar.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let n = T::of(diff.len().max(1) as f64);
        let loss = diff.data().iter().map(|v| v.abs()).sum::<T>() / n;
        let y = Tensor::full([1, 1, 1, 1], loss);
        Ok(self.record(y, &[pred], L1Adjoint { diff }))
    }

    /// Mean squared error, as a `(1, 1, 1, 1)` scalar.
    pub fn l2_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let n = T::of(diff.len().max(1) as f64);
        let loss = diff.data().iter().map(|&v| v * v).sum::<T>() / n;
        let y = Tensor::full([1, 1, 1, 1], loss);
        Ok(self.record(y, &[pred], L2Adjoint { diff }))
    }
}

struct Conv2dAdjoint {
    stride: usize,
    padding: usize,
}

impl<T: Real> Adjoint<T> for Conv2dAdjoint {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let kernel = ConvKernel::new(inputs[1].clone());
        let g = tensor::conv2d_backward(inputs[0], &kernel, self.stride, self.padding, grad)?;
        Ok(vec![g.input, g.weight])
    }
}

struct ReluAdjoint;

impl<T: Real> Adjoint<T> for ReluAdjoint {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![tensor::relu_backward(inputs[0], grad)?])
    }
}

struct GeluAdjoint;

impl<T: Real> Adjoint<T> for GeluAdjoint {
    fn name(&self) -> &'static str {
        "gelu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![tensor::gelu_backward(inputs[0], grad)?])
    }
}

struct EluAdjoint;

impl<T: Real> Adjoint<T> for EluAdjoint {
    fn name(&self) -> &'static str {
        "elu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![tensor::elu_backward(inputs[0], grad)?])
    }
}

struct AddAdjoint;

impl<T: Real> Adjoint<T> for AddAdjoint {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![grad.clone(), grad.clone()])
    }
}

struct MulAdjoint;

impl<T: Real> Adjoint<T> for MulAdjoint {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![grad.mul(inputs[1])?, grad.mul(inputs[0])?])
    }
}

struct ScaleAdjoint<T>(T);

impl<T: Real> Adjoint<T> for ScaleAdjoint<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![grad.scale(self.0)])
    }
}

struct AddScalarAdjoint;

impl<T: Real> Adjoint<T> for AddScalarAdjoint {
    fn name(&self) -> &'static str {
        "add_scalar"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![grad.clone()])
    }
}

struct SliceAdjoint {
    start: usize,
}

impl<T: Real> Adjoint<T> for SliceAdjoint {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = inputs[0].shape();
        let g = grad.shape();
        let plane = s.plane();
        let mut dx = Tensor::zeros(s);
        for n in 0..s.n {
            let dst = (n * s.c + self.start) * plane;
            let src = n * g.c * plane;
            dx.data_mut()[dst..dst + g.c * plane].copy_from_slice(&grad.data()[src..src + g.c * plane]);
        }
        Ok(vec![dx])
    }
}

struct ConcatAdjoint {
    split: usize,
}

impl<T: Real> Adjoint<T> for ConcatAdjoint {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let c = grad.shape().c;
        Ok(vec![
            tensor::slice_channels(grad, 0, self.split)?,
            tensor::slice_channels(grad, self.split, c - self.split)?,
        ])
    }
}

struct PixelShuffleAdjoint {
    r: usize,
}

impl<T: Real> Adjoint<T> for PixelShuffleAdjoint {
    fn name(&self) -> &'static str {
        "pixel_shuffle"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![tensor::pixel_unshuffle(grad, self.r)?])
    }
}

struct SquareAdjoint;

impl<T: Real> Adjoint<T> for SquareAdjoint {
    fn name(&self) -> &'static str {
        "square"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let two = T::of(2.0);
        Ok(vec![inputs[0].zip_map(grad, "square_backward", |x, g| two * x * g)?])
    }
}

struct L1Adjoint<T: Real> {
    diff: Tensor<T>,
}

impl<T: Real> Adjoint<T> for L1Adjoint<T> {
    fn name(&self) -> &'static str {
        "l1_loss"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let scale = grad.data()[0] / T::of(self.diff.len().max(1) as f64);
        Ok(vec![self.diff.map(|d| {
            if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            }
        })])
    }
}

struct L2Adjoint<T: Real> {
    diff: Tensor<T>,
}

impl<T: Real> Adjoint<T> for L2Adjoint<T> {
    fn name(&self) -> &'static str {
        "l2_loss"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let scale = T::of(2.0) * grad.data()[0] / T::of(self.diff.len().max(1) as f64);
        Ok(vec![self.diff.scale(scale)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_shape_mismatch_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 2, 2, 2], 1.0));
        let y = tape.relu(x);
        assert!(tape.backward(y, &Tensor::zeros([1, 1, 2, 2])).is_err());
        assert!(tape.backward(Var(99), &Tensor::zeros([1, 2, 2, 2])).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x * x + x  => dy/dx = 2x + 1
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec([1, 1, 1, 2], vec![3.0, -2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let g = tape.backward(y, &Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0, -3.0]);
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec([1, 4, 1, 1], vec![-0.5, 0.0, 0.2, 3.0]).unwrap());
        let y = tape.relu(x);
        let g = tape.backward(y, &Tensor::full([1, 4, 1, 1], 2.0)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
    }
}
