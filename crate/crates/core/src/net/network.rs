use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::NetworkSpec;
use super::stage::{count_parameters, Init, ParamDecl, Role, Stage, StageCtx, StageRegistry};
use super::stages::{ConvStage, UpsampleStage, BRANCH_OUT_GAIN};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::modules::{centralize, decentralize};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Head,
    Block,
    Down,
    Up,
    Tail,
}

pub struct Node<T: Real> {
    pub label: String,
    pub kind: NodeKind,
    stage: Box<dyn Stage<T>>,
    params: Range<usize>,
}

impl<T: Real> Node<T> {
    pub fn stage(&self) -> &dyn Stage<T> {
        self.stage.as_ref()
    }
}

/// Tape handles produced by [`Network::record_core`].
pub struct CoreTrace {
    pub output: Var,
    /// Input of every node, in node order.
    pub node_inputs: Vec<Var>,
}

/// Additive-skip U-Net `G` with a global residual connection.
///
/// `forward` wraps it as `clamp(decentralize(G(centralize(x))))`.
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    nodes: Vec<Node<T>>,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Network<T> {
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        Self::build_with(spec, &StageRegistry::builtin())
    }

    pub fn build_with(spec: &NetworkSpec, registry: &StageRegistry<T>) -> Result<Self> {
        let (nodes, decls) = Self::layout(spec, registry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let params = decls
            .iter()
            .map(|d| match d.init {
                Init::Kaiming { fan_in, gain } => Tensor::randn(d.shape, gain / (fan_in as f64).sqrt(), &mut rng),
                Init::Ones => Tensor::full(d.shape, T::one()),
                Init::Zeros => Tensor::zeros(d.shape),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            nodes,
            names: decls.into_iter().map(|d| d.name).collect(),
            params,
        })
    }

    fn layout(spec: &NetworkSpec, registry: &StageRegistry<T>) -> Result<(Vec<Node<T>>, Vec<ParamDecl>)> {
        spec.validate()?;
        let mut nodes = Vec::new();
        let mut decls = Vec::new();
        let mut push = |label: String, kind: NodeKind, stage: Box<dyn Stage<T>>| {
            let start = decls.len();
            decls.extend(stage.params().into_iter().map(|mut d| {
                d.name = format!("{label}.{}", d.name);
                d
            }));
            nodes.push(Node {
                label,
                kind,
                stage,
                params: start..decls.len(),
            });
        };
        let block = |c: usize| registry.build(Role::Block, spec.block_kind.as_str(), &StageCtx { channels: c, spec });
        let conv = |cin, cout, stride, gain| -> Box<dyn Stage<T>> {
            Box::new(ConvStage {
                cin,
                cout,
                kernel: 3,
                stride,
                gain,
            })
        };

        let base = spec.base_channels;
        push("head".into(), NodeKind::Head, conv(spec.in_channels, base, 1, 1.0));
        let mut c = base;
        for s in 0..spec.depth {
            for b in 0..spec.blocks_per_stage {
                push(format!("enc{s}.block{b}"), NodeKind::Block, block(c)?);
            }
            push(format!("enc{s}.down"), NodeKind::Down, conv(c, 2 * c, 2, 1.0));
            c *= 2;
        }
        for b in 0..spec.blocks_per_stage {
            push(format!("mid.block{b}"), NodeKind::Block, block(c)?);
        }
        for s in (0..spec.depth).rev() {
            push(format!("dec{s}.up"), NodeKind::Up, Box::new(UpsampleStage { c }));
            c /= 2;
            for b in 0..spec.blocks_per_stage {
                push(format!("dec{s}.block{b}"), NodeKind::Block, block(c)?);
            }
        }
        push("tail".into(), NodeKind::Tail, conv(base, spec.in_channels, 1, BRANCH_OUT_GAIN));
        Ok((nodes, decls))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Replaces every parameter; shapes must match the current ones.
    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (old, new) in self.params.iter().zip(&params) {
            new.expect_shape(old.shape(), "set_params")?;
        }
        self.params = params;
        Ok(())
    }

    /// Sets every parameter to zero, leaving only the skip paths.
    pub fn zero_weights(&mut self) {
        for p in &mut self.params {
            *p = Tensor::zeros(p.shape());
        }
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// True iff every stage in the graph is from the equivariant-certified set.
    pub fn certified(&self) -> bool {
        self.nodes.iter().all(|n| n.stage.certified())
    }

    /// Uncertified stage names per node label.
    pub fn uncertified_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| !n.stage.certified())
            .map(|n| n.label.as_str())
            .collect()
    }

    pub fn factor(&self) -> usize {
        1 << self.spec.depth
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.spec.in_channels {
            return Err(Error::invalid(format!(
                "network expects {} input channels, got {}",
                self.spec.in_channels, shape.c
            )));
        }
        let f = self.factor();
        if shape.h % f != 0 || shape.w % f != 0 {
            return Err(Error::Indivisible {
                h: shape.h,
                w: shape.w,
                factor: f,
                pad_h: (f - shape.h % f) % f,
                pad_w: (f - shape.w % f) % f,
            });
        }
        Ok(())
    }

    /// Records `G(z)` on `tape` with the given parameter variables.
    pub fn record_core(&self, tape: &mut Tape<T>, z: Var, params: &[Var]) -> Result<CoreTrace> {
        if params.len() != self.params.len() {
            return Err(Error::Tape(format!(
                "expected {} parameter variables, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.check_input(tape.shape(z))?;
        let mut node_inputs = Vec::with_capacity(self.nodes.len());
        let mut skips = Vec::new();
        let mut h = z;
        for node in &self.nodes {
            if node.kind == NodeKind::Down {
                skips.push(h);
            }
            node_inputs.push(h);
            h = node.stage.record(tape, h, &params[node.params.clone()])?;
            if node.kind == NodeKind::Up {
                let skip = skips.pop().expect("one skip per upsampler");
                h = tape.add(h, skip)?;
            }
        }
        let output = tape.add(h, z)?;
        Ok(CoreTrace { output, node_inputs })
    }

    /// Leaves every parameter on `tape`, in store order.
    pub fn param_leaves(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// The core map `G` on centered input.
    pub fn core(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.param_leaves(&mut tape);
        let z = tape.leaf(z.clone());
        let trace = self.record_core(&mut tape, z, &params)?;
        Ok(tape.into_value(trace.output))
    }

    /// Inputs seen by every node when `G` runs on `z`.
    pub fn node_inputs(&self, z: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let params = self.param_leaves(&mut tape);
        let z = tape.leaf(z.clone());
        let trace = self.record_core(&mut tape, z, &params)?;
        Ok(trace.node_inputs.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Runs a single node on `x` with its current parameters.
    pub fn node_forward(&self, index: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let node = self
            .nodes
            .get(index)
            .ok_or_else(|| Error::invalid(format!("node index {index} out of range")))?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params[node.params.clone()]
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect();
        let x = tape.leaf(x.clone());
        let y = node.stage.record(&mut tape, x, &params)?;
        Ok(tape.into_value(y))
    }

    /// Full pipeline on an image in `[0, 1]`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.core(&centralize(image))?;
        Ok(decentralize(&g).clamp(T::zero(), T::one()))
    }

    /// Same graph and parameters at another precision.
    pub fn cast<U: Real>(&self) -> Result<Network<U>> {
        let mut net = Network::<U>::build(&self.spec)?;
        net.set_params(self.params.iter().map(Tensor::cast).collect())?;
        Ok(net)
    }
}

/// Learnable scalar count of a spec without materializing it.
pub fn count_spec_parameters(spec: &NetworkSpec) -> Result<usize> {
    let (_, decls) = Network::<f32>::layout(spec, &StageRegistry::builtin())?;
    Ok(count_parameters(&decls))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(spec: NetworkSpec) -> NetworkSpec {
        NetworkSpec {
            base_channels: 4,
            blocks_per_stage: 1,
            in_channels: 1,
            ..spec
        }
    }

    #[test]
    fn node_order_and_shapes() {
        let net = Network::<f64>::build(&small(NetworkSpec::sevnet())).unwrap();
        let labels: Vec<_> = net.nodes().iter().map(|n| n.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "head", "enc0.block0", "enc0.down", "enc1.block0", "enc1.down", "mid.block0", "dec1.up",
                "dec1.block0", "dec0.up", "dec0.block0", "tail"
            ]
        );
        let x = Tensor::full([2, 1, 8, 12], 0.25);
        assert_eq!(net.forward(&x).unwrap().shape(), x.shape());
        assert_eq!(net.param_names().len(), net.params().len());
        assert_eq!(count_spec_parameters(net.spec()).unwrap(), net.count_parameters());
    }

    #[test]
    fn zero_weights_give_identity() {
        let mut net = Network::<f32>::build(&small(NetworkSpec::sevnet())).unwrap();
        net.zero_weights();
        let x = Tensor::from_fn([1, 1, 8, 8], |_, _, h, w| ((h * 8 + w) as f32) / 64.0);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::<f32>::build(&NetworkSpec::sevnet().with_seed(5)).unwrap();
        let b = Network::<f32>::build(&NetworkSpec::sevnet().with_seed(5)).unwrap();
        let c = Network::<f32>::build(&NetworkSpec::sevnet().with_seed(6)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn certificates() {
        assert!(Network::<f32>::build(&NetworkSpec::baseline()).unwrap().certified());
        assert!(Network::<f32>::build(&NetworkSpec::sevnet()).unwrap().certified());
        let gelu = NetworkSpec {
            activation: crate::net::Activation::Gelu,
            ..NetworkSpec::baseline()
        };
        assert!(!Network::<f32>::build(&gelu).unwrap().certified());
    }

    #[test]
    fn indivisible_input_suggests_padding() {
        let net = Network::<f32>::build(&small(NetworkSpec::baseline())).unwrap();
        let err = net.forward(&Tensor::zeros([1, 1, 10, 8])).unwrap_err();
        assert!(matches!(err, Error::Indivisible { pad_h: 2, pad_w: 0, factor: 4, .. }), "{err}");
    }

    #[test]
    fn node_forward_matches_capture_chain() {
        let net = Network::<f64>::build(&small(NetworkSpec::sevnet()).with_seed(3)).unwrap();
        let z = Tensor::from_fn([1, 1, 8, 8], |_, _, h, w| ((h * 3 + w * 5) % 7) as f64 / 7.0 - 0.5);
        let inputs = net.node_inputs(&z).unwrap();
        assert_eq!(inputs.len(), net.nodes().len());
        let y = net.node_forward(1, &inputs[1]).unwrap();
        assert_eq!(y, inputs[2]);
    }
}
