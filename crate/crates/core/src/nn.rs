//! Named parameter storage and the small layer building blocks the model is
//! assembled from.

use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter blocks. Order is creation order and is what the
/// optimizer state and checkpoints are keyed on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn position(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Records every block on `graph` as a differentiable leaf.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound(self.tensors.iter().map(|t| graph.param(t.clone())).collect())
    }

    /// Records every block as a constant (inference; no gradient bookkeeping).
    pub fn bind_frozen<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound(self.tensors.iter().map(|t| graph.constant(t.clone())).collect())
    }
}

/// Parameters of a [`ParamStore`] recorded on one graph.
pub struct Bound<'g>(Vec<Var<'g>>);

impl<'g> Bound<'g> {
    /// Wraps vars laid out in store order.
    pub fn from_vars(vars: Vec<Var<'g>>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.0
    }

    /// Gradients of every block, in store order.
    pub fn grads(&self, graph: &Graph) -> Vec<Tensor> {
        self.0.iter().map(|&v| graph.grad(v)).collect()
    }
}

impl<'g> Index<ParamId> for Bound<'g> {
    type Output = Var<'g>;

    fn index(&self, id: ParamId) -> &Var<'g> {
        &self.0[id.0]
    }
}

/// Seeded fan-in-scaled uniform initializer, `U(−1/√fan_in, 1/√fan_in)`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, data).expect("init shape")
    }
}

/// Affine map over the last axis: `x · W + b`, `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), init.uniform(&[fan_in, fan_out], bound));
        let bias = store.add(format!("{name}.bias"), init.uniform(&[fan_out], bound));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'g>(&self, x: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        x.matmul(p[self.weight])?.add_bias(p[self.bias])
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, eps: f64) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([width], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([width])),
            eps,
        }
    }

    pub fn forward<'g>(&self, x: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        x.layernorm(p[self.gamma], p[self.beta], self.eps)
    }
}

/// Stack of affine layers with an activation between consecutive layers and
/// a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` lists every layer width including input and output, so
    /// `[O, b, b, O]` gives three affine maps.
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, widths: &[usize], activation: Activation) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, init, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers, activation }
    }

    pub fn forward<'g>(&self, mut x: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(x, p)?;
            if i < last {
                x = x.activate(self.activation);
            }
        }
        Ok(x)
    }
}
