//! Named parameters, layer helpers and the forward-pass session that binds
//! parameters onto a tape.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors. Insertion order is the canonical order
/// for checkpoints and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'a> Session<'a> {
    /// `track` marks parameter leaves as requiring gradients.
    pub fn new(store: &'a ParamStore, track: bool) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], track }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.track);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Gradient per parameter in store order; unbound or unreached parameters get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.store
            .ids()
            .map(|id| {
                self.bound[id.0]
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(self.store.get(id).shape().to_vec()))
            })
            .collect()
    }
}

/// Kaiming-uniform bound for a fan-in.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// 2-D convolution with bias and "same" padding.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let w = Tensor::uniform([cout, cin, k, k], kaiming_bound(cin * k * k), rng);
        Self::from_tensors(store, name, w, Tensor::zeros([cout]))
    }

    /// Weight and bias both zero.
    pub fn zeros(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::from_tensors(store, name, Tensor::zeros([cout, cin, k, k]), Tensor::zeros([cout]))
    }

    pub fn from_tensors(store: &mut ParamStore, name: &str, weight: Tensor, bias: Tensor) -> Self {
        let pad = (weight.shape()[2] - 1) / 2;
        let weight = store.add(format!("{name}.weight"), weight);
        let bias = store.add(format!("{name}.bias"), bias);
        Self { weight, bias, pad }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.weight), s.p(self.bias));
        s.tape.conv2d(x, w, Some(b), self.pad)
    }
}

/// Depthwise 2-D convolution with bias and "same" padding.
#[derive(Clone, Copy, Debug)]
pub struct DwConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl DwConv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, k: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::uniform([c, 1, k, k], kaiming_bound(k * k), rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([c]));
        Self { weight, bias, pad: (k - 1) / 2 }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.weight), s.p(self.bias));
        s.tape.depthwise_conv2d(x, w, Some(b), self.pad)
    }
}

/// Layer normalization over the channel axis of an `[N, C, H, W]` map.
#[derive(Clone, Copy, Debug)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ChannelNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([c])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([c])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        s.tape.layer_norm(x, g, b, 1)
    }
}
