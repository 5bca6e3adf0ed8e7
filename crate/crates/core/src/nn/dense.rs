use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` stored row-major as
/// `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn preactivation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Per-layer values recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of a [`DenseNet`], same layout as the net.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub layers: Vec<LayerGrads>,
}

impl DenseGrads {
    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g *= factor);
            l.bias.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Flat views in [`DenseNet::params_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

/// A stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    /// Layers with widths `dims[0] -> dims[1] -> ...`; `hidden` on every layer
    /// but the last, which uses `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "a network needs an input and an output width");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        self.check_input(input)?;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let pre = layer.preactivation(&x);
            let out = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            trace.inputs.push(std::mem::replace(&mut x, out));
            trace.preacts.push(pre);
        }
        Ok((x, trace))
    }

    /// Forward pass without recording a trace.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer
                .preactivation(&x)
                .into_iter()
                .map(|v| layer.activation.apply(v))
                .collect();
        }
        Ok(x)
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Reverse pass for one traced forward call. Parameter gradients are
    /// added into `grads`; the gradient with respect to the input is returned.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut DenseGrads,
    ) -> Result<Vec<f64>> {
        if trace.is_empty() {
            return Err(Error::State("backward called without a forward trace".into()));
        }
        if trace.inputs.len() != self.layers.len() || grads.layers.len() != self.layers.len() {
            return Err(Error::State("trace or gradient buffer belongs to another network".into()));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, network emits {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            let pre = &trace.preacts[i];
            for (d, &p) in delta.iter_mut().zip(pre) {
                *d *= layer.activation.derivative(p);
            }
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, &x) in row.iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
            }
            let mut next = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<(DenseGrads, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let input_grad = self.backward_into(trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Mutable parameter slices: weights then bias, layer by layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}
