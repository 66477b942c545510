use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_STACK_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STACK_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// `y = act(x W^T + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub grad_weight: Tensor,
    pub grad_bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!("bias of {} for {} outputs", bias.len(), weight.rows())));
        }
        let (o, i) = weight.shape();
        Ok(Self { weight, bias, activation, grad_weight: Tensor::zeros(o, i), grad_bias: vec![0.0; o] })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.random_range(-a..a)).collect();
        Self::new(Tensor::from_vec(outputs, inputs, w).unwrap(), vec![0.0; outputs], activation).unwrap()
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }
    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Chain of dense layers with gradient buffers.
#[derive(Debug)]
pub struct MlpStack {
    layers: Vec<Dense>,
    id: u64,
    version: u64,
}

impl Clone for MlpStack {
    fn clone(&self) -> Self {
        Self { layers: self.layers.clone(), id: fresh_id(), version: 0 }
    }
}

impl PartialEq for MlpStack {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`MlpStack::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stack_id: u64,
    version: u64,
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
}

impl MlpStack {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} outputs into {} inputs",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        Ok(Self { layers, id: fresh_id(), version: 0 })
    }

    /// `dims = [in, h1, .., out]`; hidden layers use ReLU, the last `output`.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { output } else { Activation::Relu };
                Dense::glorot(dims[l], dims[l + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers).unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} columns, stack expects {}", x.cols(), self.input_dim())));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut y = Tensor::zeros(cur.rows(), layer.outputs());
            for r in 0..y.rows() {
                y.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(1.0, &cur, false, &layer.weight, true, 1.0, &mut y)?;
            if layer.activation == Activation::Relu {
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(cur);
            cur = y.clone();
            outputs.push(y);
        }
        Ok((cur, ForwardCache { stack_id: self.id, version: self.version, inputs, outputs }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, cache: &ForwardCache, dy: &Tensor) -> Result<Tensor> {
        if cache.stack_id != self.id || cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let last = cache.outputs.last().unwrap();
        if dy.shape() != last.shape() {
            return Err(Error::Shape(format!("upstream gradient {:?} vs output {:?}", dy.shape(), last.shape())));
        }
        let mut grad = dy.clone();
        for (l, layer) in self.layers.iter_mut().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (g, y) in grad.data_mut().iter_mut().zip(cache.outputs[l].data()) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let input = &cache.inputs[l];
            gemm(1.0, &grad, true, input, false, 1.0, &mut layer.grad_weight)?;
            for r in 0..grad.rows() {
                for (b, g) in layer.grad_bias.iter_mut().zip(grad.row(r)) {
                    *b += g;
                }
            }
            let mut dx = Tensor::zeros(grad.rows(), layer.inputs());
            gemm(1.0, &grad, false, &layer.weight, false, 0.0, &mut dx)?;
            grad = dx;
        }
        Ok(grad)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.grad_weight.data_mut().fill(0.0);
            layer.grad_bias.fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Weights then bias, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.grad_weight.data());
            out.extend_from_slice(&l.grad_bias);
        }
        out
    }

    /// Overwrites parameters from a flat slice laid out as [`Self::params`];
    /// returns the number of values consumed. Invalidates outstanding caches.
    pub fn set_params(&mut self, values: &[f64]) -> usize {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        self.version += 1;
        at
    }

    /// Sets the parameter at `index` in [`Self::params`] order.
    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            if index < nw {
                l.weight.data_mut()[index] = value;
                self.version += 1;
                return;
            }
            index -= nw;
            if index < l.bias.len() {
                l.bias[index] = value;
                self.version += 1;
                return;
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Adds `other`'s gradient buffers into this stack's.
    pub fn accumulate_grads(&mut self, other: &MlpStack) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.grad_weight.add_assign(&b.grad_weight);
            a.grad_bias.iter_mut().zip(&b.grad_bias).for_each(|(x, y)| *x += y);
        }
    }

    /// Applies `f(param, grad, index)` to every parameter in [`Self::params`] order.
    pub fn update_params(&mut self, mut f: impl FnMut(&mut f64, f64, usize)) {
        let mut at = 0;
        for l in &mut self.layers {
            for (w, g) in l.weight.data_mut().iter_mut().zip(l.grad_weight.data()) {
                f(w, *g, at);
                at += 1;
            }
            for (b, g) in l.bias.iter_mut().zip(&l.grad_bias) {
                f(b, *g, at);
                at += 1;
            }
        }
        self.version += 1;
    }
}
