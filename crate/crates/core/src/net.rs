//! Dense feed-forward layers with exact backpropagation, Adam and
//! heavy-ball momentum.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major, `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform init in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn is_well_formed(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs && self.bias.len() == self.outputs
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Values cached by one forward pass. `activations[0]` is the input;
/// `activations[i + 1]` and `pre_activations[i]` belong to layer `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<Dense>,
}

/// Gradients laid out like the stack they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct StackGradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl StackGradients {
    pub fn zeros_like(stack: &LayerStack) -> Self {
        Self {
            weights: stack.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: stack.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            for x in g {
                *x *= s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.scale(0.0);
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .flatten()
            .fold(0.0, |m, x| f64::max(m, x.abs()))
    }
}

impl LayerStack {
    /// Zero-initialized stack: `hidden` on every layer but the last.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        Self::build(dims, hidden, output, Dense::zeros)
    }

    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        Self::build(dims, hidden, output, |i, o, a| Dense::glorot(i, o, a, rng))
    }

    fn build(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        mut make: impl FnMut(usize, usize, Activation) -> Dense,
    ) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| make(dims[i], dims[i + 1], if i + 1 == n { output } else { hidden }))
            .collect();
        Self { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.first().map(|l| vec![l.inputs]).unwrap_or_default();
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Consecutive shapes agree and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if !l.is_well_formed() {
                return Err(Error::Dimension {
                    what: "layer parameters",
                    expected: l.inputs * l.outputs,
                    actual: l.weights.len(),
                });
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::Dimension {
                    what: "layer chaining",
                    expected: self.layers[i - 1].outputs,
                    actual: l.inputs,
                });
            }
            if l.weights.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(Error::Config("non-finite network parameter".into()));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(input)?;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| layer.bias[o] + dot(layer.row(o), x))
                .collect();
            let y = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
            activations.push(y);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            ForwardTrace {
                pre_activations,
                activations,
            },
        ))
    }

    /// Forward pass without keeping a trace.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = (0..layer.outputs)
                .map(|o| layer.activation.apply(layer.bias[o] + dot(layer.row(o), &x)))
                .collect();
        }
        Ok(x)
    }

    fn check_trace(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<()> {
        let ok = trace.activations.len() == self.layers.len() + 1
            && trace.pre_activations.len() == self.layers.len()
            && trace
                .activations
                .iter()
                .zip(self.dims())
                .all(|(a, d)| a.len() == d);
        if !ok {
            return Err(Error::Dimension {
                what: "forward trace",
                expected: self.layers.len() + 1,
                actual: trace.activations.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Dimension {
                what: "output gradient",
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        Ok(())
    }

    fn backprop(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        mut grads: Option<&mut StackGradients>,
    ) -> Result<Vec<f64>> {
        self.check_trace(trace, output_grad)?;
        let mut upstream = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.activations[i + 1];
            let x = &trace.activations[i];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(y)
                .map(|(g, &yo)| g * layer.activation.derivative(yo))
                .collect();
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[i];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, x, &mut gw[o * layer.inputs..(o + 1) * layer.inputs]);
                    }
                }
                for (gb, d) in g.bias[i].iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            let mut down = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, layer.row(o), &mut down);
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Exact gradients of `output_grad . output` for the traced pass.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<(StackGradients, Vec<f64>)> {
        let mut grads = StackGradients::zeros_like(self);
        let input_grad = self.backprop(trace, output_grad, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        grads: &mut StackGradients,
    ) -> Result<Vec<f64>> {
        self.backprop(trace, output_grad, Some(grads))
    }

    /// Gradient with respect to the input only.
    pub fn input_gradient(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.backprop(trace, output_grad, None)
    }
}

/// Adam moments over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_stack(stack: &LayerStack) -> Self {
        Self::new(stack.param_count())
    }

    /// One Adam update on `params` starting at flat offset `offset`.
    fn update_slice(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64, c1: f64, c2: f64) {
        let m = &mut self.first_moment[offset..offset + params.len()];
        let v = &mut self.second_moment[offset..offset + params.len()];
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }

    fn begin_step(&mut self) -> (f64, f64) {
        self.step += 1;
        let t = self.step as i32;
        (1.0 - libm::pow(self.beta1, t as f64), 1.0 - libm::pow(self.beta2, t as f64))
    }

    /// Adam on a flat vector.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                what: "adam parameters",
                expected: self.first_moment.len(),
                actual: params.len(),
            });
        }
        let (c1, c2) = self.begin_step();
        self.update_slice(0, params, grads, lr, c1, c2);
        Ok(())
    }
}

/// Adam update over every weight and bias of `stack`.
pub fn adam_step(stack: &mut LayerStack, grads: &StackGradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first_moment.len() != stack.param_count() || grads.weights.len() != stack.layers.len() {
        return Err(Error::Dimension {
            what: "adam state",
            expected: stack.param_count(),
            actual: state.first_moment.len(),
        });
    }
    let (c1, c2) = state.begin_step();
    let mut offset = 0;
    for (i, layer) in stack.layers.iter_mut().enumerate() {
        state.update_slice(offset, &mut layer.weights, &grads.weights[i], lr, c1, c2);
        offset += layer.weights.len();
        state.update_slice(offset, &mut layer.bias, &grads.bias[i], lr, c1, c2);
        offset += layer.bias.len();
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub velocity: Vec<f64>,
    pub momentum: f64,
}

impl MomentumState {
    pub fn new(len: usize) -> Self {
        Self {
            velocity: vec![0.0; len],
            momentum: 0.9,
        }
    }
}

/// Heavy-ball step: `v = mu v + g`, `p -= lr v`.
pub fn momentum_step(params: &mut [f64], grad: &[f64], state: &mut MomentumState, lr: f64) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.velocity.len() {
        return Err(Error::Dimension {
            what: "momentum parameters",
            expected: state.velocity.len(),
            actual: params.len(),
        });
    }
    for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut state.velocity) {
        *v = state.momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}
