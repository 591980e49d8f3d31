use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mismatch, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Shape and weights of one dense layer, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fully connected network with all parameters in one flat buffer.
///
/// Layer `l` owns `outputs·inputs` weights followed by `outputs` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerSpec>", into = "Vec<LayerSpec>")]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `values[0]` is the input; `values[l + 1]` is the output of layer `l`.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace has an input")
    }
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims.len() - 1;
        let mut activations = vec![hidden; layers];
        activations[layers - 1] = output;
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { dims: dims.to_vec(), activations, params }
    }

    pub fn from_layers(layers: Vec<LayerSpec>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::Checkpoint("no layers".into()));
        }
        let mut dims = vec![layers[0].inputs];
        let mut activations = Vec::new();
        let mut params = Vec::new();
        for layer in layers {
            if layer.inputs != *dims.last().unwrap() {
                return Err(mismatch(&[*dims.last().unwrap()], &[layer.inputs]));
            }
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(mismatch(&[layer.outputs, layer.inputs], &[layer.weights.len(), layer.bias.len()]));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite);
            }
            dims.push(layer.outputs);
            activations.push(layer.activation);
            params.extend(layer.weights);
            params.extend(layer.bias);
        }
        Ok(Self { dims, activations, params })
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        (0..self.num_layers())
            .map(|l| {
                let (w, b) = self.layer_params(l);
                LayerSpec {
                    inputs: self.dims[l],
                    outputs: self.dims[l + 1],
                    activation: self.activations[l],
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.dims.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_params(&self, layer: usize) -> (&[f64], &[f64]) {
        let o = self.layer_offset(layer);
        let (i, n) = (self.dims[layer], self.dims[layer + 1]);
        (&self.params[o..o + i * n], &self.params[o + i * n..o + i * n + n])
    }

    /// Mutable weights and bias of one layer.
    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let o = self.layer_offset(layer);
        let (i, n) = (self.dims[layer], self.dims[layer + 1]);
        let (w, rest) = self.params[o..o + i * n + n].split_at_mut(i * n);
        (w, rest)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NumericsError> {
        if x.len() != self.dims[0] {
            return Err(mismatch(&[self.dims[0]], &[x.len()]));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for l in 0..self.num_layers() {
            cur = self.layer_forward(l, &cur).1;
        }
        Ok(cur)
    }

    /// Row-wise forward pass; each row is computed exactly as by [`Mlp::forward`].
    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NumericsError> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w, b) = self.layer_params(l);
        let n_in = self.dims[l];
        let act = self.activations[l];
        let pre: Vec<f64> = b
            .iter()
            .zip(w.chunks_exact(n_in))
            .map(|(bias, row)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let out = pre.iter().map(|&z| act.apply(z)).collect();
        (pre, out)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace, NumericsError> {
        self.check_input(x)?;
        let mut values = vec![x.to_vec()];
        let mut pres = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (pre, out) = self.layer_forward(l, values.last().unwrap());
            pres.push(pre);
            values.push(out);
        }
        Ok(MlpTrace { values, pre: pres })
    }

    /// Accumulates parameter gradients of `upstream · y(x)` into `grads`
    /// (same layout as [`Mlp::params`]) and returns the gradient w.r.t. `x`.
    pub fn backward(&self, trace: &MlpTrace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NumericsError> {
        if upstream.len() != self.output_dim() {
            return Err(mismatch(&[self.output_dim()], &[upstream.len()]));
        }
        if grads.len() != self.params.len() {
            return Err(mismatch(&[self.params.len()], &[grads.len()]));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let act = self.activations[l];
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let out = &trace.values[l + 1];
            let pre = &trace.pre[l];
            for k in 0..n_out {
                delta[k] *= act.derivative(pre[k], out[k]);
            }
            let input = &trace.values[l];
            let o = self.layer_offset(l);
            let (gw, gb) = grads[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for k in 0..n_out {
                let d = delta[k];
                gb[k] += d;
                if d != 0.0 {
                    for (g, xi) in gw[k * n_in..(k + 1) * n_in].iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let (w, _) = self.layer_params(l);
            let mut next = vec![0.0; n_in];
            for k in 0..n_out {
                let d = delta[k];
                if d != 0.0 {
                    for (nx, wk) in next.iter_mut().zip(&w[k * n_in..(k + 1) * n_in]) {
                        *nx += d * wk;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Parameter gradients and input gradient of `upstream · y(x)`.
    pub fn gradients(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
        let trace = self.forward_trace(x)?;
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward(&trace, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}

impl TryFrom<Vec<LayerSpec>> for Mlp {
    type Error = NumericsError;
    fn try_from(layers: Vec<LayerSpec>) -> Result<Self, Self::Error> {
        Mlp::from_layers(layers)
    }
}

impl From<Mlp> for Vec<LayerSpec> {
    fn from(m: Mlp) -> Self {
        m.layers()
    }
}
