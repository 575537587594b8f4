//! Dense feed-forward classifier: forward pass with softmax cross-entropy,
//! exact backpropagation, global-norm gradient clipping, and plain SGD.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Architecture of the classifier: sizes are input dim, hidden dims...,
/// class count. The loss is always softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::ValidationError {
                field: "model.layer_sizes".into(),
                message: "need at least an input and an output size".into(),
            });
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::ValidationError {
                field: "model.layer_sizes".into(),
                message: "layer sizes must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Seeded initialization: weights uniform in [-a, a] with
    /// a = sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn init_params(&self, stream: &RngStream) -> ModelParams {
        let mut layers = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut s = stream.child(crate::rng::purpose::INIT).child(l as u64);
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (2.0 * s.next_f64() - 1.0) * a)
                .collect();
            layers.push(DenseLayer {
                weight: Tensor::new(vec![fan_out, fan_in], weight).expect("init weight shape"),
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        ModelParams { layers }
    }
}

/// One dense layer: weight is [out x in] row-major, bias is [out].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Full parameter set of a model; layer ids are the vector indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
}

impl ModelParams {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape()
            })
    }
}

/// Gradients mirror the parameter layout exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    /// L2 norm taken over every parameter of every layer at once.
    pub fn global_l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight.data().iter().map(|v| v * v).sum::<f64>()
                    + l.bias.data().iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// A mini-batch: inputs are [b x input_dim], labels are class indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "batch inputs must be 2-D, got shape {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() || labels.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows vs {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

struct ForwardPass {
    /// Post-activation values per layer, starting with the inputs.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre_activations: Vec<Vec<f64>>,
    logits_rows: usize,
    logits_cols: usize,
}

fn check_batch(params: &ModelParams, batch: &Batch) -> Result<()> {
    if params.layers.is_empty() {
        return Err(Error::ShapeMismatch("model has no layers".into()));
    }
    let in_dim = params.layers[0].in_dim();
    if batch.inputs.shape()[1] != in_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch features {} vs model input dim {in_dim}",
            batch.inputs.shape()[1]
        )));
    }
    let classes = params.layers.last().unwrap().out_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn forward(params: &ModelParams, batch: &Batch) -> ForwardPass {
    let b = batch.size();
    let mut activations = vec![batch.inputs.data().to_vec()];
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let last = params.layers.len() - 1;

    for (l, layer) in params.layers.iter().enumerate() {
        let in_dim = layer.in_dim();
        let out_dim = layer.out_dim();
        let input = activations.last().unwrap();
        let w = layer.weight.data();
        let bias = layer.bias.data();
        let mut z = vec![0.0; b * out_dim];
        for r in 0..b {
            let x = &input[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = bias[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc += wi * xi;
                }
                z[r * out_dim + o] = acc;
            }
        }
        if l < last {
            let a: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            pre_activations.push(z);
            activations.push(a);
        } else {
            pre_activations.push(z.clone());
            activations.push(z);
        }
    }

    ForwardPass {
        activations,
        pre_activations,
        logits_rows: b,
        logits_cols: params.layers[last].out_dim(),
    }
}

fn mean_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Mean softmax cross-entropy over the batch, plus the raw logits [b x k].
pub fn forward_loss(params: &ModelParams, batch: &Batch) -> Result<(f64, Tensor)> {
    check_batch(params, batch)?;
    let pass = forward(params, batch);
    let logits = pass.activations.last().unwrap();
    let loss = mean_cross_entropy(logits, &batch.labels, pass.logits_cols);
    let logits = Tensor::new(vec![pass.logits_rows, pass.logits_cols], logits.clone())?;
    Ok((loss, logits))
}

/// Exact gradients of `forward_loss` with respect to every parameter.
pub fn backward(params: &ModelParams, batch: &Batch) -> Result<Gradients> {
    check_batch(params, batch)?;
    let pass = forward(params, batch);
    let b = batch.size();
    let classes = pass.logits_cols;
    let logits = pass.activations.last().unwrap();

    // dL/dz for the output layer: (softmax - onehot) / b.
    let mut delta = vec![0.0; b * classes];
    for (r, &y) in batch.labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for c in 0..classes {
            let p = exps[c] / sum;
            delta[r * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }

    let mut grads: Vec<DenseLayer> = params
        .layers
        .iter()
        .map(|l| DenseLayer {
            weight: Tensor::zeros(l.weight.shape().to_vec()),
            bias: Tensor::zeros(l.bias.shape().to_vec()),
        })
        .collect();

    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let in_dim = layer.in_dim();
        let out_dim = layer.out_dim();
        let input = &pass.activations[l];

        {
            let gw = grads[l].weight.data_mut();
            for r in 0..b {
                let d = &delta[r * out_dim..(r + 1) * out_dim];
                let x = &input[r * in_dim..(r + 1) * in_dim];
                for o in 0..out_dim {
                    let gr = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (g, xi) in gr.iter_mut().zip(x) {
                        *g += d[o] * xi;
                    }
                }
            }
        }
        {
            let gb = grads[l].bias.data_mut();
            for r in 0..b {
                let d = &delta[r * out_dim..(r + 1) * out_dim];
                for o in 0..out_dim {
                    gb[o] += d[o];
                }
            }
        }

        if l > 0 {
            // Propagate through the weights, then the ReLU of the layer below.
            let w = layer.weight.data();
            let z_prev = &pass.pre_activations[l - 1];
            let mut next = vec![0.0; b * in_dim];
            for r in 0..b {
                let d = &delta[r * out_dim..(r + 1) * out_dim];
                let out_row = &mut next[r * in_dim..(r + 1) * in_dim];
                for o in 0..out_dim {
                    let wrow = &w[o * in_dim..(o + 1) * in_dim];
                    for (n, wi) in out_row.iter_mut().zip(wrow) {
                        *n += d[o] * wi;
                    }
                }
                for (i, n) in out_row.iter_mut().enumerate() {
                    if z_prev[r * in_dim + i] <= 0.0 {
                        *n = 0.0;
                    }
                }
            }
            delta = next;
        }
    }

    Ok(Gradients { layers: grads })
}

/// Scale gradients by 1 / max(1, norm / clip_bound) where the norm is the
/// global L2 norm over every parameter. The comparison carries a 1e-12
/// relative tolerance so that clipping an already-clipped gradient is a
/// bit-exact no-op.
pub fn clip_gradients(g: &Gradients, clip_bound: f64) -> Result<Gradients> {
    if clip_bound <= 0.0 {
        return Err(Error::NonPositiveClip(clip_bound));
    }
    let norm = g.global_l2_norm();
    if norm <= clip_bound * (1.0 + 1e-12) {
        return Ok(g.clone());
    }
    let scale = clip_bound / norm;
    let layers = g
        .layers
        .iter()
        .map(|l| DenseLayer {
            weight: Tensor::new(
                l.weight.shape().to_vec(),
                l.weight.data().iter().map(|v| v * scale).collect(),
            )
            .expect("scaled weight"),
            bias: Tensor::new(
                l.bias.shape().to_vec(),
                l.bias.data().iter().map(|v| v * scale).collect(),
            )
            .expect("scaled bias"),
        })
        .collect();
    Ok(Gradients { layers })
}

/// One gradient-descent step: every parameter moves by `-eta * gradient`.
pub fn sgd_step(params: &ModelParams, g: &Gradients, eta: f64) -> Result<ModelParams> {
    if params.layers.len() != g.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter layers vs {} gradient layers",
            params.layers.len(),
            g.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (p, gl) in params.layers.iter().zip(&g.layers) {
        if p.weight.shape() != gl.weight.shape() || p.bias.shape() != gl.bias.shape() {
            return Err(Error::ShapeMismatch("gradient layer shape".into()));
        }
        layers.push(DenseLayer {
            weight: Tensor::new(
                p.weight.shape().to_vec(),
                p.weight
                    .data()
                    .iter()
                    .zip(gl.weight.data())
                    .map(|(w, gw)| w - eta * gw)
                    .collect(),
            )?,
            bias: Tensor::new(
                p.bias.shape().to_vec(),
                p.bias
                    .data()
                    .iter()
                    .zip(gl.bias.data())
                    .map(|(b, gb)| b - eta * gb)
                    .collect(),
            )?,
        });
    }
    Ok(ModelParams { layers })
}

/// Accuracy (argmax with ties broken toward the lowest class index) and mean
/// loss over a dataset.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let batch = dataset.as_batch()?;
    let (loss, logits) = forward_loss(params, &batch)?;
    let classes = logits.shape()[1];
    let mut correct = 0usize;
    for (r, &label) in batch.labels.iter().enumerate() {
        let row = &logits.data()[r * classes..(r + 1) * classes];
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok((correct as f64 / batch.size() as f64, loss))
}
