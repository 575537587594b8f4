//! Dense f64 tensors and the handful of numeric primitives the privacy
//! machinery is built on: L2 norm, flatten, softmax, KL divergence, and
//! seeded Gaussian sampling.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the shape matches the data length and
    /// that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite tensor value {bad}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor from a plain vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        let shape = vec![data.len()];
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Square root of the sum of squared entries.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Reshape to 1-D; data order is unchanged.
    pub fn flatten(&self) -> Tensor {
        Tensor {
            shape: vec![self.data.len()],
            data: self.data.clone(),
        }
    }
}

/// Softmax of a 1-D tensor, computed with max-subtraction so large inputs
/// cannot overflow. Every output is strictly positive and the outputs sum
/// to one. Exponentials that underflow to zero are floored at the smallest
/// positive normal, which keeps downstream log-ratios finite.
pub fn softmax(t: &Tensor) -> Tensor {
    assert_eq!(t.rank(), 1, "softmax expects a 1-D tensor");
    let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = t
        .data
        .iter()
        .map(|&v| (v - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let sum: f64 = exps.iter().sum();
    Tensor::from_vec(exps.into_iter().map(|e| e / sum).collect())
}

/// KL divergence `sum p ln(p/q)` in nats.
///
/// Both arguments must be strictly positive distributions summing to one
/// (within 1e-9); anything else is rejected rather than renormalized, since
/// it means a caller skipped softmax. Values that round a hair below zero
/// are clamped to exactly zero.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::MismatchedLength(p.len(), q.len()));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.data.iter().zip(q.data.iter()) {
        acc += pi * (pi / qi).ln();
    }
    if acc < 0.0 {
        if acc < -1e-12 {
            return Err(Error::NotADistribution(format!(
                "KL divergence came out {acc}, inputs are not valid distributions"
            )));
        }
        acc = 0.0;
    }
    Ok(acc)
}

fn check_distribution(t: &Tensor) -> Result<()> {
    if t.data.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotADistribution(
            "entries must be strictly positive".into(),
        ));
    }
    let sum: f64 = t.data.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// I.i.d. draws from N(mean, std^2) with the given shape. `std == 0` yields
/// the constant tensor of `mean`.
pub fn sample_gaussian(
    shape: &[usize],
    mean: f64,
    std: f64,
    stream: &mut RngStream,
) -> Result<Tensor> {
    if std < 0.0 {
        return Err(Error::NegativeStd(std));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    if std == 0.0 {
        data.resize(n, mean);
    } else {
        while data.len() < n {
            let (a, b) = stream.next_normal_pair();
            data.push(mean + std * a);
            if data.len() < n {
                data.push(mean + std * b);
            }
        }
    }
    Tensor::new(shape.to_vec(), data)
}
