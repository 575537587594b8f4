//! Layer-wise adaptive local differential privacy: norm-based layer
//! selection, KL-based per-layer privacy estimation, the calibrated Gaussian
//! noise constant, and the noise-injection strategies (adaptive plus the
//! static and exponentially decaying baselines).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseLayer, ModelParams};
use crate::rng::{purpose, RngStream};
use crate::tensor::{kl_divergence, sample_gaussian, softmax, Tensor};

/// How a client perturbs its model before upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Layer-wise adaptive noise: select influential layers by norm, scale
    /// noise inversely to the estimated per-layer privacy.
    Ladp,
    /// Static Gaussian noise on every layer.
    FullDp,
    /// Static noise with an exponential decay over rounds.
    TimeVarying,
    /// No perturbation.
    None,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Ladp => "ladp",
            Strategy::FullDp => "full_dp",
            Strategy::TimeVarying => "time_varying",
            Strategy::None => "none",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ladp" => Ok(Strategy::Ladp),
            "full_dp" => Ok(Strategy::FullDp),
            "time_varying" => Ok(Strategy::TimeVarying),
            "none" => Ok(Strategy::None),
            other => Err(Error::ValidationError {
                field: "strategy".into(),
                message: format!(
                    "unknown strategy `{other}` (expected ladp, full_dp, time_varying, or none)"
                ),
            }),
        }
    }
}

/// Per-client privacy hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Privacy budget epsilon.
    pub epsilon: f64,
    /// Failure probability delta.
    pub delta: f64,
    /// Upper clip on the per-layer privacy estimate (B).
    pub kl_bound: f64,
    /// L2-norm threshold for layer selection (R); layers at or above it are
    /// treated as influential and perturbed.
    pub selection_threshold: f64,
    /// Gradient clip bound (G_c).
    pub clip_bound: f64,
    /// Numerical floor on the privacy estimate. Without it an estimate near
    /// zero would send sigma to infinity; the floor is the corresponding
    /// sigma cap and floor hits are visible in every record.
    pub p_floor: f64,
    pub strategy: Strategy,
    /// Decay rate for the time-varying baseline (per round).
    pub decay_rate: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidDelta(self.delta));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidEpsilon(self.epsilon));
        }
        if self.kl_bound <= 0.0 {
            return Err(Error::NonPositiveInput {
                name: "kl_bound",
                value: self.kl_bound,
            });
        }
        if self.p_floor <= 0.0 || self.p_floor >= self.kl_bound {
            return Err(Error::ValidationError {
                field: "dp.p_floor".into(),
                message: format!(
                    "p_floor must lie in (0, kl_bound); got {} with kl_bound {}",
                    self.p_floor, self.kl_bound
                ),
            });
        }
        if self.clip_bound <= 0.0 {
            return Err(Error::NonPositiveClip(self.clip_bound));
        }
        if self.selection_threshold < 0.0 {
            return Err(Error::ValidationError {
                field: "dp.selection_threshold".into(),
                message: format!("must be non-negative, got {}", self.selection_threshold),
            });
        }
        if self.decay_rate < 0.0 {
            return Err(Error::ValidationError {
                field: "dp.decay_rate".into(),
                message: format!("must be non-negative, got {}", self.decay_rate),
            });
        }
        Ok(())
    }
}

/// What happened to one layer during protection.
///
/// For an unselected layer every numeric field is zero. For a layer selected
/// by the adaptive strategy the estimate lies in [p_floor, kl_bound]; the
/// static baselines perturb every layer without estimating, recorded as
/// `selected` with a zero estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNoiseRecord {
    pub layer_id: usize,
    pub selected: bool,
    pub privacy_estimate: f64,
    pub sigma: f64,
    pub noise_l2: f64,
}

impl LayerNoiseRecord {
    fn untouched(layer_id: usize) -> Self {
        Self {
            layer_id,
            selected: false,
            privacy_estimate: 0.0,
            sigma: 0.0,
            noise_l2: 0.0,
        }
    }
}

/// Boundary between the two delta regimes of the noise-constant bound:
/// sqrt(2 / (pi * e^4)).
pub fn c_branch_threshold() -> f64 {
    (2.0 / (std::f64::consts::PI * (4.0f64).exp())).sqrt()
}

/// Minimal admissible Gaussian noise constant `c` for the adaptive
/// mechanism, taken at equality in its defining bound. Linear in the
/// estimate cap `kl_bound`:
///
/// - delta <= sqrt(2/(pi e^4)):
///   c = (sqrt(ln(2/(pi delta^2))) + sqrt(ln(2/(pi delta^2)) + 8 eps)) * B / 4
/// - otherwise: c = (1 + sqrt(1 + 2 eps)) * B / 2
pub fn compute_c(epsilon: f64, delta: f64, kl_bound: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    if kl_bound <= 0.0 {
        return Err(Error::NonPositiveInput {
            name: "kl_bound",
            value: kl_bound,
        });
    }
    let c = if delta <= c_branch_threshold() {
        let log_term = (2.0 / (std::f64::consts::PI * delta * delta)).ln();
        (log_term.sqrt() + (log_term + 8.0 * epsilon).sqrt()) / 4.0 * kl_bound
    } else {
        (1.0 + (1.0 + 2.0 * epsilon).sqrt()) / 2.0 * kl_bound
    };
    Ok(c)
}

/// Noise constant of the classic Gaussian mechanism, sqrt(2 ln(1.25/delta)).
pub fn gaussian_mechanism_c(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt())
}

/// Per-client sensitivity after clipped local training:
/// `delta_f = 2 * eta * local_epochs * clip_bound`.
pub fn sensitivity(eta: f64, local_epochs: u32, clip_bound: f64) -> Result<f64> {
    if eta <= 0.0 {
        return Err(Error::NonPositiveInput {
            name: "eta",
            value: eta,
        });
    }
    if local_epochs == 0 {
        return Err(Error::NonPositiveInput {
            name: "local_epochs",
            value: 0.0,
        });
    }
    if clip_bound <= 0.0 {
        return Err(Error::NonPositiveInput {
            name: "clip_bound",
            value: clip_bound,
        });
    }
    Ok(2.0 * eta * local_epochs as f64 * clip_bound)
}

/// Weight and bias of one dense layer concatenated into a single 1-D tensor,
/// the unit of selection, estimation, and perturbation.
pub fn layer_vector(layer: &DenseLayer) -> Tensor {
    let mut data = Vec::with_capacity(layer.num_params());
    data.extend_from_slice(layer.weight.data());
    data.extend_from_slice(layer.bias.data());
    Tensor::from_vec(data)
}

/// Ids of layers whose combined weight-and-bias L2 norm is at least
/// `threshold`. The boundary counts as selected; a zero threshold selects
/// every layer.
pub fn select_layers(params: &ModelParams, threshold: f64) -> Vec<usize> {
    params
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| layer_vector(l).l2_norm() >= threshold)
        .map(|(id, _)| id)
        .collect()
}

/// Privacy estimate for one layer: KL divergence between the
/// softmax-normalized flattened local and global layers, clamped into
/// [p_floor, kl_bound].
pub fn estimate_privacy(
    local_layer: &Tensor,
    global_layer: &Tensor,
    kl_bound: f64,
    p_floor: f64,
) -> Result<f64> {
    if local_layer.shape() != global_layer.shape() {
        return Err(Error::ShapeMismatch(format!(
            "local layer {:?} vs global layer {:?}",
            local_layer.shape(),
            global_layer.shape()
        )));
    }
    let p = softmax(&local_layer.flatten());
    let q = softmax(&global_layer.flatten());
    let kl = kl_divergence(&p, &q)?;
    Ok(kl.clamp(p_floor, kl_bound))
}

/// Adaptive noise scale `sigma = c * delta_f / (epsilon * p)`: the smaller
/// the privacy estimate, the larger the noise.
pub fn noise_sigma(c: f64, delta_f: f64, epsilon: f64, p: f64) -> Result<f64> {
    for (name, value) in [
        ("c", c),
        ("delta_f", delta_f),
        ("epsilon", epsilon),
        ("p", p),
    ] {
        if value <= 0.0 || !value.is_finite() {
            return Err(Error::NonPositiveInput { name, value });
        }
    }
    Ok(c * delta_f / (epsilon * p))
}

/// Add element-wise N(0, sigma^2) noise to a layer tensor; returns the noisy
/// tensor and the L2 norm of the injected noise.
pub fn inject_noise(layer: &Tensor, sigma: f64, stream: &mut RngStream) -> Result<(Tensor, f64)> {
    if sigma < 0.0 {
        return Err(Error::NegativeStd(sigma));
    }
    if sigma == 0.0 {
        return Ok((layer.clone(), 0.0));
    }
    let noise = sample_gaussian(layer.shape(), 0.0, sigma, stream)?;
    let noisy: Vec<f64> = layer
        .data()
        .iter()
        .zip(noise.data())
        .map(|(w, n)| w + n)
        .collect();
    Ok((Tensor::new(layer.shape().to_vec(), noisy)?, noise.l2_norm()))
}

fn rebuild_layer(template: &DenseLayer, vector: &Tensor) -> DenseLayer {
    let w_len = template.weight.len();
    DenseLayer {
        weight: Tensor::new(
            template.weight.shape().to_vec(),
            vector.data()[..w_len].to_vec(),
        )
        .expect("weight slice"),
        bias: Tensor::new(
            template.bias.shape().to_vec(),
            vector.data()[w_len..].to_vec(),
        )
        .expect("bias slice"),
    }
}

/// Apply the configured protection strategy to a locally trained model,
/// given the most recently received global model as the reference for
/// privacy estimation. Returns the protected model plus one record per
/// layer. Noise streams are derived per layer id, so concurrent clients and
/// arbitrary scheduling produce identical output.
pub fn protect_model(
    local: &ModelParams,
    global_ref: &ModelParams,
    cfg: &DpConfig,
    eta: f64,
    local_epochs: u32,
    round_index: u64,
    stream: &RngStream,
) -> Result<(ModelParams, Vec<LayerNoiseRecord>)> {
    if !local.same_shape(global_ref) {
        return Err(Error::ShapeMismatch(
            "local and global models differ in layout".into(),
        ));
    }
    if cfg.strategy == Strategy::None {
        return Ok((local.clone(), Vec::new()));
    }
    cfg.validate()?;

    let delta_f = sensitivity(eta, local_epochs, cfg.clip_bound)?;
    let noise_root = stream.child(purpose::NOISE);
    let mut layers = Vec::with_capacity(local.layers.len());
    let mut records = Vec::with_capacity(local.layers.len());

    match cfg.strategy {
        Strategy::Ladp => {
            let c = compute_c(cfg.epsilon, cfg.delta, cfg.kl_bound)?;
            for (id, layer) in local.layers.iter().enumerate() {
                let vector = layer_vector(layer);
                if vector.l2_norm() >= cfg.selection_threshold {
                    let global_vector = layer_vector(&global_ref.layers[id]);
                    let p = estimate_privacy(&vector, &global_vector, cfg.kl_bound, cfg.p_floor)?;
                    let sigma = noise_sigma(c, delta_f, cfg.epsilon, p)?;
                    let mut s = noise_root.child(id as u64);
                    let (noisy, noise_l2) = inject_noise(&vector, sigma, &mut s)?;
                    layers.push(rebuild_layer(layer, &noisy));
                    records.push(LayerNoiseRecord {
                        layer_id: id,
                        selected: true,
                        privacy_estimate: p,
                        sigma,
                        noise_l2,
                    });
                } else {
                    layers.push(layer.clone());
                    records.push(LayerNoiseRecord::untouched(id));
                }
            }
        }
        Strategy::FullDp | Strategy::TimeVarying => {
            let base_sigma = gaussian_mechanism_c(cfg.delta)? * delta_f / cfg.epsilon;
            let sigma = match cfg.strategy {
                Strategy::FullDp => base_sigma,
                Strategy::TimeVarying => base_sigma * (-cfg.decay_rate * round_index as f64).exp(),
                _ => unreachable!(),
            };
            for (id, layer) in local.layers.iter().enumerate() {
                let vector = layer_vector(layer);
                let mut s = noise_root.child(id as u64);
                let (noisy, noise_l2) = inject_noise(&vector, sigma, &mut s)?;
                layers.push(rebuild_layer(layer, &noisy));
                records.push(LayerNoiseRecord {
                    layer_id: id,
                    selected: true,
                    privacy_estimate: 0.0,
                    sigma,
                    noise_l2,
                });
            }
        }
        Strategy::None => unreachable!(),
    }

    Ok((ModelParams { layers }, records))
}
