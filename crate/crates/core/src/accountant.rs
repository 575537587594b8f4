//! Sequential privacy-budget accounting by naive composition, plus the
//! convergence-bound calculator for clipped, noise-bounded training under
//! smoothness and Polyak-Lojasiewicz assumptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running budget of one training run. Each round of subsampled Gaussian
/// noise costs (q * epsilon, q * delta); the cumulative totals are the plain
/// sums, recomputed as `q * rounds * epsilon` in a fixed order so the
/// linear-composition identity holds bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub per_round_epsilon: f64,
    pub per_round_delta: f64,
    pub sampling_q: f64,
    pub rounds_elapsed: u64,
    pub cumulative_epsilon: f64,
    pub cumulative_delta: f64,
}

impl AccountantState {
    pub fn new(per_round_epsilon: f64, per_round_delta: f64, sampling_q: f64) -> Result<Self> {
        if per_round_epsilon <= 0.0 || !(per_round_delta > 0.0 && per_round_delta < 1.0) {
            return Err(Error::InvalidBudget {
                epsilon: per_round_epsilon,
                delta: per_round_delta,
            });
        }
        if !(sampling_q > 0.0 && sampling_q <= 1.0) {
            return Err(Error::InvalidRate(sampling_q));
        }
        Ok(Self {
            per_round_epsilon,
            per_round_delta,
            sampling_q,
            rounds_elapsed: 0,
            cumulative_epsilon: 0.0,
            cumulative_delta: 0.0,
        })
    }

    /// Advance one round: the totals become q * t * eps and q * t * delta.
    pub fn accumulate(&self) -> AccountantState {
        let rounds = self.rounds_elapsed + 1;
        AccountantState {
            rounds_elapsed: rounds,
            cumulative_epsilon: self.sampling_q * rounds as f64 * self.per_round_epsilon,
            cumulative_delta: self.sampling_q * rounds as f64 * self.per_round_delta,
            ..*self
        }
    }
}

/// Noise scale that spends exactly (epsilon, delta) per release under the
/// Gaussian mechanism with unit sensitivity: sqrt(2 ln(1.25/delta)) / eps.
pub fn sigma_from_budget(epsilon: f64, delta: f64) -> Result<f64> {
    if epsilon <= 0.0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidBudget { epsilon, delta });
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Subsampling fraction q = batch / dataset.
pub fn sampling_fraction(batch_size: usize, dataset_size: usize) -> Result<f64> {
    if batch_size == 0 || batch_size > dataset_size {
        return Err(Error::InvalidSizes {
            batch: batch_size,
            dataset: dataset_size,
        });
    }
    Ok(batch_size as f64 / dataset_size as f64)
}

/// Bound on the total injected noise of a J-layer model when each layer's
/// noise is bounded by `per_layer_bound`.
pub fn noise_bound(layers: u32, per_layer_bound: f64) -> f64 {
    layers as f64 * per_layer_bound
}

/// Constants of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    /// Smoothness constant L.
    pub smoothness: f64,
    /// Polyak-Lojasiewicz constant mu; must exceed L.
    pub pl_constant: f64,
    /// Gradient clip bound G_c.
    pub clip_bound: f64,
    /// Per-layer noise bound N_c.
    pub noise_clip: f64,
    /// Layer count J.
    pub layers: u32,
    /// Learning rate eta.
    pub eta: f64,
}

impl ConvergenceConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.pl_constant > self.smoothness) || self.smoothness <= 0.0 {
            return Err(Error::InvalidConstants(format!(
                "need mu > L > 0, got L = {}, mu = {}",
                self.smoothness, self.pl_constant
            )));
        }
        if self.clip_bound <= 0.0 || self.layers == 0 || self.noise_clip < 0.0 {
            return Err(Error::InvalidConstants(format!(
                "need clip_bound > 0, layers > 0, noise_clip >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Admissible learning-rate window for the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaWindow {
    /// Open interval (lower, upper), lower already clamped at zero.
    Feasible { lower: f64, upper: f64 },
    /// The interval is empty after clamping.
    Infeasible,
}

/// Window: upper = 2 J N_c / G_c, lower = upper - (mu - L) / (L G_c mu),
/// clamped below at zero.
pub fn eta_window(consts: &ConvergenceConstants) -> Result<EtaWindow> {
    consts.validate()?;
    let upper = 2.0 * consts.layers as f64 * consts.noise_clip / consts.clip_bound;
    let raw_lower = upper
        - (consts.pl_constant - consts.smoothness)
            / (consts.smoothness * consts.clip_bound * consts.pl_constant);
    let lower = raw_lower.max(0.0);
    if upper <= lower {
        Ok(EtaWindow::Infeasible)
    } else {
        Ok(EtaWindow::Feasible { lower, upper })
    }
}

/// Output of the convergence-bound calculator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    pub bound: f64,
    pub ratio: f64,
    pub psi: f64,
    pub phi: f64,
    /// The analysis asserts the contraction ratio lies in (0, 1); for some
    /// admissible constants it does not, so the calculator reports rather
    /// than rejects.
    pub ratio_in_unit_interval: bool,
}

/// Expected optimality gap after `t` rounds:
///
/// bound = ratio^t * initial_gap + (psi + 2 phi)/2 * sum_{n<t} ratio^n
///
/// with psi = 2 J N_c - eta G_c, phi = L eta^2 G_c^2 / 2 + 2 L J^2 N_c^2,
/// and ratio = (L + psi mu L) / mu. Evaluated by iterating
/// `b <- ratio * b + (psi + 2 phi)/2`, which keeps the one-step recurrence
/// exact. Requires eta to lie inside the admissible window.
pub fn convergence_bound(
    consts: &ConvergenceConstants,
    t: u64,
    initial_gap: f64,
) -> Result<ConvergenceBound> {
    if initial_gap < 0.0 {
        return Err(Error::InvalidConstants(format!(
            "initial gap must be non-negative, got {initial_gap}"
        )));
    }
    let window = eta_window(consts)?;
    match window {
        EtaWindow::Feasible { lower, upper } => {
            if !(consts.eta > lower && consts.eta < upper) {
                return Err(Error::EtaOutOfWindow {
                    eta: consts.eta,
                    lower,
                    upper,
                });
            }
        }
        EtaWindow::Infeasible => {
            return Err(Error::EtaOutOfWindow {
                eta: consts.eta,
                lower: 0.0,
                upper: 0.0,
            });
        }
    }

    let j = consts.layers as f64;
    let l = consts.smoothness;
    let psi = 2.0 * j * consts.noise_clip - consts.eta * consts.clip_bound;
    let phi = l * consts.eta * consts.eta * consts.clip_bound * consts.clip_bound / 2.0
        + 2.0 * l * j * j * consts.noise_clip * consts.noise_clip;
    let ratio = (l + psi * consts.pl_constant * l) / consts.pl_constant;
    let step = (psi + 2.0 * phi) / 2.0;

    let mut bound = initial_gap;
    for _ in 0..t {
        bound = ratio * bound + step;
    }

    Ok(ConvergenceBound {
        bound,
        ratio,
        psi,
        phi,
        ratio_in_unit_interval: ratio > 0.0 && ratio < 1.0,
    })
}
