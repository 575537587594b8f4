//! Synchronous federated training: client sampling, clipped local SGD,
//! layer-wise protection before upload, and dataset-size-weighted
//! aggregation. Client work inside a round is embarrassingly parallel;
//! all randomness is path-keyed so scheduling never changes results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::AccountantState;
use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{generate_synthetic, load_csv_labeled, load_idx_pair, Dataset};
use crate::dp::{protect_model, DpConfig, LayerNoiseRecord};
use crate::error::{Error, Result};
use crate::model::{backward, clip_gradients, evaluate, sgd_step, ModelParams};
use crate::partition::partition_data;
use crate::rng::{purpose, RngStream};

/// Local-training hyperparameters shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub eta: f64,
    pub local_epochs: u32,
    pub batch_size: usize,
}

/// One client: its shard of the data, its privacy settings, its stream, and
/// its copy of the most recently distributed global model.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub dataset: Dataset,
    pub model: ModelParams,
    pub dp: DpConfig,
    pub stream: RngStream,
}

/// Uniform client activation without replacement; returns
/// round(n * rate).max(1) ids in ascending order.
pub fn sample_clients(
    n: usize,
    activation_rate: f64,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if !(activation_rate > 0.0 && activation_rate <= 1.0) {
        return Err(Error::InvalidRate(activation_rate));
    }
    let count = ((n as f64 * activation_rate).round() as usize).clamp(1, n);
    Ok(stream.sample_indices(n, count))
}

/// One activation of one client: reset to the received global model, run
/// `local_epochs` of clipped mini-batch SGD over a per-epoch shuffle, then
/// protect the result. Only the protected model leaves this function.
pub fn client_round(
    state: &ClientState,
    global_model: &ModelParams,
    round: u64,
    hyper: &Hyper,
) -> Result<(ModelParams, Vec<LayerNoiseRecord>)> {
    if state.dataset.is_empty() {
        return Err(Error::EmptyClientDataset(state.client_id));
    }
    let round_stream = state.stream.child(round);
    let mut local = global_model.clone();

    for epoch in 0..hyper.local_epochs {
        let mut order: Vec<usize> = (0..state.dataset.len()).collect();
        round_stream
            .child(purpose::SHUFFLE)
            .child(epoch as u64)
            .shuffle(&mut order);
        for chunk in order.chunks(hyper.batch_size) {
            let batch = state.dataset.batch_of(chunk)?;
            let grads = backward(&local, &batch)?;
            let clipped = clip_gradients(&grads, state.dp.clip_bound)?;
            local = sgd_step(&local, &clipped, hyper.eta)?;
        }
    }

    protect_model(
        &local,
        global_model,
        &state.dp,
        hyper.eta,
        hyper.local_epochs,
        round,
        &round_stream,
    )
}

/// Dataset-size-weighted mean of the uploaded models. Computed anchored at
/// the first upload, `first + sum_i w_i (x_i - first)`, so aggregating
/// identical models returns that model bit-for-bit.
pub fn aggregate(collection: &[(usize, ModelParams, usize)]) -> Result<ModelParams> {
    let (_, first, _) = collection.first().ok_or(Error::EmptyCollection)?;
    let total: usize = collection.iter().map(|(_, _, size)| size).sum();
    if total == 0 {
        return Err(Error::EmptyCollection);
    }
    let mut layers = first.layers.clone();
    for (client_id, model, size) in collection {
        if !model.same_shape(first) {
            return Err(Error::ShapeMismatch(format!(
                "client {client_id} uploaded a model with a different layout"
            )));
        }
        let weight = *size as f64 / total as f64;
        for ((acc, src), anchor) in layers.iter_mut().zip(&model.layers).zip(&first.layers) {
            for ((a, s), f) in acc
                .weight
                .data_mut()
                .iter_mut()
                .zip(src.weight.data())
                .zip(anchor.weight.data())
            {
                *a += weight * (s - f);
            }
            for ((a, s), f) in acc
                .bias
                .data_mut()
                .iter_mut()
                .zip(src.bias.data())
                .zip(anchor.bias.data())
            {
                *a += weight * (s - f);
            }
        }
    }
    Ok(ModelParams { layers })
}

/// Layer records of one client for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecords {
    pub client_id: usize,
    pub layers: Vec<LayerNoiseRecord>,
}

/// Everything measured about one global round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub active_clients: Vec<usize>,
    /// Sum of the per-layer injected-noise norms this round.
    pub total_noise_l2: f64,
    pub cumulative_epsilon: f64,
    pub per_client_records: Vec<ClientRoundRecords>,
}

impl RoundRecord {
    /// L2 norm of the concatenation of every noise tensor injected this
    /// round (the root of the sum of squared per-layer norms).
    pub fn concat_noise_l2(&self) -> f64 {
        self.per_client_records
            .iter()
            .flat_map(|c| c.layers.iter())
            .map(|l| l.noise_l2 * l.noise_l2)
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
    pub accountant: AccountantState,
    pub num_layers: usize,
    /// Largest single-layer noise norm observed, reported so a consistent
    /// per-layer noise bound can be chosen for the convergence calculator.
    pub max_layer_noise_l2: f64,
}

/// Materialize the configured dataset source.
pub fn resolve_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic {
            classes,
            per_class,
            dim,
            separation,
            seed,
        } => generate_synthetic(
            *classes,
            *per_class,
            *dim,
            *separation,
            seed.unwrap_or(cfg.seed),
        ),
        DatasetSource::CsvLabeled { path } => load_csv_labeled(path),
        DatasetSource::IdxPair { images, labels } => load_idx_pair(images, labels),
    }
}

/// Run the full synchronous protocol for `cfg.rounds` rounds, invoking
/// `on_round` after each round (metrics streaming). The dataset is split
/// into a stratified 10% held-out test set and a per-client partition.
pub fn run_training(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.model.input_dim() != dataset.input_dim || cfg.model.num_classes() != dataset.num_classes
    {
        return Err(Error::DimensionMismatch(format!(
            "model [{} -> {}] vs dataset [{} -> {}]",
            cfg.model.input_dim(),
            cfg.model.num_classes(),
            dataset.input_dim,
            dataset.num_classes
        )));
    }

    let root = RngStream::new(cfg.seed);
    let (train, test) = dataset.stratified_split(0.1, &root);
    // A single client degenerates to centralized training; partitioning
    // (and HBC isolation) only applies from two clients up.
    let shards = if cfg.num_clients == 1 {
        vec![train.clone()]
    } else {
        partition_data(&train, &cfg.partition_spec(), cfg.seed)?
    };
    let dp = cfg.dp_config();
    let hyper = Hyper {
        eta: cfg.learning_rate,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
    };

    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .enumerate()
        .map(|(client_id, shard)| ClientState {
            client_id,
            dataset: shard,
            model: ModelParams { layers: Vec::new() },
            dp: dp.clone(),
            stream: root.child(purpose::CLIENT).child(client_id as u64),
        })
        .collect();
    for c in &clients {
        if c.dataset.is_empty() {
            return Err(Error::EmptyClientDataset(c.client_id));
        }
    }

    let mut global = cfg.model.init_params(&root);
    for c in clients.iter_mut() {
        c.model = global.clone();
    }

    // Budget per round: the per-step sampling fraction is batch over the
    // mean client shard size, capped at one.
    let mean_shard = train.len() as f64 / cfg.num_clients as f64;
    let q = (cfg.batch_size as f64 / mean_shard).min(1.0);
    let mut accountant = AccountantState::new(cfg.dp.epsilon, cfg.delta(), q)?;

    let sampling_stream = root.child(purpose::SAMPLING);
    let mut records = Vec::with_capacity(cfg.rounds as usize);
    let mut max_layer_noise = 0.0f64;

    for round in 0..cfg.rounds {
        let active = sample_clients(
            cfg.num_clients,
            cfg.activation_rate,
            &mut sampling_stream.child(round),
        )?;

        let uploads: Vec<(usize, ModelParams, usize, Vec<LayerNoiseRecord>)> = active
            .par_iter()
            .map(|&id| {
                let client = &clients[id];
                client_round(client, &global, round, &hyper)
                    .map(|(model, recs)| (id, model, client.dataset.len(), recs))
            })
            .collect::<Result<_>>()?;

        let collection: Vec<(usize, ModelParams, usize)> = uploads
            .iter()
            .map(|(id, model, size, _)| (*id, model.clone(), *size))
            .collect();
        global = aggregate(&collection)?;
        for c in clients.iter_mut() {
            c.model = global.clone();
        }

        accountant = accountant.accumulate();
        let (test_accuracy, test_loss) = evaluate(&global, &test)?;

        let per_client_records: Vec<ClientRoundRecords> = uploads
            .into_iter()
            .map(|(client_id, _, _, layers)| ClientRoundRecords { client_id, layers })
            .collect();
        let total_noise_l2: f64 = per_client_records
            .iter()
            .flat_map(|c| c.layers.iter())
            .map(|l| l.noise_l2)
            .sum();
        max_layer_noise = per_client_records
            .iter()
            .flat_map(|c| c.layers.iter())
            .map(|l| l.noise_l2)
            .fold(max_layer_noise, f64::max);

        let record = RoundRecord {
            round,
            test_accuracy,
            test_loss,
            active_clients: active,
            total_noise_l2,
            cumulative_epsilon: accountant.cumulative_epsilon,
            per_client_records,
        };
        on_round(&record);
        records.push(record);
    }

    let num_layers = global.num_layers();
    Ok(RunOutput {
        records,
        final_model: global,
        accountant,
        num_layers,
        max_layer_noise_l2: max_layer_noise,
    })
}

/// Fraction of rounds in which each layer was selected for noise, averaged
/// over the active clients.
pub fn selection_frequency(records: &[RoundRecord], num_layers: usize) -> Vec<f64> {
    let mut selected = vec![0usize; num_layers];
    let mut seen = vec![0usize; num_layers];
    for round in records {
        for client in &round.per_client_records {
            for layer in &client.layers {
                seen[layer.layer_id] += 1;
                if layer.selected {
                    selected[layer.layer_id] += 1;
                }
            }
        }
    }
    selected
        .iter()
        .zip(&seen)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s as f64 / n as f64 })
        .collect()
}

/// Count of floor hits (estimates clamped up to p_floor) across a run.
/// Records with a zero estimate were never estimated (static baselines)
/// and do not count.
pub fn floor_hits(records: &[RoundRecord], p_floor: f64) -> usize {
    records
        .iter()
        .flat_map(|r| r.per_client_records.iter())
        .flat_map(|c| c.layers.iter())
        .filter(|l| l.selected && l.privacy_estimate > 0.0 && l.privacy_estimate <= p_floor)
        .count()
}
