//! Benchmark harness: executes configured runs, streams one CSV row per
//! round, writes a JSON summary per run, and sweeps strategy/epsilon/seed
//! grids into a comparison table.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dp::Strategy;
use crate::error::{Error, Result};
use crate::fl::{floor_hits, resolve_dataset, run_training, selection_frequency, RoundRecord};

/// One flattened round of metrics plus the run coordinates. This is exactly
/// the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub strategy: String,
    pub epsilon: f64,
    pub seed: u64,
    pub round: u64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Active client ids joined with ';'.
    pub active_clients: String,
    /// Sum of per-layer injected-noise norms this round.
    pub total_noise_l2: f64,
    /// Norm of the concatenation of all noise injected this round.
    pub round_noise_l2: f64,
    pub cumulative_epsilon: f64,
    /// Layer records marked selected this round.
    pub selected_layers: u64,
    /// Selected layers whose privacy estimate sat on the floor.
    pub floor_hits: u64,
}

impl MetricsRow {
    pub fn from_record(cfg: &ExperimentConfig, record: &RoundRecord) -> Self {
        let selected = record
            .per_client_records
            .iter()
            .flat_map(|c| c.layers.iter())
            .filter(|l| l.selected)
            .count() as u64;
        let p_floor = cfg.dp_config().p_floor;
        let floors = record
            .per_client_records
            .iter()
            .flat_map(|c| c.layers.iter())
            .filter(|l| l.selected && l.privacy_estimate > 0.0 && l.privacy_estimate <= p_floor)
            .count() as u64;
        MetricsRow {
            strategy: cfg.dp.strategy.as_str().to_string(),
            epsilon: cfg.dp.epsilon,
            seed: cfg.seed,
            round: record.round,
            test_accuracy: record.test_accuracy,
            test_loss: record.test_loss,
            active_clients: record
                .active_clients
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(";"),
            total_noise_l2: record.total_noise_l2,
            round_noise_l2: record.concat_noise_l2(),
            cumulative_epsilon: record.cumulative_epsilon,
            selected_layers: selected,
            floor_hits: floors,
        }
    }
}

/// End-of-run summary written next to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub epsilon: f64,
    pub seed: u64,
    pub rounds: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// Sum over rounds of the per-round total (sum of norms).
    pub total_noise_l2: f64,
    /// Sum over rounds of the per-round concatenated-noise norm; the
    /// headline noise-scale metric.
    pub noise_scale: f64,
    pub final_cumulative_epsilon: f64,
    pub max_layer_noise_l2: f64,
    pub layer_selection_frequency: Vec<f64>,
    pub floor_hit_count: u64,
    pub wall_time_secs: f64,
}

/// Paths produced by one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: RunSummary,
}

fn run_file_stem(cfg: &ExperimentConfig) -> String {
    format!(
        "{}_eps{}_seed{}",
        cfg.dp.strategy.as_str(),
        cfg.dp.epsilon,
        cfg.seed
    )
}

/// Execute one configured run, streaming `<stem>_metrics.csv` (flushed every
/// round) and writing `<stem>_summary.json` at the end.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(output_dir)?;
    let stem = run_file_stem(cfg);
    let metrics_path = output_dir.join(format!("{stem}_metrics.csv"));
    let summary_path = output_dir.join(format!("{stem}_summary.json"));

    let dataset = resolve_dataset(cfg)?;
    let file = fs::File::create(&metrics_path)?;
    let mut writer = csv::Writer::from_writer(file);

    let started = Instant::now();
    let mut write_err: Option<Error> = None;
    let output = run_training(cfg, &dataset, |record| {
        if write_err.is_some() {
            return;
        }
        let row = MetricsRow::from_record(cfg, record);
        if let Err(e) = writer
            .serialize(&row)
            .and_then(|_| writer.flush().map_err(Into::into))
        {
            write_err = Some(Error::Io(std::io::Error::other(e.to_string())));
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let wall_time_secs = started.elapsed().as_secs_f64();

    let last = output.records.last();
    let summary = RunSummary {
        strategy: cfg.dp.strategy.as_str().to_string(),
        epsilon: cfg.dp.epsilon,
        seed: cfg.seed,
        rounds: cfg.rounds,
        final_accuracy: last.map_or(0.0, |r| r.test_accuracy),
        final_loss: last.map_or(0.0, |r| r.test_loss),
        total_noise_l2: output.records.iter().map(|r| r.total_noise_l2).sum(),
        noise_scale: output
            .records
            .iter()
            .map(RoundRecord::concat_noise_l2)
            .sum(),
        final_cumulative_epsilon: output.accountant.cumulative_epsilon,
        max_layer_noise_l2: output.max_layer_noise_l2,
        layer_selection_frequency: selection_frequency(&output.records, output.num_layers),
        floor_hit_count: floor_hits(&output.records, cfg.p_floor()) as u64,
        wall_time_secs,
    };
    let mut f = fs::File::create(&summary_path)?;
    writeln!(
        f,
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    )?;

    Ok(RunArtifacts {
        metrics_path,
        summary_path,
        summary,
    })
}

/// One (strategy, epsilon) cell of a sweep, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub strategy: String,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub mean_final_accuracy: f64,
    pub min_final_accuracy: f64,
    pub max_final_accuracy: f64,
    pub mean_noise_scale: f64,
    pub final_cumulative_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub cells: Vec<ComparisonCell>,
    pub runs: Vec<RunSummary>,
}

impl ComparisonTable {
    pub fn cell(&self, strategy: Strategy, epsilon: f64) -> Option<&ComparisonCell> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy.as_str() && c.epsilon == epsilon)
    }

    /// Human-readable fixed-width table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>8} {:>22} {:>16} {:>14}\n",
            "strategy", "epsilon", "final acc (mean+-rng)", "noise scale", "cumulative eps"
        ));
        for c in &self.cells {
            let range = (c.max_final_accuracy - c.min_final_accuracy) / 2.0;
            out.push_str(&format!(
                "{:<14} {:>8.3} {:>14.4} +-{:.4} {:>16.3} {:>14.4}\n",
                c.strategy,
                c.epsilon,
                c.mean_final_accuracy,
                range,
                c.mean_noise_scale,
                c.final_cumulative_epsilon
            ));
        }
        out
    }
}

/// Cartesian sweep over strategies x epsilons x seeds. Every run reuses the
/// base config with only those three fields changed. Writes the per-run
/// summaries as `sweep_runs.csv` plus a `sweep_summary.json` of the cells.
pub fn compare_strategies(
    base: &ExperimentConfig,
    strategies: &[Strategy],
    epsilons: &[f64],
    seeds: &[u64],
    output_dir: &Path,
) -> Result<ComparisonTable> {
    if strategies.is_empty() {
        return Err(Error::ValidationError {
            field: "strategies".into(),
            message: "strategy list is empty".into(),
        });
    }
    if epsilons.is_empty() || seeds.is_empty() {
        return Err(Error::ValidationError {
            field: if epsilons.is_empty() {
                "epsilons"
            } else {
                "seeds"
            }
            .into(),
            message: "list is empty".into(),
        });
    }

    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for &strategy in strategies {
        for &epsilon in epsilons {
            let mut cell_runs = Vec::new();
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.dp.strategy = strategy;
                cfg.dp.epsilon = epsilon;
                cfg.seed = seed;
                let artifacts = run_experiment(&cfg, output_dir)?;
                cell_runs.push(artifacts.summary.clone());
                runs.push(artifacts.summary);
            }
            let accs: Vec<f64> = cell_runs.iter().map(|r| r.final_accuracy).collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            cells.push(ComparisonCell {
                strategy: strategy.as_str().to_string(),
                epsilon,
                seeds: seeds.to_vec(),
                mean_final_accuracy: mean,
                min_final_accuracy: accs.iter().cloned().fold(f64::INFINITY, f64::min),
                max_final_accuracy: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean_noise_scale: cell_runs.iter().map(|r| r.noise_scale).sum::<f64>()
                    / cell_runs.len() as f64,
                final_cumulative_epsilon: cell_runs
                    .first()
                    .map_or(0.0, |r| r.final_cumulative_epsilon),
            });
        }
    }

    let table = ComparisonTable { cells, runs };
    fs::create_dir_all(output_dir)?;
    let mut writer = csv::Writer::from_path(output_dir.join("sweep_runs.csv"))
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    writer
        .write_record([
            "strategy",
            "epsilon",
            "seed",
            "final_accuracy",
            "final_loss",
            "noise_scale",
            "final_cumulative_epsilon",
            "floor_hit_count",
        ])
        .map_err(to_io)?;
    for run in &table.runs {
        writer
            .write_record([
                run.strategy.clone(),
                run.epsilon.to_string(),
                run.seed.to_string(),
                run.final_accuracy.to_string(),
                run.final_loss.to_string(),
                run.noise_scale.to_string(),
                run.final_cumulative_epsilon.to_string(),
                run.floor_hit_count.to_string(),
            ])
            .map_err(to_io)?;
    }
    writer
        .flush()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut f = fs::File::create(output_dir.join("sweep_summary.json"))?;
    writeln!(
        f,
        "{}",
        serde_json::to_string_pretty(&table.cells).expect("cells serialize")
    )?;
    Ok(table)
}
