use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ladp::accountant::{convergence_bound, eta_window, ConvergenceConstants, EtaWindow};
use ladp::config::load_config;
use ladp::data::{generate_synthetic, write_csv_labeled};
use ladp::dp::Strategy;
use ladp::experiment::{compare_strategies, run_experiment};

#[derive(Parser)]
#[command(
    name = "ladp",
    version,
    about = "Layer-wise adaptive LDP federated-learning benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment from a JSON config.
    Run(RunArgs),
    /// Cartesian sweep over strategies, privacy budgets, and seeds.
    Sweep(SweepArgs),
    /// Print the convergence bound and admissible learning-rate window.
    Bound(BoundArgs),
    /// Generate a synthetic labeled-CSV dataset.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated strategies (ladp, full_dp, time_varying, none).
    #[arg(long, value_delimiter = ',', required = true)]
    strategies: Vec<Strategy>,
    /// Comma-separated privacy budgets.
    #[arg(long, value_delimiter = ',', required = true)]
    epsilons: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct BoundArgs {
    /// Smoothness constant.
    #[arg(long = "L")]
    smoothness: f64,
    /// Polyak-Lojasiewicz constant (must exceed L).
    #[arg(long)]
    mu: f64,
    /// Gradient clip bound.
    #[arg(long)]
    gc: f64,
    /// Per-layer noise bound.
    #[arg(long)]
    nc: f64,
    /// Layer count.
    #[arg(long = "J")]
    layers: u32,
    #[arg(long)]
    eta: f64,
    /// Round count.
    #[arg(long)]
    t: u64,
    /// Initial optimality gap.
    #[arg(long)]
    gap: f64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long = "per-class")]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    separation: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn init_thread_pool() {
    // LADP_THREADS caps the worker count; results never depend on it.
    if let Ok(v) = std::env::var("LADP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn execute(cli: Cli) -> ladp::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = load_config(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let out_dir = args.output.unwrap_or_else(|| cfg.output_path.clone());
            let artifacts = run_experiment(&cfg, &out_dir)?;
            println!("metrics: {}", artifacts.metrics_path.display());
            println!("summary: {}", artifacts.summary_path.display());
            println!(
                "final accuracy {:.4}, noise scale {:.3}, cumulative epsilon {:.4}",
                artifacts.summary.final_accuracy,
                artifacts.summary.noise_scale,
                artifacts.summary.final_cumulative_epsilon
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args.config)?;
            let out_dir = args.output.unwrap_or_else(|| cfg.output_path.clone());
            let table = compare_strategies(
                &cfg,
                &args.strategies,
                &args.epsilons,
                &args.seeds,
                &out_dir,
            )?;
            print!("{}", table.render());
            println!("per-run rows: {}", out_dir.join("sweep_runs.csv").display());
            Ok(())
        }
        Command::Bound(args) => {
            let consts = ConvergenceConstants {
                smoothness: args.smoothness,
                pl_constant: args.mu,
                clip_bound: args.gc,
                noise_clip: args.nc,
                layers: args.layers,
                eta: args.eta,
            };
            match eta_window(&consts)? {
                EtaWindow::Feasible { lower, upper } => {
                    println!("eta window: ({lower}, {upper})");
                }
                EtaWindow::Infeasible => println!("eta window: infeasible"),
            }
            let out = convergence_bound(&consts, args.t, args.gap)?;
            println!("psi   = {:.6}", out.psi);
            println!("phi   = {:.6}", out.phi);
            println!("ratio = {:.6}", out.ratio);
            if !out.ratio_in_unit_interval {
                println!("warning: contraction ratio lies outside (0, 1); the bound diverges");
            }
            println!("bound after {} rounds = {:.6}", args.t, out.bound);
            Ok(())
        }
        Command::GenData(args) => {
            let ds = generate_synthetic(
                args.classes,
                args.per_class,
                args.dim,
                args.separation,
                args.seed,
            )?;
            if let Some(parent) = args.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            write_csv_labeled(&ds, &args.out)?;
            println!(
                "wrote {} samples ({} classes, dim {}) to {}",
                ds.len(),
                ds.num_classes,
                ds.input_dim,
                args.out.display()
            );
            Ok(())
        }
    }
}
