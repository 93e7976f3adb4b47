use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dqs_core::archive::{build_centroids, CvtArchive};
use dqs_core::config::{Algorithm, RunConfig};
use dqs_core::env::EnvKind;
use dqs_core::runner;
use dqs_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dqs",
    version,
    about = "Diverse Quality Species: quality-diversity through independently evolving species"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run DQS and write metrics, stats and archive dumps.
    Run(RunArgs),
    /// Run the Gaussian-mutation MAP-Elites baseline.
    Baseline(RunArgs),
    /// Build CVT centroids and write them as CSV.
    #[command(rename_all = "snake_case")]
    Centroids {
        #[arg(long, default_value_t = 1024)]
        n_cells: usize,
        #[arg(long)]
        bd_dim: Option<usize>,
        #[arg(long, default_value = "point_mass_2d")]
        env: EnvKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert a saved archive.json into the CSV archive dump.
    DumpArchive {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with RunConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags named after RunConfig keys. Unset flags leave the file value.
#[derive(Args, Serialize)]
#[command(rename_all = "snake_case")]
struct Overrides {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_grad: Option<usize>,
    #[arg(long)]
    critic_update_freq: Option<usize>,
    #[arg(long)]
    policy_hidden: Option<usize>,
    #[arg(long)]
    actor_hidden: Option<usize>,
    #[arg(long)]
    critic_hidden: Option<usize>,
    #[arg(long)]
    discriminator_hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    policy_learning_rate: Option<f64>,
    #[arg(long)]
    num_eval: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    exploration_noise: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    noise_clip: Option<f64>,
    #[arg(long)]
    policy_delay: Option<u64>,
    #[arg(long)]
    buffer_size: Option<usize>,
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long)]
    centroid_seed: Option<u64>,
    #[arg(long)]
    centroids_file: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    parallel_eval: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    record_wall_time: Option<bool>,
    #[arg(long)]
    baseline_mutation_std: Option<f64>,
}

fn load_config(args: &RunArgs, algorithm: Algorithm) -> Result<RunConfig> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    let mut overrides =
        toml::Table::try_from(&args.overrides).map_err(|e| Error::ConfigParse(e.to_string()))?;
    overrides.insert(
        "algorithm".into(),
        toml::Value::try_from(algorithm).map_err(|e| Error::ConfigParse(e.to_string()))?,
    );
    RunConfig::layered(&text, overrides)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run(&args, Algorithm::Dqs),
        Command::Baseline(args) => run(&args, Algorithm::MapElitesBaseline),
        Command::Centroids {
            n_cells,
            bd_dim,
            env,
            seed,
            output,
        } => {
            let centroids = build_centroids(n_cells, bd_dim.unwrap_or(env.spec().bd_dim), seed)?;
            let mut buf = Vec::new();
            centroids.write_csv(&mut buf).expect("writing to memory");
            emit(output, buf)
        }
        Command::DumpArchive { input, output } => {
            let text = fs::read_to_string(&input).map_err(|e| Error::Io {
                path: input.clone(),
                source: e,
            })?;
            let archive: CvtArchive =
                serde_json::from_str(&text).map_err(|e| Error::Malformed {
                    what: "archive json",
                    reason: e.to_string(),
                })?;
            let mut buf = Vec::new();
            archive.write_csv(&mut buf).expect("writing to memory");
            emit(output, buf)
        }
    }
}

fn run(args: &RunArgs, algorithm: Algorithm) -> Result<()> {
    let config = load_config(args, algorithm)?;
    let out_dir = config.out_dir.clone().expect("--out-dir is required");
    let record = runner::run(&config)?;
    record.write_to(&out_dir)?;
    if let Some(last) = record.final_metrics() {
        println!(
            "{} evaluations, qd_score {}, coverage {}, outputs in {}",
            last.eval_count,
            last.qd_score,
            last.coverage,
            out_dir.display()
        );
    }
    Ok(())
}

fn emit(output: Option<PathBuf>, bytes: Vec<u8>) -> Result<()> {
    match output {
        Some(path) => fs::write(&path, bytes).map_err(|e| Error::Io { path, source: e }),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
