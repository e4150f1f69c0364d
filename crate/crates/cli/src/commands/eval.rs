//! `stegtok eval`: throughput and robustness grids, and the voting curve.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;

use stegtok_core::eval::{
    eval_robustness_with_jobs, eval_throughput_with_jobs, robustness_csv, simulate_voting_error,
    throughput_csv, voting_error_curve, ExperimentConfig,
};
use stegtok_core::rng::task_rng;
use stegtok_core::BucketPartition;

use crate::fail::{usage, CliError, CmdResult};
use crate::settings::{emit, write_manifest, FileConfig};
use crate::specs::{build_partition, load_model, parse_model_spec, parse_partition_spec};

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Encode/decode accuracy over a (prompt x key) grid.
    Throughput(GridArgs),
    /// Offset-sweep decoding over a (prompt x key) grid.
    Robustness(GridArgs),
    /// Analytic (and optionally simulated) majority-voting error.
    VotingCurve(VotingCurveArgs),
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Experiment TOML: prompts, keys, generation, n_votes, offsets,
    /// perturbations. The partition comes from --partition unless the file
    /// carries its own.
    #[arg(long)]
    pub experiment: PathBuf,

    /// Model spec: toy:demo | toy:<path> | adapter:<host:port>.
    #[arg(long)]
    pub model: Option<String>,

    /// Partition spec: parity | modulo:<B> | <path.json>.
    #[arg(long)]
    pub partition: Option<String>,

    /// Override the experiment's seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads; any value yields identical results.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Also write the JSON report to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write the per-cell table as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,

    /// Write a reproduction manifest to this path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VotingCurveArgs {
    /// Per-bit flip probability in [0, 1].
    #[arg(long)]
    pub flip_probability: f64,

    /// Odd vote counts, comma-separated.
    #[arg(long, default_value = "1,3,5")]
    pub votes: String,

    /// Also Monte Carlo simulate each vote count over this many bits.
    #[arg(long)]
    pub simulate_bits: Option<usize>,

    /// Seed for the simulation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also write the JSON result to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(command: &EvalCommand, file: &FileConfig) -> CmdResult {
    match command {
        EvalCommand::Throughput(args) => run_grid(args, file, Grid::Throughput),
        EvalCommand::Robustness(args) => run_grid(args, file, Grid::Robustness),
        EvalCommand::VotingCurve(args) => run_voting_curve(args),
    }
}

enum Grid {
    Throughput,
    Robustness,
}

/// Loads the experiment TOML, injecting the CLI-resolved partition when the
/// file does not define one and overriding the seed when --seed is given.
fn load_experiment(
    path: &Path,
    partition: &BucketPartition,
    seed: Option<u64>,
) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read experiment file {}: {e}", path.display())))?;
    let mut doc: toml::Table = toml::from_str(&text)
        .map_err(|e| usage(format!("experiment file {}: {e}", path.display())))?;
    if !doc.contains_key("partition") {
        let value = toml::Value::try_from(partition)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("partition to TOML: {e}")))?;
        doc.insert("partition".to_string(), value);
    }
    if let Some(seed) = seed {
        let generation = doc
            .entry("generation".to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match generation {
            toml::Value::Table(table) => {
                table.insert("seed".to_string(), toml::Value::Integer(seed as i64));
            }
            _ => return Err(usage("experiment 'generation' must be a table")),
        }
    }
    let config: ExperimentConfig = doc
        .try_into()
        .map_err(|e| usage(format!("experiment file {}: {e}", path.display())))?;
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn run_grid(args: &GridArgs, file: &FileConfig, grid: Grid) -> CmdResult {
    if args.jobs == 0 {
        return Err(usage("--jobs must be >= 1"));
    }
    let model_raw = args
        .model
        .as_deref()
        .or(file.model.as_deref())
        .unwrap_or("toy:demo");
    let partition_raw = args
        .partition
        .as_deref()
        .or(file.partition.as_deref())
        .unwrap_or("parity");
    let lm = load_model(&parse_model_spec(model_raw)?)?;
    let partition = build_partition(&parse_partition_spec(partition_raw)?, lm.vocab())?;
    let config = load_experiment(&args.experiment, &partition, args.seed)?;
    let violations = config.partition.validate(lm.vocab());
    if !violations.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "experiment partition does not fit the model vocabulary: {}",
            violations[0]
        )));
    }

    let (name, report_json, csv_text, seed) = match grid {
        Grid::Throughput => {
            let report = eval_throughput_with_jobs(&config, lm.as_ref(), args.jobs)?;
            (
                "eval throughput",
                serde_json::to_string_pretty(&report)?,
                throughput_csv(&report)?,
                report.seed,
            )
        }
        Grid::Robustness => {
            let report = eval_robustness_with_jobs(&config, lm.as_ref(), args.jobs)?;
            (
                "eval robustness",
                serde_json::to_string_pretty(&report)?,
                robustness_csv(&report)?,
                report.seed,
            )
        }
    };
    emit(&report_json, args.out.as_deref())?;
    if let Some(path) = &args.csv {
        fs::write(path, &csv_text)?;
    }
    if let Some(path) = &args.manifest {
        let outputs = args
            .out
            .iter()
            .chain(args.csv.iter())
            .map(|p| p.display().to_string())
            .collect();
        write_manifest(
            path,
            name,
            &config,
            seed,
            vec![args.experiment.display().to_string()],
            outputs,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct VotingCurveOutput {
    flip_probability: f64,
    votes: Vec<u32>,
    analytic_error: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulated_error: Option<Vec<f64>>,
}

fn run_voting_curve(args: &VotingCurveArgs) -> CmdResult {
    let votes: Vec<u32> = args
        .votes
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| usage(format!("bad vote count '{}'", part.trim())))
        })
        .collect::<Result<_, _>>()?;
    let analytic =
        voting_error_curve(args.flip_probability, &votes).map_err(|e| usage(e.to_string()))?;
    let simulated = match args.simulate_bits {
        None => None,
        Some(bits) => {
            let mut errors = Vec::with_capacity(votes.len());
            for (i, &n) in votes.iter().enumerate() {
                let mut rng = task_rng(args.seed, i as u64);
                errors.push(simulate_voting_error(
                    args.flip_probability,
                    n,
                    bits,
                    &mut rng,
                )?);
            }
            Some(errors)
        }
    };
    let output = VotingCurveOutput {
        flip_probability: args.flip_probability,
        votes,
        analytic_error: analytic,
        simulated_error: simulated,
    };
    emit(&serde_json::to_string_pretty(&output)?, args.out.as_deref())
}
