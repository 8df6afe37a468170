use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqmeta::classical::{weights_table, WeightMode, WeightModel};
use seqmeta::error::{Error, Result};
use seqmeta::io::{
    parse_config_json, parse_studies_csv, schedule_json, write_studies_csv, write_sweep_csv,
    write_trace_csv, write_weights_csv, RunManifest, TraceColumns,
};
use seqmeta::sim::{
    scenario_schedule, simulate_dgp, DgpParams, Scenario, ScenarioSpec, RNG_IDENTITY,
};
use seqmeta::trace::{run_trace, sweep_kappa};
use seqmeta::types::TauSpec;

/// Sequential Bayesian meta-analysis traces.
#[derive(Parser)]
#[command(name = "seqmeta", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a research trace from a studies CSV and a config JSON.
    Trace(TraceArgs),
    /// Classical per-step meta-analysis weights.
    Weights(WeightsArgs),
    /// Generate a synthetic literature for a built-in scenario.
    Simulate(SimulateArgs),
    /// Rerun the trace over a grid of kappa values for one label.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricChoice {
    W1,
    W2,
    Lindley,
    All,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    studies: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Freeze the kappa schedule at its final state before tracing.
    #[arg(long)]
    retrospective_beliefs: bool,
    /// Which contribution columns to emit.
    #[arg(long, value_enum, default_value = "w2")]
    metric: MetricChoice,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeChoice {
    Sequential,
    Retrospective,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Fe,
    Re,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    studies: PathBuf,
    #[arg(long, value_enum, default_value = "sequential")]
    mode: ModeChoice,
    #[arg(long, value_enum, default_value = "fe")]
    model: ModelChoice,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// innovation-I or innovation-II (case-insensitive).
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    theta_star: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.01)]
    var_z: f64,
    #[arg(long, default_value_t = 0.01)]
    var_y: f64,
    #[arg(long, default_value_t = 10)]
    n_old: u32,
    #[arg(long, default_value_t = 20)]
    n_new: u32,
    /// Report this constant standard error for every study.
    #[arg(long)]
    const_se: Option<f64>,
    #[arg(long)]
    kappa_old_before: Option<f64>,
    #[arg(long)]
    kappa_old_after: Option<f64>,
    #[arg(long)]
    kappa_new: Option<f64>,
    #[arg(long)]
    switch_step: Option<u32>,
    /// Fixed tau written into the emitted schedule JSON.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    studies: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Swept parameter, currently `kappa:<label>`.
    #[arg(long)]
    param: String,
    /// Value grid `lo:hi:step`, or a single value.
    #[arg(long)]
    values: String,
    /// 1-based trace step whose contribution is reported.
    #[arg(long)]
    focus_step: usize,
    #[arg(long)]
    out: PathBuf,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn cmd_trace(args: &TraceArgs) -> Result<()> {
    let seq = parse_studies_csv(&args.studies)?;
    let mut config = parse_config_json(&args.config)?;
    let columns = match args.metric {
        MetricChoice::W1 => {
            config.metric_p = 1;
            TraceColumns {
                w1: false,
                lindley: false,
            }
        }
        MetricChoice::W2 => {
            config.metric_p = 2;
            TraceColumns {
                w1: false,
                lindley: false,
            }
        }
        MetricChoice::Lindley => TraceColumns {
            w1: false,
            lindley: true,
        },
        MetricChoice::All => TraceColumns {
            w1: true,
            lindley: true,
        },
    };
    let trace = run_trace(&seq, &config, args.retrospective_beliefs)?;
    let mut buf = Vec::new();
    write_trace_csv(&trace, columns, &mut buf)?;
    fs::write(&args.out, buf)?;
    RunManifest::new(&fs::read(&args.config)?, &fs::read(&args.studies)?, None)
        .write(&with_suffix(&args.out, "manifest.json"))?;
    Ok(())
}

fn cmd_weights(args: &WeightsArgs) -> Result<()> {
    let seq = parse_studies_csv(&args.studies)?;
    let mode = match args.mode {
        ModeChoice::Sequential => WeightMode::Sequential,
        ModeChoice::Retrospective => WeightMode::Retrospective,
    };
    let model = match args.model {
        ModelChoice::Fe => WeightModel::Fe,
        ModelChoice::Re => WeightModel::Re,
    };
    let rows = weights_table(&seq, mode, model)?;
    let mut buf = Vec::new();
    write_weights_csv(&rows, &mut buf)?;
    fs::write(&args.out, buf)?;
    RunManifest::new(&[], &fs::read(&args.studies)?, None)
        .write(&with_suffix(&args.out, "manifest.json"))?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let name = match args.scenario.to_ascii_lowercase().as_str() {
        "innovation-i" => Scenario::InnovationI,
        "innovation-ii" => Scenario::InnovationII,
        other => {
            return Err(Error::SchemaViolation {
                pointer: "--scenario".to_string(),
                message: format!("unknown scenario '{other}'"),
            })
        }
    };
    let params = DgpParams {
        theta_star: args.theta_star,
        beta: args.beta,
        var_z: args.var_z,
        var_y: args.var_y,
        n_old: args.n_old,
        n_new: args.n_new,
        seed: args.seed,
        const_se: args.const_se,
    };
    let mut spec = ScenarioSpec::defaults(name);
    if let Some(v) = args.kappa_old_before {
        spec.kappa_old_before = v;
    }
    if let Some(v) = args.kappa_old_after {
        spec.kappa_old_after = v;
    }
    if let Some(v) = args.kappa_new {
        spec.kappa_new = v;
    }
    if let Some(v) = args.switch_step {
        spec.switch_step = v;
    }

    let seq = simulate_dgp(&params)?;
    let schedule = scenario_schedule(&spec, TauSpec::Fixed(args.tau))?;

    let mut csv_buf = Vec::new();
    write_studies_csv(&seq, &mut csv_buf)?;
    fs::write(&args.out, &csv_buf)?;

    let sched_value = schedule_json(&schedule);
    fs::write(
        with_suffix(&args.out, "schedule.json"),
        serde_json::to_string_pretty(&sched_value)? + "\n",
    )?;

    let config_bytes = serde_json::to_vec(&serde_json::json!({
        "dgp": params,
        "scenario": spec,
        "tau": args.tau,
    }))?;
    RunManifest::new(&config_bytes, &csv_buf, Some(RNG_IDENTITY.to_string()))
        .write(&with_suffix(&args.out, "manifest.json"))?;
    Ok(())
}

fn parse_value_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::SchemaViolation {
        pointer: "--values".to_string(),
        message: msg.to_string(),
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| bad("expected numbers")))
        .collect::<Result<_>>()?;
    match nums.as_slice() {
        [v] => Ok(vec![*v]),
        [lo, hi, step] => {
            if *step <= 0.0 || hi < lo {
                return Err(Error::EmptyValueGrid);
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| lo + step * i as f64).collect())
        }
        _ => Err(bad("expected a single value or lo:hi:step")),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let seq = parse_studies_csv(&args.studies)?;
    let config = parse_config_json(&args.config)?;
    let label = args.param.strip_prefix("kappa:").ok_or_else(|| {
        Error::SchemaViolation {
            pointer: "--param".to_string(),
            message: "expected kappa:<label>".to_string(),
        }
    })?;
    let values = parse_value_grid(&args.values)?;
    let rows = sweep_kappa(&seq, &config, label, &values, args.focus_step)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    fs::write(&args.out, buf)?;
    RunManifest::new(&fs::read(&args.config)?, &fs::read(&args.studies)?, None)
        .write(&with_suffix(&args.out, "manifest.json"))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Trace(args) => cmd_trace(args),
        Command::Weights(args) => cmd_weights(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
