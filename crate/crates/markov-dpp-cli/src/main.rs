//! Command-line front end: chain tooling, single solver runs, and the
//! fairness experiment.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 usage or
//! configuration error, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use markov_dpp::chain::{mixing_report, TransitionMatrix};
use markov_dpp::fairexp::{
    self, DeltaChoice, FairAlgorithm, FairExperimentConfig, mdpp_delta_recipe,
};
use markov_dpp::instances;
use markov_dpp::metrics::{
    self, reference_solution, ReferenceMethod, ReferenceSolution, RunSummary,
};
use markov_dpp::seed::child_seed;
use markov_dpp::solver::{run_on_instance, Budget, ParameterSchedule, RunOptions};

const VERSION_STRING: &str = concat!("markov-dpp ", env!("CARGO_PKG_VERSION"));

#[derive(Parser)]
#[command(name = "markov-dpp", version, about = "Drift-plus-penalty solvers for Markovian data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Markov chain tooling.
    Chain {
        #[command(subcommand)]
        command: ChainCommand,
    },
    /// Run one solver configuration and write trajectory + summary files.
    Solve(SolveArgs),
    /// The fairness-constrained classification experiment.
    Fairexp {
        #[command(subcommand)]
        command: FairexpCommand,
    },
}

#[derive(Subcommand)]
enum ChainCommand {
    /// Compute exact, bracketed, and approximate mixing times.
    Mix {
        /// Chain definition JSON: {"states": n, "P": [[...], ...]}.
        #[arg(long)]
        input: PathBuf,
        /// Mixing threshold for tau_mix (0 < eps < 1).
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        /// Horizon T for tau_mix(1/T).
        #[arg(long)]
        horizon: u64,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// TOML run configuration; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in instance name: synth-iid | synth-markov | fairness3.
    #[arg(long)]
    instance: Option<String>,
    /// Schedule: edpp | edpp-fixed | dpp-fixed | mdpp | adversarial.
    #[arg(long)]
    schedule: Option<String>,
    /// Iteration count T.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Mixing-time override for the edpp/edpp-fixed schedules
    /// (defaults to the exact tau_mix(1/4) of the instance's chain).
    #[arg(long)]
    tau_mix: Option<u64>,
    /// MDPP delta parameter.
    #[arg(long)]
    delta: Option<f64>,
    /// Derive delta as F^2/4 + n R^2 G^2 + n H^2 from the instance bounds.
    #[arg(long)]
    delta_recipe: bool,
    /// MLMC truncation cap (power of two) for mdpp/adversarial runs.
    #[arg(long)]
    mlmc_cap: Option<usize>,
    /// Chain parameter for synth-markov / fairness3.
    #[arg(long)]
    chain_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enable per-step invariant checks.
    #[arg(long)]
    debug_asserts: bool,
    /// Output directory for trajectory.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum FairexpCommand {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for per-algorithm CSVs and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("MARKOV_DPP_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Chain {
            command: ChainCommand::Mix { input, eps, horizon },
        } => cmd_chain_mix(&input, eps, horizon),
        Command::Solve(args) => cmd_solve(args),
        Command::Fairexp {
            command: FairexpCommand::Run { config, out },
        } => cmd_fairexp(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Write via a temp file in the same directory plus rename, so partially
/// written outputs never appear under the final name.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    fs::write(&tmp, contents)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::runtime(format!("renaming to {}: {e}", path.display())))?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    states: usize,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
}

fn cmd_chain_mix(input: &Path, eps: f64, horizon: u64) -> Result<(), CliError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::usage(format!("--eps must lie in (0, 1), got {eps}")));
    }
    if horizon < 2 {
        return Err(CliError::usage("--horizon must be at least 2"));
    }
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::usage(format!("reading {}: {e}", input.display())))?;
    let file: ChainFile = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("parsing {}: {e}", input.display())))?;
    if file.p.len() != file.states {
        return Err(CliError::usage(format!(
            "\"states\" is {} but P has {} rows",
            file.states,
            file.p.len()
        )));
    }
    let matrix = TransitionMatrix::from_rows(file.p)
        .map_err(|e| CliError::usage(format!("invalid transition matrix: {e}")))?;
    matrix
        .validate()
        .map_err(|e| CliError::usage(format!("invalid transition matrix: {e}")))?;
    let report = mixing_report(&matrix, eps, horizon)
        .map_err(|e| CliError::runtime(format!("mixing computation failed: {e}")))?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    println!("{json}");
    Ok(())
}

/// TOML file schema for `solve --config`; unknown fields are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveFileConfig {
    instance: Option<String>,
    schedule: Option<String>,
    horizon: Option<u64>,
    beta: Option<f64>,
    tau_mix: Option<u64>,
    delta: Option<f64>,
    delta_recipe: Option<bool>,
    mlmc_cap: Option<usize>,
    chain_p: Option<f64>,
    seed: Option<u64>,
    debug_asserts: Option<bool>,
}

/// The fully resolved run configuration, echoed into summary.json.
#[derive(Debug, Serialize)]
struct ResolvedSolveConfig {
    instance: String,
    schedule: String,
    horizon: u64,
    beta: f64,
    tau_mix: Option<u64>,
    delta: Option<f64>,
    mlmc_cap: Option<usize>,
    chain_p: Option<f64>,
    seed: u64,
    debug_asserts: bool,
}

#[derive(Serialize, Deserialize)]
struct SolveSummary {
    version: String,
    config: serde_json::Value,
    #[serde(flatten)]
    run: RunSummary,
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let file: SolveFileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("parsing {}: {e}", path.display())))?
        }
        None => SolveFileConfig::default(),
    };
    let instance_name = args
        .instance
        .or(file.instance)
        .ok_or_else(|| CliError::usage("--instance is required (or set it in --config)"))?;
    let schedule_name = args
        .schedule
        .or(file.schedule)
        .ok_or_else(|| CliError::usage("--schedule is required (or set it in --config)"))?;
    let horizon = args
        .horizon
        .or(file.horizon)
        .ok_or_else(|| CliError::usage("--horizon is required (or set it in --config)"))?;
    if horizon == 0 {
        return Err(CliError::usage("--horizon must be at least 1"));
    }
    let beta = args.beta.or(file.beta).unwrap_or(0.5);
    let tau_override = args.tau_mix.or(file.tau_mix);
    let delta_flag = args.delta.or(file.delta);
    let delta_recipe = args.delta_recipe || file.delta_recipe.unwrap_or(false);
    let mlmc_cap = args.mlmc_cap.or(file.mlmc_cap);
    let chain_p = args.chain_p.or(file.chain_p);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let debug_asserts = args.debug_asserts || file.debug_asserts.unwrap_or(false);

    if let Some(cap) = mlmc_cap {
        if !cap.is_power_of_two() {
            return Err(CliError::usage(format!(
                "--mlmc-cap must be a power of two, got {cap}"
            )));
        }
    }
    if let Some(p) = chain_p {
        if !(p > 0.0 && p <= 1.0 / 3.0) {
            return Err(CliError::usage(format!(
                "--chain-p must lie in (0, 1/3], got {p}"
            )));
        }
    }

    let instance = instances::by_name(&instance_name, child_seed(seed, "instance-data"), chain_p)
        .map_err(|e| CliError::runtime(format!("building instance: {e}")))?
        .ok_or_else(|| {
            CliError::usage(format!(
                "unknown instance {instance_name:?}; available: {}",
                instances::REGISTRY.join(", ")
            ))
        })?;

    let tau_mix = |over: Option<u64>| -> Result<u64, CliError> {
        match over {
            Some(t) => Ok(t),
            None => instance
                .chain
                .mixing_time(0.25)
                .map_err(|e| CliError::runtime(format!("mixing time: {e}"))),
        }
    };
    let delta = |name: &str| -> Result<f64, CliError> {
        if let Some(d) = delta_flag {
            if d <= 0.0 {
                return Err(CliError::usage(format!("--delta must be positive, got {d}")));
            }
            Ok(d)
        } else if delta_recipe {
            Ok(mdpp_delta_recipe(
                &instance.lipschitz,
                instance.domain.r,
                instance.n_constraints,
            ))
        } else {
            Err(CliError::usage(format!(
                "--schedule {name} requires --delta, or --delta-recipe to derive \
                 F^2/4 + n R^2 G^2 + n H^2 from the instance's sampled bounds"
            )))
        }
    };
    let (schedule, resolved_tau, resolved_delta) = match schedule_name.as_str() {
        "edpp" => {
            let tau = tau_mix(tau_override)?;
            (ParameterSchedule::Edpp { tau_mix: tau, beta }, Some(tau), None)
        }
        "edpp-fixed" => {
            let tau = tau_mix(tau_override)?;
            (
                ParameterSchedule::EdppT {
                    tau_mix: tau,
                    horizon,
                    beta,
                },
                Some(tau),
                None,
            )
        }
        "dpp-fixed" => (ParameterSchedule::DppFixed { horizon }, None, None),
        "mdpp" => {
            let d = delta("mdpp")?;
            (
                ParameterSchedule::Mdpp {
                    beta,
                    delta: d,
                    r: instance.domain.r,
                },
                None,
                Some(d),
            )
        }
        "adversarial" => (
            ParameterSchedule::Adversarial {
                beta,
                r: instance.domain.r,
            },
            None,
            None,
        ),
        other => {
            return Err(CliError::usage(format!(
                "unknown schedule {other:?}; expected edpp | edpp-fixed | dpp-fixed | mdpp | adversarial"
            )))
        }
    };
    schedule
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    let opts = RunOptions {
        check_invariants: debug_asserts,
        ..Default::default()
    };
    let started = Instant::now();
    let traj = run_on_instance(
        &instance,
        &schedule,
        Budget::Iterations(horizon),
        seed,
        mlmc_cap,
        &opts,
    )
    .map_err(|e| CliError::runtime(format!("solver: {e}")))?;
    let reference = reference_solution(&instance, ReferenceMethod::ProjectedDescent)
        .map_err(|e| CliError::runtime(format!("reference solution: {e}")))?;
    let mut run = metrics::summarize(&instance, &traj, &reference, resolved_tau)
        .map_err(|e| CliError::runtime(format!("summarizing: {e}")))?;
    run.wall_time_ms = started.elapsed().as_millis() as u64;

    let config = ResolvedSolveConfig {
        instance: instance_name,
        schedule: schedule_name,
        horizon,
        beta,
        tau_mix: resolved_tau,
        delta: resolved_delta,
        mlmc_cap,
        chain_p,
        seed,
        debug_asserts,
    };
    let summary = SolveSummary {
        version: VERSION_STRING.to_string(),
        config: serde_json::to_value(&config).map_err(|e| CliError::runtime(e.to_string()))?,
        run,
    };

    let csv = metrics::trajectory_csv(&instance, &traj, Some(&reference.x_star));
    write_atomic(&args.out.join("trajectory.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    write_atomic(&args.out.join("summary.json"), &json)?;
    println!(
        "wrote {} and {} ({} steps, {} samples)",
        args.out.join("trajectory.csv").display(),
        args.out.join("summary.json").display(),
        traj.len(),
        traj.samples_consumed
    );
    Ok(())
}

/// TOML schema for `fairexp run --config`; unknown fields are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FairexpFileConfig {
    #[serde(default = "default_p")]
    p: f64,
    #[serde(default = "default_c")]
    c: f64,
    horizon: u64,
    #[serde(default)]
    seed: u64,
    /// Paper-style names: EDPP-t, EDPP-T, DPP-t, DPP-T, MDPP.
    algorithms: Vec<String>,
    #[serde(default = "default_cap")]
    mlmc_cap: usize,
    #[serde(default = "default_beta")]
    beta: f64,
    delta: Option<f64>,
    tau_mix: Option<u64>,
    #[serde(default)]
    debug_asserts: bool,
}

fn default_p() -> f64 {
    0.001
}
fn default_c() -> f64 {
    0.5
}
fn default_cap() -> usize {
    16
}
fn default_beta() -> f64 {
    0.5
}

#[derive(Serialize)]
struct FairexpSummary {
    version: String,
    config: serde_json::Value,
    tau_used: u64,
    delta_used: f64,
    reference: ReferenceSolution,
    /// Final constraint-1 infeasibility per algorithm.
    final_constraint1_infeasibility: Vec<(String, f64)>,
    algorithms: Vec<serde_json::Value>,
    wall_time_ms: u64,
}

fn cmd_fairexp(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::usage(format!("reading {}: {e}", config_path.display())))?;
    let file: FairexpFileConfig = toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("parsing {}: {e}", config_path.display())))?;
    let algorithms: Vec<FairAlgorithm> = file
        .algorithms
        .iter()
        .map(|name| {
            FairAlgorithm::parse(name).ok_or_else(|| {
                CliError::usage(format!(
                    "unknown algorithm {name:?}; expected EDPP-t | EDPP-T | DPP-t | DPP-T | MDPP"
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let config = FairExperimentConfig {
        p: file.p,
        c: file.c,
        horizon: file.horizon,
        seed: file.seed,
        algorithms,
        mlmc_cap: file.mlmc_cap,
        beta: file.beta,
        delta: match file.delta {
            Some(d) => DeltaChoice::Fixed(d),
            None => DeltaChoice::Recipe,
        },
        tau_override: file.tau_mix,
        check_invariants: file.debug_asserts,
    };
    config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    let started = Instant::now();
    let results = fairexp::run_experiment(&config).map_err(|e| match e {
        fairexp::FairExpError::InvalidConfig(msg) => CliError::usage(msg),
        other => CliError::runtime(other.to_string()),
    })?;

    for outcome in &results.outcomes {
        let csv = metrics::trajectory_csv(
            &results.instance,
            &outcome.trajectory,
            Some(&results.reference.x_star),
        );
        write_atomic(&out.join(format!("{}.csv", outcome.algorithm.name())), &csv)?;
    }
    let summary = FairexpSummary {
        version: VERSION_STRING.to_string(),
        config: serde_json::to_value(&config).map_err(|e| CliError::runtime(e.to_string()))?,
        tau_used: results.tau_used,
        delta_used: results.delta_used,
        reference: results.reference.clone(),
        final_constraint1_infeasibility: results
            .outcomes
            .iter()
            .map(|o| (o.algorithm.name().to_string(), o.final_infeasibility[0]))
            .collect(),
        algorithms: results
            .outcomes
            .iter()
            .map(|o| serde_json::to_value(o).map_err(|e| CliError::runtime(e.to_string())))
            .collect::<Result<_, _>>()?,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    write_atomic(&out.join("summary.json"), &json)?;
    println!(
        "wrote {} algorithm trajectories and summary.json to {}",
        results.outcomes.len(),
        out.display()
    );
    Ok(())
}
