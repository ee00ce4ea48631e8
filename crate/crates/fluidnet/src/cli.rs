//! Command-line entry point.
//!
//! Five subcommands wire the library end to end: `gen` draws a random
//! network, `solve` and `export` build a robust counterpart (solving it or
//! writing it as annotated LP text), `simulate` replays a solved control
//! against a realized service-time path, and `experiment` runs the
//! Monte-Carlo model comparison.
//!
//! Exit codes: 0 on success, 1 for anything wrong with the inputs (flags,
//! files, schemas, model validation), 2 when the solver itself fails.
//! Every subcommand writes identical bytes for identical inputs and seeds.

use crate::discretization::{uniform_grid, ControlKind, PiecewiseControl};
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::lp;
use crate::network::{random_network, validate_network, FluidNetwork, NetworkData};
use crate::robustize::{build_robust_effort, build_robust_rates, RobustError, RobustProblem};
use crate::simulate::{holding_cost, realize_tau, simulate_trajectory, transform_control};
use crate::uncertainty::{UncertaintyConfig, UncertaintySet};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Base-seed fallback for subcommands whose seed flag is omitted.
pub const SEED_ENV: &str = "ROBUST_FLUIDNET_SEED";

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;

#[derive(Debug)]
enum CliError {
    /// Bad flags, unreadable files, schema or model validation failures.
    Validation(String),
    /// The counterpart could not be solved.
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<RobustError> for CliError {
    fn from(e: RobustError) -> Self {
        match e {
            RobustError::Lp(inner) => CliError::Solver(inner.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<lp::LpError> for CliError {
    fn from(e: lp::LpError) -> Self {
        CliError::Solver(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fluidnet",
    about = "Robust control of fluid processing networks: build, solve and \
             evaluate robust counterparts of the processing-rates and \
             server-effort models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random network and write it as JSON.
    Gen(GenArgs),
    /// Solve a robust counterpart; prints the objective, writes the control.
    Solve(SolveArgs),
    /// Write a robust counterpart as annotated LP text.
    Export(ExportArgs),
    /// Replay a control against a realized service-time path.
    Simulate(SimulateArgs),
    /// Run the Monte-Carlo comparison of the two models.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of servers.
    #[arg(long)]
    servers: usize,
    /// Flows per server.
    #[arg(long)]
    flows: usize,
    /// Deviation fraction: service times wander in [(1−ε)τ̄, (1+ε)τ̄].
    #[arg(long)]
    epsilon: f64,
    /// Draw seed [default: $ROBUST_FLUIDNET_SEED, then 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the network JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Processing-rates model: control u ≥ 0, capacity Σ τ·u ≤ 1 per server.
    A,
    /// Server-effort model: control η ∈ [0,1], Σ η ≤ 1 per server.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SetArg {
    Box,
    Budgeted,
    Onesided,
    Polyhedral,
}

/// Everything needed to assemble a robust counterpart (shared by `solve`
/// and `export`).
#[derive(Debug, Args)]
struct ProblemArgs {
    /// Network JSON (from `gen`, or written by hand).
    #[arg(long)]
    net: PathBuf,
    /// a = processing rates, b = server effort.
    #[arg(long)]
    model: ModelArg,
    /// Service uncertainty set.
    #[arg(long)]
    uncertainty: SetArg,
    /// Rescale the network's service deviations to τ̂ = ε·τ̄ before building.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Per-server budget (budgeted and onesided sets only).
    #[arg(long)]
    gamma: Option<f64>,
    /// JSON uncertainty description with kind "polyhedral" (D matrix, d vector).
    #[arg(long)]
    poly: Option<PathBuf>,
    /// Number of control intervals.
    #[arg(long, default_value_t = 12)]
    grid: usize,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Write the control CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Where to write the LP text.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Network JSON.
    #[arg(long)]
    net: PathBuf,
    /// Control CSV (from `solve`).
    #[arg(long)]
    control: PathBuf,
    /// Model the control belongs to; rates controls are transformed to
    /// efforts (η = u·τ̄·(1−ε)) before replay.
    #[arg(long, value_enum, default_value_t = ModelArg::B)]
    model: ModelArg,
    /// Phase seed of the service-time path [default: $ROBUST_FLUIDNET_SEED, then 0].
    #[arg(long)]
    tau_seed: Option<u64>,
    /// Deviation fraction of the path [default: the network's own].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Simpson subdivisions per control interval.
    #[arg(long, default_value_t = 8)]
    substeps: usize,
    /// Floor reported levels at zero (minimum diagnostics keep raw values).
    #[arg(long)]
    clamp: bool,
    /// Write the trajectory CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON config; field names match the documented schema. Flags below
    /// override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    servers: Option<usize>,
    #[arg(long)]
    flows: Option<usize>,
    /// Comma-separated uncertainty fractions.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Random networks per ε.
    #[arg(long)]
    draws: Option<usize>,
    /// Service-time paths per network.
    #[arg(long)]
    realizations: Option<usize>,
    /// Control intervals of the solved counterparts.
    #[arg(long)]
    grid: Option<usize>,
    /// Base seed [default: config value; without a config file,
    /// $ROBUST_FLUIDNET_SEED, then 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix: writes {prefix}_report.csv and {prefix}_summary.csv.
    #[arg(long)]
    output: Option<String>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
}

/// Parse the arguments and run; the returned code follows the documented
/// exit convention.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; every other parse problem is
            // an input problem, not a solver one.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Export(args) => cmd_export(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Validation(format!(
                "{SEED_ENV} must be an unsigned integer, got {text:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn load_network(path: &Path) -> Result<FluidNetwork, CliError> {
    let text = read_file(path)?;
    let net: FluidNetwork = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{} is not a network: {e}", path.display())))?;
    let problems = validate_network(&net);
    if problems.is_empty() {
        Ok(net)
    } else {
        Err(CliError::Validation(format!(
            "{} is not a valid network: {}",
            path.display(),
            problems.join("; ")
        )))
    }
}

/// Rebuild the network with service deviations τ̂ = ε·τ̄ (same nominal times).
fn with_epsilon(net: &FluidNetwork, epsilon: f64) -> Result<FluidNetwork, CliError> {
    let data = NetworkData {
        num_servers: net.num_servers,
        server_of_flow: net.server_of_flow.clone(),
        buffer_of_flow: net.buffer_of_flow.clone(),
        routing: net.routing.clone(),
        lambda_nom: net.lambda_nom.clone(),
        lambda_dev: net.lambda_dev.clone(),
        alpha: net.alpha.clone(),
        cost: net.cost.clone(),
        horizon: net.horizon,
    };
    let tau_dev = net.tau_nom.iter().map(|t| epsilon * t).collect();
    FluidNetwork::from_service_times(data, net.tau_nom.clone(), tau_dev)
        .map_err(|e| CliError::Validation(e.to_string()))
}

/// The network's deviation fraction, when it is the same for every flow.
fn uniform_epsilon(net: &FluidNetwork) -> Result<f64, CliError> {
    let eps = net.epsilon();
    let first = eps[0];
    if eps.iter().any(|e| (e - first).abs() > 1e-12) {
        return Err(CliError::Validation(
            "the network's deviation fractions differ per flow; pass --epsilon".to_string(),
        ));
    }
    Ok(first)
}

fn build_set(args: &ProblemArgs, net: &FluidNetwork) -> Result<UncertaintySet, CliError> {
    if args.gamma.is_some() && !matches!(args.uncertainty, SetArg::Budgeted | SetArg::Onesided) {
        return Err(CliError::Validation(
            "--gamma only applies to --uncertainty budgeted or onesided".to_string(),
        ));
    }
    if args.poly.is_some() && args.uncertainty != SetArg::Polyhedral {
        return Err(CliError::Validation(
            "--poly only applies to --uncertainty polyhedral".to_string(),
        ));
    }
    let need_gamma = || {
        args.gamma.ok_or_else(|| {
            CliError::Validation("--gamma is required for this uncertainty set".to_string())
        })
    };
    let config = match args.uncertainty {
        SetArg::Box => UncertaintyConfig::boxed(),
        SetArg::Budgeted => UncertaintyConfig::budgeted(need_gamma()?),
        SetArg::Onesided => UncertaintyConfig::one_sided(need_gamma()?),
        SetArg::Polyhedral => {
            let path = args.poly.as_ref().ok_or_else(|| {
                CliError::Validation(
                    "--poly FILE is required for --uncertainty polyhedral".to_string(),
                )
            })?;
            let text = read_file(path)?;
            let config: UncertaintyConfig = serde_json::from_str(&text).map_err(|e| {
                CliError::Validation(format!(
                    "{} is not an uncertainty description: {e}",
                    path.display()
                ))
            })?;
            if config.kind != "polyhedral" {
                return Err(CliError::Validation(format!(
                    "{} has kind {:?}, expected \"polyhedral\"",
                    path.display(),
                    config.kind
                )));
            }
            config
        }
    };
    config
        .build(net.num_flows, &net.service_groups())
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn build_problem(args: &ProblemArgs) -> Result<RobustProblem, CliError> {
    let mut net = load_network(&args.net)?;
    if let Some(epsilon) = args.epsilon {
        net = with_epsilon(&net, epsilon)?;
    }
    let set = build_set(args, &net)?;
    let grid = uniform_grid(net.horizon, args.grid)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let problem = match args.model {
        ModelArg::A => build_robust_rates(&net, &set, &grid),
        ModelArg::B => build_robust_effort(&net, &set, &grid),
    }?;
    Ok(problem)
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    let net = random_network(args.servers, args.flows, args.epsilon, seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let json = serde_json::to_string_pretty(&net)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_file(&args.out, &format!("{json}\n"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let problem = build_problem(&args.problem)?;
    let sol = problem.solve()?;
    if sol.status != lp::LpStatus::Optimal {
        return Err(CliError::Solver(format!(
            "the robust counterpart ended {}",
            sol.status
        )));
    }
    let control = problem.extract_control(&sol)?;
    println!("objective {}", sol.objective);
    match &args.out {
        Some(path) => {
            write_file(path, &control.to_csv())?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", control.to_csv()),
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let problem = build_problem(&args.problem)?;
    let text = lp::text::export(&problem.problem)?;
    write_file(&args.out, &text)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let net = load_network(&args.net)?;
    let text = read_file(&args.control)?;
    let epsilon = match args.epsilon {
        Some(e) => e,
        None => uniform_epsilon(&net)?,
    };
    let eta = match args.model {
        ModelArg::A => {
            let u = PiecewiseControl::from_csv(&text, ControlKind::Rates)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            transform_control(&net, &u, epsilon)
                .map_err(|e| CliError::Validation(e.to_string()))?
        }
        ModelArg::B => PiecewiseControl::from_csv(&text, ControlKind::Effort)
            .map_err(|e| CliError::Validation(e.to_string()))?,
    };
    let seed = resolve_seed(args.tau_seed)?;
    let path = realize_tau(&net, epsilon, seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let traj = simulate_trajectory(&net, &eta, &path, args.substeps)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    println!("cost {}", holding_cost(&traj, &net.cost));
    println!("min_level {}", traj.min_level());
    let shown = if args.clamp { traj.clamped() } else { traj };
    match &args.out {
        Some(out) => {
            write_file(out, &shown.to_csv())?;
            println!("wrote {}", out.display());
        }
        None => print!("{}", shown.to_csv()),
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = read_file(path)?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| {
                CliError::Validation(format!(
                    "{} is not an experiment config: {e}",
                    path.display()
                ))
            })?
        }
        None => {
            let mut cfg = ExperimentConfig::sized(0, 0);
            cfg.base_seed = resolve_seed(None)?;
            cfg
        }
    };
    if let Some(v) = args.servers {
        cfg.num_servers = v;
    }
    if let Some(v) = args.flows {
        cfg.flows_per_server = v;
    }
    if let Some(v) = &args.epsilons {
        cfg.epsilons = v.clone();
    }
    if let Some(v) = args.draws {
        cfg.n_param_draws = v;
    }
    if let Some(v) = args.realizations {
        cfg.n_realizations = v;
    }
    if let Some(v) = args.grid {
        cfg.grid_intervals = v;
    }
    if let Some(v) = args.seed {
        cfg.base_seed = v;
    }
    if let Some(v) = &args.output {
        cfg.output = v.clone();
    }

    let report = match args.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError::Validation(format!("cannot size the pool: {e}")))?;
            pool.install(|| run_experiment(&cfg))
        }
        None => run_experiment(&cfg),
    }
    .map_err(|e| CliError::Validation(e.to_string()))?;

    for failure in &report.failures {
        eprintln!(
            "cell ε={} seed={} failed: {}",
            failure.epsilon, failure.param_seed, failure.message
        );
    }
    let (report_path, summary_path) = report
        .write_csv_files(Path::new(&cfg.output), &cfg.epsilons)
        .map_err(|e| CliError::Validation(format!("cannot write outputs: {e}")))?;
    print!("{}", report.summary_csv(&cfg.epsilons));
    println!(
        "wrote {} ({} records, {} excluded) and {} ({} failures)",
        report_path.display(),
        report.records.len(),
        report.excluded,
        summary_path.display(),
        report.failures.len()
    );
    Ok(())
}
