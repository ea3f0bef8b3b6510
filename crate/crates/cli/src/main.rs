use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use voltvar::centralopt::{self, Objective};
use voltvar::control::{LoopStatus, Plant};
use voltvar::netfile::NetworkFile;
use voltvar::scenario::{self, DailyProfile, DynamicController, DynamicScenario, STATIC_TOL};
use voltvar::stability::analyze;
use voltvar::{ControlConfig, FeederNetwork, GraphMatrices, QpProblem, VarLimits};

const EXIT_INPUT: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "voltvar",
    version,
    about = "Local volt/VAR control analysis for distribution feeders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize the voltage sensitivity matrices of a network.
    Matrices { network: PathBuf },
    /// Stability certificate of a local controller (exit 3 when not certified).
    StabilityReport {
        network: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Solve the centralized reference problem.
    SolveCentralized {
        network: PathBuf,
        #[arg(long, value_enum, default_value = "weighted")]
        objective: ObjectiveArg,
        /// Replace the Laplacian weighting by its mean eigenvalue times identity.
        #[arg(long, conflicts_with = "objective")]
        benchmark_variant: bool,
        /// Uniform VAR penalty overriding the network file.
        #[arg(long)]
        c: Option<f64>,
        /// Also write the result to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed loop on the network's static loads.
    RunStatic {
        network: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long, value_enum, default_value = "linear")]
        plant: PlantArg,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Add per-bus q and v columns to the trace.
        #[arg(long)]
        full: bool,
    },
    /// Replay a daily load/PV profile through the feeder.
    RunDynamic {
        network: PathBuf,
        /// Profile CSV (defaults to the built-in synthetic day).
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "scaled")]
        controller: ControllerArg,
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.2)]
        c: f64,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        /// Voltage window that sets the delayed-droop slope.
        #[arg(long, default_value_t = 0.05)]
        voltage_window: f64,
        #[arg(long, default_value_t = 18)]
        homes_per_bus: u32,
        #[arg(long, value_enum, default_value = "ac")]
        plant: PlantArg,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        full: bool,
    },
    /// Write the built-in synthetic daily profile as CSV.
    SynthProfile {
        #[arg(long, default_value = "profile_synthetic.csv")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SchemeArgs {
    #[arg(long, value_enum)]
    scheme: SchemeArg,
    /// Uniform VAR penalty (defaults to the per-bus values in the network file).
    #[arg(long)]
    c: Option<f64>,
    /// Stepsize scale of the scaled scheme.
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    /// Relaxation weight; below 1 turns scaled control into its delayed form.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Droop,
    Scaled,
    /// Droop stepsizes relaxed by `alpha` (default 0.3).
    Delayed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Weighted,
    Unweighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Linear,
    Ac,
}

impl From<PlantArg> for Plant {
    fn from(p: PlantArg) -> Self {
        match p {
            PlantArg::Linear => Plant::Linear,
            PlantArg::Ac => Plant::Ac,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    NoVar,
    Scaled,
    DelayedDroop,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: anyhow::Error) -> Self {
        Self { code, error }
    }
}

impl From<voltvar::Error> for Failure {
    fn from(e: voltvar::Error) -> Self {
        use voltvar::Error::*;
        let code = match e {
            NotConverged { .. } | Diverged { .. } => EXIT_NOT_CONVERGED,
            Contract(_) => 1,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::new(1, error)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if f.code != EXIT_UNSTABLE {
                eprintln!("error: {:#}", f.error);
            } else {
                eprintln!("{:#}", f.error);
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Matrices { network } => cmd_matrices(&network),
        Command::StabilityReport { network, scheme } => cmd_stability(&network, &scheme),
        Command::SolveCentralized {
            network,
            objective,
            benchmark_variant,
            c,
            out,
        } => {
            let objective = match (benchmark_variant, objective) {
                (true, _) => Objective::BenchmarkScaledIdentity,
                (false, ObjectiveArg::Weighted) => Objective::Weighted,
                (false, ObjectiveArg::Unweighted) => Objective::Unweighted,
            };
            cmd_solve_centralized(&network, objective, c, out.as_deref())
        }
        Command::RunStatic {
            network,
            scheme,
            plant,
            max_iter,
            out_dir,
            full,
        } => cmd_run_static(&network, &scheme, plant.into(), max_iter, &out_dir, full),
        Command::RunDynamic {
            network,
            profile,
            controller,
            epsilon,
            c,
            alpha,
            voltage_window,
            homes_per_bus,
            plant,
            out_dir,
            full,
        } => {
            let controller = match controller {
                ControllerArg::NoVar => DynamicController::NoVar,
                ControllerArg::Scaled => DynamicController::Scaled { epsilon, c },
                ControllerArg::DelayedDroop => DynamicController::DelayedDroop { alpha, voltage_window },
            };
            cmd_run_dynamic(
                &network,
                profile.as_deref(),
                controller,
                homes_per_bus,
                plant.into(),
                &out_dir,
                full,
            )
        }
        Command::SynthProfile { out } => {
            let mut buf = Vec::new();
            DailyProfile::synthetic().to_writer(&mut buf)?;
            write_atomic(&out, &buf)
        }
    }
}

fn load(path: &Path, c: Option<f64>) -> Result<(FeederNetwork, GraphMatrices), Failure> {
    let file = NetworkFile::load(path)
        .map_err(|e| Failure::new(EXIT_INPUT, anyhow!(e).context(format!("reading {}", path.display()))))?;
    let mut net: FeederNetwork = file.to_network()?;
    if let Some(c) = c {
        net = net.with_uniform_penalty(c)?;
    }
    let gm = GraphMatrices::from_network(&net)?;
    Ok((net, gm))
}

fn controller(args: &SchemeArgs, net: &FeederNetwork, gm: &GraphMatrices) -> Result<ControlConfig, Failure> {
    let c = net.c();
    let mu = net.mu();
    let limits = VarLimits::from_network(net);
    let cfg = match (args.scheme, args.alpha) {
        (SchemeArg::Droop, Some(a)) if a != 1.0 => {
            return Err(Failure::new(
                EXIT_INPUT,
                anyhow!("droop runs with alpha = 1; use --scheme delayed for a relaxed droop"),
            ))
        }
        (SchemeArg::Droop, _) => ControlConfig::droop(c, mu, limits)?,
        (SchemeArg::Scaled, Some(a)) if a < 1.0 => ControlConfig::delayed_scaled(args.epsilon, c, gm, a, mu, limits)?,
        (SchemeArg::Scaled, _) => ControlConfig::scaled(args.epsilon, c, gm, mu, limits)?,
        (SchemeArg::Delayed, a) => ControlConfig::delayed_droop(c, a.unwrap_or(0.3), mu, limits)?,
    };
    Ok(cfg)
}

#[derive(Serialize)]
struct MatrixSummary {
    n: usize,
    lines: usize,
    topology: voltvar::netmodel::Topology,
    #[serde(rename = "lambda_min_X")]
    lambda_min_x: f64,
    #[serde(rename = "lambda_max_X")]
    lambda_max_x: f64,
    #[serde(rename = "cond_X")]
    cond_x: f64,
    #[serde(rename = "lambda_min_B")]
    lambda_min_b: f64,
    #[serde(rename = "lambda_max_B")]
    lambda_max_b: f64,
    #[serde(rename = "cond_B")]
    cond_b: f64,
}

fn cmd_matrices(path: &Path) -> CmdResult {
    let (net, gm) = load(path, None)?;
    let ex = gm.x.clone().symmetric_eigen().eigenvalues;
    let eb = gm.b.clone().symmetric_eigen().eigenvalues;
    let summary = MatrixSummary {
        n: net.n(),
        lines: net.lines().len(),
        topology: net.topology(),
        lambda_min_x: ex.min(),
        lambda_max_x: ex.max(),
        cond_x: ex.max() / ex.min(),
        lambda_min_b: eb.min(),
        lambda_max_b: eb.max(),
        cond_b: eb.max() / eb.min(),
    };
    print_json(&summary)
}

fn cmd_stability(path: &Path, args: &SchemeArgs) -> CmdResult {
    let (net, gm) = load(path, args.c)?;
    let cfg = controller(args, &net, &gm)?;
    let report = analyze(&cfg, &gm)?;
    print_json(&report)?;
    if report.stable {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_UNSTABLE,
            anyhow!(
                "not certified stable: lambda_max(H) = {:.6} >= 2 / alpha = {:.6}",
                report.lambda_max_h,
                2.0 / report.alpha_sup
            ),
        ))
    }
}

#[derive(Serialize)]
struct CentralizedResult {
    objective: Objective,
    q: Vec<f64>,
    objective_value: f64,
    /// `||V - mu||` under the linear model.
    voltage_mismatch: f64,
    kkt_residual: f64,
    iterations: usize,
    lambda_bar: f64,
}

fn cmd_solve_centralized(path: &Path, objective: Objective, c: Option<f64>, out: Option<&Path>) -> CmdResult {
    let (net, gm) = load(path, c)?;
    let prob = QpProblem::from_network(objective, &net, &gm)?;
    let sol = centralopt::solve(&prob, 1e-12)?;
    let result = CentralizedResult {
        objective,
        objective_value: prob.value(&sol.q),
        voltage_mismatch: prob.voltage_mismatch(&sol.q),
        kkt_residual: sol.residual,
        iterations: sol.iterations,
        lambda_bar: prob.lambda_bar,
        q: sol.q.iter().copied().collect(),
    };
    if let Some(out) = out {
        write_atomic(out, &to_json(&result)?)?;
    }
    print_json(&result)
}

#[derive(Serialize)]
struct StaticSummary {
    status: LoopStatus,
    iterations: usize,
    final_mismatch: Option<f64>,
    oscillation: Option<voltvar::control::Oscillation<f64>>,
    q: Vec<f64>,
}

fn cmd_run_static(
    path: &Path,
    args: &SchemeArgs,
    plant: Plant,
    max_iter: usize,
    out_dir: &Path,
    full: bool,
) -> CmdResult {
    let (net, gm) = load(path, args.c)?;
    let cfg = controller(args, &net, &gm)?;
    let out = scenario::run_static(&net, &gm, &cfg, plant, max_iter)?;

    let mut trace = Vec::new();
    scenario::write_trace_csv(&mut trace, &out.trace, full)?;
    let summary = StaticSummary {
        status: out.status.clone(),
        iterations: out.iterations(),
        final_mismatch: out.final_mismatch(),
        oscillation: out.oscillation,
        q: out.state.q.iter().copied().collect(),
    };
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_atomic(&out_dir.join("trace.csv"), &trace)?;
    write_atomic(&out_dir.join("summary.json"), &to_json(&summary)?)?;
    print_json(&summary)?;
    match out.status {
        LoopStatus::Converged => Ok(()),
        LoopStatus::MaxIterations => Err(Failure::new(
            EXIT_NOT_CONVERGED,
            match out.oscillation {
                Some(o) => anyhow!("oscillating between mismatch {:.6} and {:.6}", o.low, o.high),
                None => anyhow!("no convergence to {STATIC_TOL:e} within {max_iter} iterations"),
            },
        )),
        LoopStatus::Diverged { tick, message } => Err(Failure::new(
            EXIT_NOT_CONVERGED,
            anyhow!("AC plant diverged at tick {tick}: {message}"),
        )),
    }
}

fn cmd_run_dynamic(
    path: &Path,
    profile: Option<&Path>,
    controller: DynamicController,
    homes_per_bus: u32,
    plant: Plant,
    out_dir: &Path,
    full: bool,
) -> CmdResult {
    let (net, gm) = load(path, None)?;
    let profile = match profile {
        Some(p) => DailyProfile::read_csv(p)
            .map_err(|e| Failure::new(EXIT_INPUT, anyhow!(e).context(format!("reading {}", p.display()))))?,
        None => DailyProfile::synthetic(),
    };
    let scen = DynamicScenario::new(profile, vec![homes_per_bus; net.n()]);
    let out = scenario::run_dynamic(&net, &gm, &scen, controller, plant)?;

    let mut trace = Vec::new();
    scenario::write_trace_csv(&mut trace, &out.ticks, full)?;
    let summary = out.summary();
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_atomic(&out_dir.join("trace.csv"), &trace)?;
    write_atomic(&out_dir.join("summary.json"), &to_json(&summary)?)?;
    print_json(&summary)?;
    if let LoopStatus::Diverged { tick, message } = out.status {
        return Err(Failure::new(
            EXIT_NOT_CONVERGED,
            anyhow!("AC plant diverged at tick {tick}: {message}"),
        ));
    }
    Ok(())
}

fn to_json<S: Serialize>(value: &S) -> anyhow::Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

fn print_json<S: Serialize>(value: &S) -> CmdResult {
    std::io::stdout()
        .write_all(&to_json(value)?)
        .context("writing to stdout")?;
    Ok(())
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes).context("writing temp file")?;
    tmp.persist(path)
        .map_err(|e| anyhow!(e.error))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
