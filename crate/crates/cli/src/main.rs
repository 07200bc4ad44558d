use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use ihisd_core::dynamics::{gradient_flow, integrate_ihisd, Direction, FlowConfig, SearchState, TerminalStatus};
use ihisd_core::eigen::{EigenMode, EigenOptions};
use ihisd_core::energy::{parse_list, Energy, EnergyModel, ModelSpec};
use ihisd_core::landscape::{
    build_landscape, export_graph, random_start, GraphFormat, IndexStrategy, LandscapeConfig, PerturbDirections,
};
use ihisd_core::saddle::{run_saddle_search, AlphaSchedule, SaddleConfig, SearchStatus, StepPolicy};
use ihisd_core::verify;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_WRONG_INDEX: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_TRUNCATED: u8 = 4;
const EXIT_DIVERGED: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "ihisd", version, about = "Saddle search and solution landscapes with crossover saddle dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find a saddle of a given index from a starting point.
    Search(SearchArgs),
    /// Build the solution landscape reachable from a seed point.
    Landscape(LandscapeArgs),
    /// Run the numerical verification suites.
    Verify(VerifyArgs),
    /// Integrate a continuous flow and write its trajectory.
    Flow(FlowArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelArgs {
    /// Model id: butterfly, morse or quadratic.
    #[arg(long)]
    energy: String,
    /// Model parameter as key=value; repeatable.
    #[arg(long = "param", value_name = "KEY=VAL")]
    params: Vec<String>,
}

impl ModelArgs {
    fn build(&self) -> ihisd_core::Result<EnergyModel> {
        ModelSpec::parse(&self.energy, &self.params)?.build()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dir {
    Up,
    Down,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Self {
        match d {
            Dir::Up => Direction::Up,
            Dir::Down => Direction::Down,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Eigen {
    Dense,
    MatrixFree,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Starting point as a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    /// Target Morse index.
    #[arg(long)]
    index: usize,
    #[arg(long, value_enum, default_value = "up")]
    dir: Dir,
    #[arg(long, default_value_t = 1e-9)]
    alpha0: f64,
    /// Rate constant of the mixing ratio.
    #[arg(long, default_value_t = 2.0)]
    rate_c: f64,
    /// Step size; defaults to a model-specific value.
    #[arg(long)]
    eta: Option<f64>,
    /// Cap on the displacement per iteration.
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum, default_value = "dense")]
    eigen: Eigen,
    /// Result JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Iterate CSV path.
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    #[serde(skip)]
    dump_config: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Strategy {
    Adjacent,
    All,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LandscapeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Seed point as a comma-separated list.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "from_random_min")]
    seed_point: Option<String>,
    /// Start from the minimum reached by descent from a seeded random point.
    #[arg(long)]
    from_random_min: bool,
    #[arg(long, value_enum, default_value = "adjacent")]
    strategy: Strategy,
    #[arg(long, default_value_t = 1e-2)]
    delta: f64,
    #[arg(long, default_value_t = 1e-9)]
    alpha0: f64,
    /// Maximum number of searches.
    #[arg(long, default_value_t = 1000)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    dedup_tol: f64,
    /// Use only the first N eigenvector directions.
    #[arg(long, conflicts_with = "random_directions")]
    directions: Option<usize>,
    /// Use N seeded random directions instead of eigenvectors.
    #[arg(long)]
    random_directions: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Worker threads for the searches.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Graph JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Graphviz DOT path.
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    dump_config: bool,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VerifyArgs {
    /// Run only this suite.
    #[arg(long)]
    suite: Option<String>,
    /// Sample count for randomized suites.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FlowMode {
    Descent,
    Ascent,
    Gad,
    Ihisd,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlowArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long, value_enum, default_value = "ihisd")]
    mode: FlowMode,
    #[arg(long, default_value_t = 1)]
    index: usize,
    #[arg(long, value_enum, default_value = "up")]
    dir: Dir,
    #[arg(long, default_value_t = 1e-9)]
    alpha0: f64,
    #[arg(long, default_value_t = 2.0)]
    rate_c: f64,
    #[arg(long, default_value_t = 200.0)]
    t_max: f64,
    #[arg(long, default_value_t = 1e-2)]
    h: f64,
    /// Saturation speed for the crossover and GAD flows; 0 disables it.
    #[arg(long, default_value_t = 0.5)]
    max_speed: f64,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1)]
    sample_every: usize,
    /// Trajectory CSV path.
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    dump_config: bool,
}

fn parse_point(s: &str, model: &EnergyModel) -> ihisd_core::Result<DVector<f64>> {
    let v = DVector::from_vec(parse_list(s)?);
    model.check_dim(&v)?;
    Ok(v)
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dump<T: Serialize>(cfg: &T) -> u8 {
    println!("{}", serde_json::to_string_pretty(cfg).expect("config serializes"));
    EXIT_OK
}

#[derive(Serialize)]
struct SearchReport<'a> {
    model: ModelSpec,
    status: SearchStatus,
    iterations: usize,
    x: Vec<f64>,
    energy: Option<f64>,
    grad_norm: Option<f64>,
    index: Option<usize>,
    zero_count: Option<usize>,
    eigenvalues: Option<&'a [f64]>,
    final_alpha: f64,
}

fn cmd_search(args: &SearchArgs) -> Result<u8, String> {
    if args.dump_config {
        return Ok(dump(args));
    }
    let model = args.model.build().map_err(|e| e.to_string())?;
    let x0 = parse_point(&args.x0, &model).map_err(|e| e.to_string())?;
    let base = SaddleConfig::for_model(&model);
    let step = match args.eta {
        Some(eta) => StepPolicy::Fixed {
            eta,
            max_step: args.max_step,
        },
        None => match (base.step, args.max_step) {
            (StepPolicy::Fixed { eta, .. }, Some(cap)) => StepPolicy::Fixed {
                eta,
                max_step: Some(cap),
            },
            (s, _) => s,
        },
    };
    let config = SaddleConfig {
        k: args.index,
        direction: args.dir.into(),
        alpha: AlphaSchedule {
            alpha0: args.alpha0,
            c: args.rate_c,
            ..AlphaSchedule::default()
        },
        step,
        grad_tol: args.grad_tol,
        max_iter: args.max_iter.unwrap_or(base.max_iter),
        eigen: EigenOptions {
            mode: match args.eigen {
                Eigen::Dense => EigenMode::Dense,
                Eigen::MatrixFree => EigenMode::MatrixFree,
            },
            ..EigenOptions::default()
        },
        sample_every: args.traj.as_ref().map(|_| 1),
        ..base
    };
    let result = run_saddle_search(&model, &x0, &config).map_err(|e| e.to_string())?;
    let x = result.point.as_ref().map_or(&result.final_x, |p| &p.x);
    let report = SearchReport {
        model: model.spec(),
        status: result.status,
        iterations: result.iterations,
        x: x.iter().copied().collect(),
        energy: model.energy(x).ok(),
        grad_norm: model.gradient(x).ok().map(|g| g.norm()),
        index: result.point.as_ref().map(|p| p.index),
        zero_count: result.point.as_ref().map(|p| p.zero_count),
        eigenvalues: result.point.as_ref().map(|p| p.eigenvalues.as_slice()),
        final_alpha: result.final_alpha,
    };
    println!(
        "status={} iterations={} x={}",
        serde_json::to_value(result.status).unwrap().as_str().unwrap(),
        result.iterations,
        fmt_vec(&report.x)
    );
    if let Some(p) = &result.point {
        println!("index={} energy={:.12} grad_norm={:.3e}", p.index, p.energy, p.grad_norm);
    }
    if let Some(path) = &args.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_file(path, &json)?;
    }
    if let (Some(path), Some(tr)) = (&args.traj, &result.trajectory) {
        write_file(path, &tr.to_csv())?;
    }
    Ok(match result.status {
        SearchStatus::Converged => EXIT_OK,
        SearchStatus::WrongIndex => EXIT_WRONG_INDEX,
        SearchStatus::MaxIter | SearchStatus::Diverged | SearchStatus::Stalled => EXIT_NOT_CONVERGED,
    })
}

fn cmd_landscape(args: &LandscapeArgs) -> Result<u8, String> {
    if args.dump_config {
        return Ok(dump(args));
    }
    let model = args.model.build().map_err(|e| e.to_string())?;
    let seed_point = match (&args.seed_point, args.from_random_min) {
        (Some(s), false) => parse_point(s, &model).map_err(|e| e.to_string())?,
        (None, true) => random_start(&model, args.seed),
        _ => return Err("exactly one of --seed-point or --from-random-min is required".into()),
    };
    let base = SaddleConfig::for_model(&model);
    let step = match (args.eta, base.step) {
        (Some(eta), StepPolicy::Fixed { max_step, .. }) => StepPolicy::Fixed { eta, max_step },
        (Some(eta), _) => StepPolicy::Fixed { eta, max_step: None },
        (None, s) => s,
    };
    let config = LandscapeConfig {
        strategy: match args.strategy {
            Strategy::Adjacent => IndexStrategy::Adjacent,
            Strategy::All => IndexStrategy::AllPairs,
        },
        delta: args.delta,
        directions: match args.random_directions {
            Some(count) => PerturbDirections::Random { count },
            None => PerturbDirections::Eigenvectors { count: args.directions },
        },
        attempt_cap: args.cap,
        dedup_tol: args.dedup_tol,
        saddle: SaddleConfig {
            alpha: AlphaSchedule {
                alpha0: args.alpha0,
                ..AlphaSchedule::default()
            },
            step,
            max_iter: args.max_iter.unwrap_or(base.max_iter),
            ..base
        },
        seed: args.seed,
        jobs: args.jobs,
    };
    let graph = build_landscape(&model, &seed_point, &config).map_err(|e| e.to_string())?;
    println!(
        "vertices={} edges={} searches={} truncated={}",
        graph.vertices.len(),
        graph.edges.len(),
        graph.attempts,
        graph.truncated
    );
    for v in &graph.vertices {
        println!("  {:<4} index={} energy={:.10}", v.id, v.point.index, v.point.energy);
    }
    if let Some(path) = &args.out {
        write_file(path, &export_graph(&graph, GraphFormat::Json))?;
    }
    if let Some(path) = &args.dot {
        write_file(path, &export_graph(&graph, GraphFormat::Dot))?;
    }
    Ok(if graph.truncated { EXIT_TRUNCATED } else { EXIT_OK })
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8, String> {
    let checks = match &args.suite {
        Some(name) => verify::run_suite(name, args.trials, args.seed),
        None => verify::run_all(args.trials, args.seed),
    }
    .map_err(|e| e.to_string())?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", checks.len(), failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_USAGE })
}

fn cmd_flow(args: &FlowArgs) -> Result<u8, String> {
    if args.dump_config {
        return Ok(dump(args));
    }
    let model = args.model.build().map_err(|e| e.to_string())?;
    let x0 = parse_point(&args.x0, &model).map_err(|e| e.to_string())?;
    let config = FlowConfig {
        c: args.rate_c,
        direction: args.dir.into(),
        h: args.h,
        t_max: args.t_max,
        grad_tol: args.grad_tol,
        max_speed: (args.max_speed > 0.0).then_some(args.max_speed),
        sample_every: args.sample_every,
        ..FlowConfig::default()
    };
    let traj = match args.mode {
        FlowMode::Descent => gradient_flow(&model, &x0, &config, Direction::Down),
        FlowMode::Ascent => gradient_flow(&model, &x0, &config, Direction::Up),
        FlowMode::Gad | FlowMode::Ihisd => {
            let alpha = if args.mode == FlowMode::Gad { 1.0 } else { args.alpha0 };
            SearchState::from_hessian(&model, x0, args.index, alpha).and_then(|s| integrate_ihisd(&model, &s, &config))
        }
    }
    .map_err(|e| e.to_string())?;
    let last = traj.last().expect("trajectory has samples");
    println!(
        "status={} t={:.6} energy={:.12} grad_norm={:.3e} x={}",
        serde_json::to_value(traj.status).unwrap().as_str().unwrap(),
        last.t,
        last.energy,
        last.grad_norm,
        fmt_vec(&last.x)
    );
    if let Some(path) = &args.traj {
        write_file(path, &traj.to_csv())?;
    }
    Ok(match traj.status {
        TerminalStatus::Converged => EXIT_OK,
        TerminalStatus::TMaxReached => EXIT_NOT_CONVERGED,
        TerminalStatus::Diverged => EXIT_DIVERGED,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Search(a) => cmd_search(a),
        Command::Landscape(a) => cmd_landscape(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Flow(a) => cmd_flow(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
