//! Command-line front end for `ensemble-oc`.
//!
//! Every command resolves a problem (catalog id or JSON file), applies the
//! common overrides and writes its artifacts into `--out`.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ensemble_oc::catalog::{self, build_by_name};
use ensemble_oc::{
    ensemble_mean, ensemble_std, fd_gradient, grid_times, solve_with_log, verify, ControlSchedule, EnsembleTrajectory,
    FdStep, OcError, OcProblem, OptimalityReport, Overrides, ProblemFile, ShootingPlan, SolveReport, SolveStatus,
    SolverConfig, VerifyConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Pass threshold of `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "ensemble-oc",
    version,
    about = "Ensemble optimal control under uncertain initial conditions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the built-in problems.
    List,
    /// Solve a problem and write controls, ensemble statistics and a report.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Warm start from a controls CSV on the same grid.
        #[arg(long = "initial-controls")]
        initial_controls: Option<PathBuf>,
    },
    /// Check a controls CSV against the pointwise Hamiltonian minimizer.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        controls: PathBuf,
    },
    /// Propagate the ensemble under given (or zero) controls.
    Propagate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Compare backward gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Controls to differentiate at; random in-bounds values otherwise.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Catalog problem id (see `list`).
    #[arg(long, conflicts_with = "problem_file", required_unless_present = "problem_file")]
    pub problem: Option<String>,
    /// JSON problem definition.
    #[arg(long = "problem-file")]
    pub problem_file: Option<PathBuf>,
    /// Ensemble size.
    #[arg(long = "M")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, env = "ENSEMBLE_OC_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Budget on inner iterations over the whole solve.
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub segments: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Oc(OcError),
    Io { path: PathBuf, source: io::Error },
    Input(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Oc(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Input(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<OcError> for CliError {
    fn from(e: OcError) -> Self {
        CliError::Oc(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The run finished but did not meet its criterion (no convergence,
    /// failed verification or gradient check).
    Unmet,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Unmet => 2,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::List => {
            let mut out = io::stdout().lock();
            for entry in catalog::list() {
                writeln!(out, "{:<16} {}", entry.id.as_str(), entry.description)
                    .map_err(io_err(Path::new("<stdout>")))?;
            }
            Ok(Outcome::Success)
        }
        Command::Solve {
            common,
            initial_controls,
        } => run_solve(&common, initial_controls.as_deref()),
        Command::Verify { common, controls } => run_verify(&common, &controls),
        Command::Propagate { common, controls } => run_propagate(&common, controls.as_deref()),
        Command::Gradcheck { common, controls } => run_gradcheck(&common, controls.as_deref()),
    }
}

fn configure_workers(workers: Option<usize>) -> Result<(), CliError> {
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Input("--workers must be >= 1".into()));
        }
        // A pool built earlier in the same process is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    Ok(())
}

/// Builds the problem named by `--problem` or `--problem-file` with the
/// common overrides applied.
pub fn load_problem(args: &CommonArgs) -> Result<OcProblem, CliError> {
    configure_workers(args.workers)?;
    match (&args.problem, &args.problem_file) {
        (Some(id), None) => {
            let o = Overrides {
                samples: args.samples,
                seed: args.seed,
                dt: args.dt,
                segments: args.segments,
                ..Default::default()
            };
            Ok(build_by_name(id, &o)?)
        }
        (None, Some(path)) => {
            let mut file = ProblemFile::load(path)?;
            if let Some(m) = args.samples {
                file.samples = m;
            }
            if let Some(s) = args.seed {
                file.seed = s;
            }
            if args.dt.is_some() || args.segments.is_some() {
                let h = file.horizon.as_mut().ok_or_else(|| {
                    CliError::Input("--dt/--segments need a problem file with a `horizon` entry".into())
                })?;
                if let Some(dt) = args.dt {
                    h.dt = dt;
                }
                if let Some(s) = args.segments {
                    h.segments = s;
                }
            }
            Ok(file.into_problem()?)
        }
        _ => Err(CliError::Input(
            "give exactly one of --problem and --problem-file".into(),
        )),
    }
}

pub fn solver_config(args: &CommonArgs) -> Result<SolverConfig, CliError> {
    let mut config = SolverConfig::default();
    if let Some(tol) = args.tol {
        config.inner_tolerance = tol;
        config.outer_tolerance = tol;
    }
    if let Some(it) = args.max_iters {
        config.max_total_iterations = it;
    }
    config.validate()?;
    Ok(config)
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t, u_1..u_m`, one row per control grid point.
pub fn write_controls(path: &Path, plan: &ShootingPlan, controls: &ControlSchedule) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=controls.control_dim()).map(|c| format!("u_{c}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, row) in plan.control_times().iter().zip(controls.rows()) {
        let mut rec = vec![fmt_f(*t)];
        rec.extend(row.iter().map(|v| fmt_f(*v)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a controls CSV written by [`write_controls`] and checks it against
/// the problem's control grid.
pub fn read_controls(path: &Path, problem: &OcProblem) -> Result<ControlSchedule, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let m = problem.control_dim();
    let columns = r.headers().map_err(csv_err(path))?.len();
    if columns != m + 1 {
        return Err(CliError::Input(format!(
            "{}: expected {} columns (t and {m} controls), got {columns}",
            path.display(),
            m + 1
        )));
    }
    let mut flat = Vec::new();
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: row {}: cannot parse `{field}` as a number",
                    path.display(),
                    line + 1
                ))
            })?;
            flat.push(v);
        }
        rows += 1;
    }
    let expected = problem.plan.total_steps();
    if rows != expected {
        return Err(CliError::Input(format!(
            "control grid mismatch: the problem expects N={expected} control points, {} has N={rows}",
            path.display()
        )));
    }
    Ok(ControlSchedule::from_flat(&problem.plan, m, &flat)?)
}

/// Writes `t, mean_1..mean_n, std_1..std_n` at every grid time.
pub fn write_ensemble_stats(path: &Path, traj: &EnsembleTrajectory) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let n = traj.final_state().dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|d| format!("mean_{d}")));
    header.extend((1..=n).map(|d| format!("std_{d}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, state) in grid_times(traj.plan()).iter().zip(traj.states()) {
        let mut rec = vec![fmt_f(*t)];
        rec.extend(ensemble_mean(state)?.into_iter().map(fmt_f));
        rec.extend(ensemble_std(state)?.into_iter().map(fmt_f));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub problem: &'a str,
    pub samples: usize,
    pub seed: u64,
    pub segments: usize,
    pub control_points: usize,
    #[serde(flatten)]
    pub solve: &'a SolveReport,
    pub solver: &'a SolverConfig,
}

fn run_solve(args: &CommonArgs, initial: Option<&Path>) -> Result<Outcome, CliError> {
    let problem = load_problem(args)?;
    let config = solver_config(args)?;
    create_out(&args.out)?;
    let tr = problem.instantiate()?;
    let start = match initial {
        Some(path) => read_controls(path, &problem)?,
        None => ControlSchedule::zeros(&problem.plan, problem.control_dim()),
    };
    let guess = tr.initial_guess(&start)?;

    let log_path = args.out.join("iterations.log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut log_error = None;
    let _ = writeln!(log, "# iteration merit grad_norm step continuity");
    let report = solve_with_log(&tr, &guess, &config, |rec| {
        if let Err(e) = writeln!(log, "{}", rec.log_line()) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(io_err(&log_path)(e));
    }
    log.flush().map_err(io_err(&log_path))?;

    let controls = tr.schedule(&report.point(&tr)?)?;
    write_controls(&args.out.join("controls.csv"), &problem.plan, &controls)?;
    match tr.simulate(&controls) {
        Ok(traj) => write_ensemble_stats(&args.out.join("ensemble_stats.csv"), &traj)?,
        Err(e) if report.status == SolveStatus::PropagationFailure => {
            eprintln!("warning: ensemble_stats.csv not written: {e}");
        }
        Err(e) => return Err(e.into()),
    }
    let run = RunReport {
        problem: &problem.name,
        samples: problem.samples,
        seed: problem.seed,
        segments: problem.plan.segment_count(),
        control_points: problem.plan.total_steps(),
        solve: &report,
        solver: &config,
    };
    write_json(&args.out.join("report.json"), &run)?;
    eprintln!(
        "{:?}: objective {:.6e}, continuity {:.3e}, {} inner iterations",
        report.status, report.objective, report.continuity, report.inner_iterations
    );
    Ok(if report.status.is_converged() {
        Outcome::Success
    } else {
        Outcome::Unmet
    })
}

#[derive(Debug, Serialize)]
struct VerifySummary<'a> {
    problem: &'a str,
    samples: usize,
    seed: u64,
    max_discrepancy: f64,
    mean_discrepancy: f64,
    fraction_within: f64,
    control_range: f64,
    config: VerifyConfig,
    passed: bool,
    bang_bang: bool,
    note: &'static str,
}

fn run_verify(args: &CommonArgs, controls: &Path) -> Result<Outcome, CliError> {
    let problem = load_problem(args)?;
    let candidate = read_controls(controls, &problem)?;
    create_out(&args.out)?;
    let report: OptimalityReport = verify(
        &problem,
        &candidate,
        problem.samples,
        problem.seed,
        &VerifyConfig::default(),
    )?;
    let csv_path = args.out.join("pmp_report.csv");
    report
        .write_csv(File::create(&csv_path).map_err(io_err(&csv_path))?)
        .map_err(io_err(&csv_path))?;
    let summary = VerifySummary {
        problem: &problem.name,
        samples: problem.samples,
        seed: problem.seed,
        max_discrepancy: report.max_discrepancy,
        mean_discrepancy: report.mean_discrepancy,
        fraction_within: report.fraction_within,
        control_range: report.control_range,
        config: report.config,
        passed: report.passed,
        bang_bang: report.bang_bang,
        note: report.note,
    };
    write_json(&args.out.join("pmp_summary.json"), &summary)?;
    eprintln!(
        "max discrepancy {:.4e}, mean {:.4e}, range {}: {}",
        report.max_discrepancy,
        report.mean_discrepancy,
        report.control_range,
        if report.passed { "passed" } else { "failed" }
    );
    Ok(if report.passed {
        Outcome::Success
    } else {
        Outcome::Unmet
    })
}

fn run_propagate(args: &CommonArgs, controls: Option<&Path>) -> Result<Outcome, CliError> {
    let problem = load_problem(args)?;
    let controls = match controls {
        Some(path) => read_controls(path, &problem)?,
        None => ControlSchedule::zeros(&problem.plan, problem.control_dim()),
    };
    create_out(&args.out)?;
    let tr = problem.instantiate()?;
    let traj = tr.simulate(&controls)?;
    write_ensemble_stats(&args.out.join("ensemble_stats.csv"), &traj)?;
    Ok(Outcome::Success)
}

/// Random controls drawn uniformly inside each channel's bounds (or in
/// `[-1, 1]` for unbounded channels).
pub fn random_controls(problem: &OcProblem, seed: u64) -> Result<ControlSchedule, CliError> {
    let m = problem.control_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..problem.plan.total_steps() * m)
        .map(|i| match problem.control_bound(i % m) {
            Some(b) => rng.random_range(b.lo..b.hi),
            None => rng.random_range(-1.0..1.0),
        })
        .collect();
    Ok(ControlSchedule::from_flat(&problem.plan, m, &flat)?)
}

#[derive(Debug, Serialize)]
struct GradcheckSummary<'a> {
    problem: &'a str,
    samples: usize,
    seed: u64,
    coordinates: usize,
    max_error: f64,
    max_gradient: f64,
    tolerance: f64,
    passed: bool,
}

fn run_gradcheck(args: &CommonArgs, controls: Option<&Path>) -> Result<Outcome, CliError> {
    let problem = load_problem(args)?;
    let controls = match controls {
        Some(path) => read_controls(path, &problem)?,
        None => random_controls(&problem, problem.seed)?,
    };
    create_out(&args.out)?;
    let tr = problem.instantiate()?;
    let point = tr.initial_guess(&controls)?;
    let len = problem.plan.total_steps() * problem.control_dim();
    let (_, grad) = tr.objective_and_gradient(&point)?;
    let exact = &grad[..len];
    let mut probe = point.clone();
    let fd = fd_gradient(
        |u: &[f64]| {
            probe.controls_mut().copy_from_slice(u);
            tr.evaluate_objective(&probe)
        },
        point.controls(),
        FdStep::default(),
    )?;

    let path = args.out.join("gradcheck.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["t", "channel", "backward", "finite_difference", "abs_error"])
        .map_err(csv_err(&path))?;
    let m = problem.control_dim();
    let times = problem.plan.control_times();
    let mut max_error = 0.0f64;
    for (i, (e, f)) in exact.iter().zip(&fd).enumerate() {
        let err = (e - f).abs();
        max_error = max_error.max(err);
        w.write_record([
            fmt_f(times[i / m]),
            (i % m + 1).to_string(),
            fmt_f(*e),
            fmt_f(*f),
            fmt_f(err),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let passed = max_error <= GRADCHECK_TOLERANCE;
    let summary = GradcheckSummary {
        problem: &problem.name,
        samples: problem.samples,
        seed: problem.seed,
        coordinates: len,
        max_error,
        max_gradient: exact.iter().fold(0.0, |a, v| a.max(v.abs())),
        tolerance: GRADCHECK_TOLERANCE,
        passed,
    };
    write_json(&args.out.join("gradcheck.json"), &summary)?;
    eprintln!("max |backward - fd| = {max_error:.3e} over {len} coordinates");
    Ok(if passed { Outcome::Success } else { Outcome::Unmet })
}
