//! Command-line front end. Every `run_*` function returns the process exit
//! code: 0 success, 1 failed check, 2 input or schema error, 3 no
//! convergence, 4 degenerate or infeasible solution.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{
    self, CheckGradReport, Diagnostics, GradPointReport, LsqDiagnostics, NullspaceDiagnostics,
    PointFile, ResidualsReport, RunReport, StateSpaceFile, StructureFile, TruthFile, VerifyReport,
};
use crate::linalg;
use crate::lsq::{self, LsqPoint, LsqSolution};
use crate::model::{self, eval_structure, generate_instance, AffineStructure, StateSpace, DEFAULT_COND_MAX};
use crate::nullspace::{self, NullBasis, NullspaceSolution, TauVector};
use crate::optim::{self, OptimConfig, OptimResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

/// Sample points whose `T` has condition number above this are redrawn; the
/// same bound the instance generator uses by default.
pub const CHECK_GRAD_COND_MAX: f64 = DEFAULT_COND_MAX;
const DEFAULT_VERIFY_TOL: f64 = 1e-8;
const DEFAULT_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "graybox", version, about = "Recover gray-box parameters from a black-box state-space realization")]
pub struct Cli {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Optimizer configuration as JSON.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Output path (file prefix for `generate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance for `verify` and `check-grad`.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Worker threads for multistart (overrides the config file).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random similarity transform and write a black-box/truth pair.
    Generate(GenerateArgs),
    /// Estimate θ and T for a black-box realization.
    Solve(SolveArgs),
    /// Compare analytic gradients against central differences.
    CheckGrad(CheckGradArgs),
    /// Recompute the similarity residuals of a solution.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub structure: PathBuf,
    /// Comma-separated parameter vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_COND_MAX)]
    pub cond_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nullspace,
    Lsq,
    Pipeline,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Nullspace => "nullspace",
            Method::Lsq => "lsq",
            Method::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value_t = Method::Pipeline)]
    pub method: Method,
    #[arg(long)]
    pub blackbox: PathBuf,
    #[arg(long)]
    pub structure: PathBuf,
    /// Truth file; adds `theta_error` to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Initial `{"theta", "T"}` for `--method lsq` (default: T = I, projected θ).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Write the final stage's objective trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GradTarget {
    Hbar,
    LsqTheta,
    #[value(name = "lsq-T", alias = "lsq-t")]
    LsqT,
    Jacobians,
}

impl GradTarget {
    fn name(self) -> &'static str {
        match self {
            GradTarget::Hbar => "hbar",
            GradTarget::LsqTheta => "lsq-theta",
            GradTarget::LsqT => "lsq-T",
            GradTarget::Jacobians => "jacobians",
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, value_enum)]
    pub which: GradTarget,
    #[arg(long)]
    pub blackbox: PathBuf,
    #[arg(long)]
    pub structure: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Solve report (or any file with `theta_hat`/`T_hat` or `theta`/`T`).
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub blackbox: PathBuf,
    #[arg(long)]
    pub structure: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Exit code for an error that aborted a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Dimension(_)
        | Error::InvalidArgument(_)
        | Error::NonFinite(_)
        | Error::Schema(_)
        | Error::Json(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::NotConverged(_) | Error::LineSearchFailed(_) | Error::NotDescent(_) => EXIT_NOT_CONVERGED,
        Error::Singular { .. }
        | Error::ExcludedSet { .. }
        | Error::EmptyNullSpace
        | Error::NormalizationFailed { .. }
        | Error::InfeasibleStart
        | Error::ProbeNotFinite { .. }
        | Error::AllStartsExcluded { .. } => EXIT_DEGENERATE,
    }
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Generate(a) => run_generate(&cli, a),
        Command::Solve(a) => run_solve(&cli, a),
        Command::CheckGrad(a) => run_check_grad(&cli, a),
        Command::Verify(a) => run_verify(&cli, a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<OptimConfig> {
    let mut config: OptimConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => OptimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok(config)
}

fn load_structure(p: &Path) -> Result<AffineStructure> {
    io::read_json::<StructureFile>(p)?.to_structure()
}

fn load_blackbox(p: &Path) -> Result<StateSpace> {
    io::read_json::<StateSpaceFile>(p)?.to_model()
}

fn load_truth(p: &Path, s: &AffineStructure) -> Result<DVector<f64>> {
    let truth: TruthFile = io::read_json(p)?;
    if truth.theta.len() != s.n_theta() {
        return Err(Error::Dimension(format!(
            "truth theta has length {}, structure expects {}",
            truth.theta.len(),
            s.n_theta()
        )));
    }
    Ok(DVector::from_column_slice(&truth.theta))
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run_generate(cli: &Cli, args: &GenerateArgs) -> Result<i32> {
    let prefix = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("generate needs --out <prefix>".into()))?;
    let s = load_structure(&args.structure)?;
    let theta = DVector::from_vec(args.theta.clone());
    s.check_theta(&theta)?;
    let inst = generate_instance(&s, &theta, cli.seed.unwrap_or(0), args.cond_max)?;

    let truth = TruthFile {
        theta: args.theta.clone(),
        T: io::to_rows(&inst.t),
        structured: StateSpaceFile::from_model(&inst.truth),
    };
    let bb_path = with_suffix(prefix, ".blackbox.json");
    let truth_path = with_suffix(prefix, ".truth.json");
    io::write_json(&bb_path, &StateSpaceFile::from_model(&inst.blackbox))?;
    io::write_json(&truth_path, &truth)?;
    eprintln!(
        "wrote {} and {} (cond(T) = {:.3})",
        bb_path.display(),
        truth_path.display(),
        linalg::condition_number(&inst.t)
    );
    Ok(EXIT_OK)
}

fn nullspace_diagnostics(sol: &NullspaceSolution) -> NullspaceDiagnostics {
    NullspaceDiagnostics {
        status: sol.result.status.to_string(),
        f_s_final: sol.f_s,
        grad_norm: sol.result.grad_norm,
        iterations: sol.result.iterations,
        n_z: sol.n_z,
        cond_t: sol.cond_t,
        starts: sol.starts,
        excluded_starts: sol.excluded_starts,
        residuals: sol.residuals.into(),
        wall_time_ms: sol.wall_time_ms,
        trace: sol.result.trace.clone(),
    }
}

fn lsq_diagnostics(sol: &LsqSolution) -> LsqDiagnostics {
    LsqDiagnostics {
        status: sol.result.status.to_string(),
        objective_initial: sol.initial_objective,
        objective_final: sol.objective,
        grad_norm: sol.result.grad_norm,
        iterations: sol.result.iterations,
        cond_t: sol.cond_t,
        degenerate_t: sol.degenerate_t,
        residuals: sol.residuals.into(),
        wall_time_ms: sol.wall_time_ms,
        trace: sol.result.trace.clone(),
    }
}

/// Final estimate plus what the report needs about the stage that produced it.
struct Outcome<'a> {
    theta: &'a DVector<f64>,
    t: &'a DMatrix<f64>,
    residuals: ResidualsReport,
    objective: f64,
    result: &'a OptimResult,
    degenerate: bool,
}

pub fn run_solve(cli: &Cli, args: &SolveArgs) -> Result<i32> {
    let clock = std::time::Instant::now();
    let config = load_config(cli)?;
    let s = load_structure(&args.structure)?;
    let bb = load_blackbox(&args.blackbox)?;
    s.check_dims(&bb)?;
    let truth = args.truth.as_deref().map(|p| load_truth(p, &s)).transpose()?;

    let mut diagnostics = Diagnostics::default();
    let ns_sol;
    let lsq_sol;
    let outcome = match args.method {
        Method::Nullspace => {
            ns_sol = match nullspace::solve_nullspace(&bb, &s, &config, config.seed) {
                Ok(sol) => sol,
                Err(Error::NotConverged(sol)) => *sol,
                Err(e) => return Err(e),
            };
            diagnostics.nullspace = Some(nullspace_diagnostics(&ns_sol));
            Outcome {
                theta: &ns_sol.theta,
                t: &ns_sol.t,
                residuals: ns_sol.residuals.into(),
                objective: ns_sol.f_s,
                result: &ns_sol.result,
                degenerate: false,
            }
        }
        Method::Lsq => {
            let init = match &args.init {
                Some(p) => {
                    let (theta, t) = io::read_json::<PointFile>(p)?.parse(&s)?;
                    LsqPoint { theta, t }
                }
                None => lsq::default_init(&bb, &s)?,
            };
            lsq_sol = lsq::solve_lsq(&bb, &s, &init, &config)?;
            diagnostics.lsq = Some(lsq_diagnostics(&lsq_sol));
            lsq_outcome(&lsq_sol)
        }
        Method::Pipeline => {
            let p = lsq::solve_pipeline(&bb, &s, &config, config.seed)?;
            diagnostics.nullspace = Some(nullspace_diagnostics(&p.nullspace));
            diagnostics.lsq = Some(lsq_diagnostics(&p.lsq));
            lsq_sol = p.lsq;
            lsq_outcome(&lsq_sol)
        }
    };

    let theta_error = truth.as_ref().map(|t| io::theta_error(outcome.theta, t)).transpose()?;
    let report = RunReport {
        method: args.method.name().to_string(),
        theta_hat: outcome.theta.iter().copied().collect(),
        T_hat: io::to_rows(outcome.t),
        residuals: outcome.residuals,
        objective_final: outcome.objective,
        theta_error,
        timing_ms: clock.elapsed().as_secs_f64() * 1e3,
        status: outcome.result.status.to_string(),
        diagnostics,
    };
    emit(cli.out.as_deref(), &report)?;
    if let Some(p) = &args.trace {
        std::fs::write(p, outcome.result.trace_csv())?;
    }

    eprintln!(
        "{}: status {}, max residual {:.3e}, {} iterations",
        report.method,
        report.status,
        report.residuals.max(),
        outcome.result.iterations
    );
    if outcome.degenerate {
        eprintln!("warning: estimated T is numerically singular");
        return Ok(EXIT_DEGENERATE);
    }
    if !outcome.result.status.is_converged() {
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn lsq_outcome(sol: &LsqSolution) -> Outcome<'_> {
    Outcome {
        theta: &sol.theta,
        t: &sol.t,
        residuals: sol.residuals.into(),
        objective: sol.objective,
        result: &sol.result,
        degenerate: sol.degenerate_t,
    }
}

fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn well_conditioned(t: &DMatrix<f64>) -> bool {
    linalg::condition_number(t) <= CHECK_GRAD_COND_MAX
}

/// One gradient comparison at a random point: `None` asks for a redraw.
fn grad_sample(
    which: GradTarget,
    bb: &StateSpace,
    s: &AffineStructure,
    basis: &NullBasis,
    proj: &nullspace::ProjectionOperator,
    rel_tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, String)>> {
    let dims = s.dims();
    let n_x = dims.n_x;
    let probe = |r: Result<optim::GradCheck>| match r {
        Ok(c) => Ok(Some((c.max_rel_err, c.worst_coord.to_string()))),
        Err(Error::ProbeNotFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    match which {
        GradTarget::Hbar => {
            let alpha = gaussian_vector(basis.n_alpha(), rng);
            let tau = nullspace::tau_of_alpha(basis, &alpha)?;
            if !well_conditioned(&tau.t_block()) {
                return Ok(None);
            }
            let g = nullspace::grad_hbar(&alpha, basis, proj)?;
            probe(optim::check_gradient(
                |a: &DVector<f64>| nullspace::hbar(a, basis, proj).unwrap_or(f64::INFINITY),
                |_: &DVector<f64>| g.clone(),
                &alpha,
                rel_tol,
            ))
        }
        GradTarget::LsqTheta | GradTarget::LsqT => {
            let theta = gaussian_vector(s.n_theta(), rng);
            let t = DMatrix::from_fn(n_x, n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
            if !well_conditioned(&t) {
                return Ok(None);
            }
            if which == GradTarget::LsqTheta {
                let g = lsq::grad_theta(bb, s, &theta, &t)?;
                probe(optim::check_gradient(
                    |th: &DVector<f64>| lsq::objective(bb, s, th, &t).unwrap_or(f64::NAN),
                    |_: &DVector<f64>| g.clone(),
                    &theta,
                    rel_tol,
                ))
            } else {
                let g = model::vec(&lsq::grad_t(bb, s, &theta, &t)?);
                probe(optim::check_gradient(
                    |x: &DVector<f64>| {
                        let tt = DMatrix::from_column_slice(n_x, n_x, x.as_slice());
                        lsq::objective(bb, s, &theta, &tt).unwrap_or(f64::NAN)
                    },
                    |_: &DVector<f64>| g.clone(),
                    &model::vec(&t),
                    rel_tol,
                ))
            }
        }
        GradTarget::Jacobians => {
            let mut v = gaussian_vector(dims.n_tau(), rng);
            v[dims.n_tau() - 1] = 1.0;
            let tau = TauVector::new(dims, v.clone())?;
            if !well_conditioned(&tau.t_block()) {
                return Ok(None);
            }
            let jac = nullspace::jacobians(&tau)?.stacked();
            let f = |x: &DVector<f64>| {
                TauVector::new(dims, x.clone())
                    .and_then(|t| nullspace::gamma(&t))
                    .unwrap_or_else(|_| DVector::from_element(dims.n_delta(), f64::NAN))
            };
            match optim::check_jacobian(f, &jac, &v, rel_tol) {
                Ok(c) => Ok(Some((c.max_rel_err, format!("{},{}", c.worst_row, c.worst_col)))),
                Err(Error::ProbeNotFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        }
    }
}

pub fn run_check_grad(cli: &Cli, args: &CheckGradArgs) -> Result<i32> {
    let rel_tol = cli.tol.unwrap_or(DEFAULT_GRAD_TOL);
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("--tol must be positive (got {rel_tol})")));
    }
    let s = load_structure(&args.structure)?;
    let bb = load_blackbox(&args.blackbox)?;
    s.check_dims(&bb)?;
    let seed = cli.seed.unwrap_or(0);
    let basis = NullBasis::from_blackbox(&bb, seed)?;
    let proj = nullspace::projection_operator(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);

    let max_draws = 1000 * args.points.max(1);
    let mut draws = 0;
    let mut resampled = 0;
    let mut points = Vec::with_capacity(args.points);
    let mut stdout = std::io::stdout().lock();
    while points.len() < args.points {
        if draws >= max_draws {
            return Err(Error::InvalidArgument(format!(
                "could not find {} well-conditioned sample points in {max_draws} draws",
                args.points
            )));
        }
        draws += 1;
        match grad_sample(args.which, &bb, &s, &basis, &proj, rel_tol, &mut rng)? {
            None => resampled += 1,
            Some((err, worst)) => {
                let pass = err <= rel_tol;
                writeln!(
                    stdout,
                    "point {:>4}: max_rel_err {err:.3e} at {worst} {}",
                    points.len(),
                    if pass { "ok" } else { "FAIL" }
                )?;
                points.push(GradPointReport {
                    index: points.len(),
                    max_rel_err: err,
                    worst,
                    pass,
                });
            }
        }
    }
    drop(stdout);

    let max_rel_err = points.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    let report = CheckGradReport {
        which: args.which.name().to_string(),
        rel_tol,
        resampled,
        max_rel_err,
        pass: points.iter().all(|p| p.pass),
        points,
    };
    if let Some(p) = &cli.out {
        io::write_json(p, &report)?;
    }
    eprintln!(
        "{}: {} points, {} resampled, max relative error {:.3e} ({})",
        report.which,
        report.points.len(),
        report.resampled,
        report.max_rel_err,
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn run_verify(cli: &Cli, args: &VerifyArgs) -> Result<i32> {
    let tol = cli.tol.unwrap_or(DEFAULT_VERIFY_TOL);
    let s = load_structure(&args.structure)?;
    let bb = load_blackbox(&args.blackbox)?;
    s.check_dims(&bb)?;
    let (theta, t) = io::read_json::<PointFile>(&args.result)?.parse(&s)?;
    let truth = args.truth.as_deref().map(|p| load_truth(p, &s)).transpose()?;

    let residuals: ResidualsReport = model::residuals(&bb, &t, &eval_structure(&s, &theta)?)?.into();
    let max_residual = residuals.max();
    let report = VerifyReport {
        residuals,
        max_residual,
        tol,
        theta_error: truth.as_ref().map(|tr| io::theta_error(&theta, tr)).transpose()?,
        pass: max_residual <= tol,
    };
    emit(cli.out.as_deref(), &report)?;
    if cli.out.is_some() {
        eprintln!("max residual {max_residual:.3e} (tol {tol:e})");
    }
    Ok(if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "graybox", "generate", "--structure", "s.json", "--theta", "-1,2.5", "--seed", "7", "--out", "x",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(7));
        match cli.command {
            Command::Generate(g) => assert_eq!(g.theta, vec![-1.0, 2.5]),
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from([
            "graybox", "check-grad", "--which", "lsq-T", "--blackbox", "b", "--structure", "s",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::CheckGrad(CheckGradArgs { which: GradTarget::LsqT, .. })));
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Schema("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::Dimension("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::ExcludedSet { ratio: 0.0 }), EXIT_DEGENERATE);
        assert_eq!(exit_code(&Error::AllStartsExcluded { starts: 1 }), EXIT_DEGENERATE);
        assert_eq!(exit_code(&Error::LineSearchFailed(3)), EXIT_NOT_CONVERGED);
    }
}
