//! `smd` command-line front end.
//!
//! Exit codes: 0 success, 1 input validation error, 2 numerical failure
//! (ill-conditioning, residual floor, censoring, failed comparison),
//! 3 no interior minimum in the optimisation bracket.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mc::{self, Comparison, McConfig, McError, StartState};
use crate::model::{eval_t1_special, Geometry, ModelError, ProblemParams, Transport};
use crate::solver::{self, MeanConvention, Mode, SolveError, SolverConfig, SpectralSolution};
use crate::sweep::{self, Scale, SweepError, SweepSpec};

pub const SEED_ENV: &str = "SMD_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "smd",
    version,
    about = "Mean first-passage times for surface-mediated diffusion in a disk"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Disk radius
    #[arg(long = "R", global = true)]
    pub radius: Option<f64>,
    /// Surface diffusion coefficient
    #[arg(long = "D1", global = true)]
    pub d1: Option<f64>,
    /// Bulk diffusion coefficient
    #[arg(long = "D2", global = true)]
    pub d2: Option<f64>,
    /// Desorption rate
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Ejection distance below the boundary
    #[arg(long, global = true)]
    pub a: Option<f64>,
    /// Target half-width (rad)
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Target center (rad)
    #[arg(long = "target-center", global = true, allow_negative_numbers = true)]
    pub target_center: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Carry the linear-in-angle coefficient as an unknown (experimental)
    #[arg(long, global = true)]
    pub gamma: bool,
    /// Truncation order N
    #[arg(long, global = true)]
    pub order: Option<usize>,
    /// Monte Carlo paths
    #[arg(long, global = true)]
    pub paths: Option<u64>,
    /// Monte Carlo time step (both phases)
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Monte Carlo master seed (falls back to $SMD_SEED)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mean: Option<MeanConvention>,
    /// JSON configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (default: stdout)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One spectral solve
    Solve {
        /// Write a `theta,t1` profile with this many points instead of the summary
        #[arg(long)]
        profile: Option<usize>,
    },
    /// Closed-form branch (lambda = 0 or a = R)
    Special {
        #[arg(long)]
        profile: Option<usize>,
    },
    /// Monte Carlo estimate
    Simulate {
        #[command(flatten)]
        start: StartArgs,
    },
    /// Spectral solve, Monte Carlo estimate and z-score
    Compare {
        /// Relative discretisation allowance added to the 3-sigma band
        #[arg(long, default_value_t = 0.02)]
        allowance: f64,
    },
    /// Mean MFPT over a lambda grid
    Sweep {
        #[arg(long = "lambda-min")]
        lambda_min: f64,
        #[arg(long = "lambda-max")]
        lambda_max: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
        #[arg(long, value_enum, default_value_t = Scale::Log)]
        scale: Scale,
    },
    /// Golden-section search for the lambda minimising the mean MFPT
    Optimize {
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Mean MFPT and boundary residual over several truncation orders
    Converge {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        orders: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, Default, Args)]
pub struct StartArgs {
    /// Start on the surface at this angle (default: uniform over the off-target arc)
    #[arg(long = "start-theta")]
    pub start_theta: Option<f64>,
    /// Start in the bulk at this radius (needs --start-theta)
    #[arg(long = "start-r")]
    pub start_r: Option<f64>,
}

/// Fully resolved configuration; also the schema of `--config` files, where
/// every field is optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ProblemParams,
    pub solver: SolverConfig,
    pub mc: McConfig,
    pub mean: MeanConvention,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    params: Option<Value>,
    solver: Option<Value>,
    mc: Option<Value>,
    mean: Option<MeanConvention>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    NoInteriorMinimum(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::NoInteriorMinimum(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::NoInteriorMinimum(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Model(m) => m.into(),
            SolveError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Model(m) => m.into(),
            McError::InvalidConfig(_) | McError::InvalidStart(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Solve(s) => s.into(),
            SweepError::NoInteriorMinimum { .. } => CliError::NoInteriorMinimum(e.to_string()),
            SweepError::InvalidSpec(_) | SweepError::Parse { .. } | SweepError::Io(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o: {e}"))
    }
}

fn default_params() -> ProblemParams {
    ProblemParams {
        geometry: Geometry {
            radius: 1.0,
            target_center: 0.0,
            target_half_width: 0.3,
        },
        transport: Transport::new(1.0, 1.0, 1.0, 0.1),
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn layered<T: Serialize + serde::de::DeserializeOwned>(
    base: &T,
    overlay: Option<Value>,
    what: &str,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(base).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(o) = overlay {
        merge(&mut v, o);
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("config `{what}`: {e}")))
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Builds the effective configuration: flags over the config file over
/// `$SMD_SEED` over built-in defaults.
pub fn resolve_config(args: &CommonArgs, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(path) => read_file_config(path)?,
        None => FileConfig::default(),
    };

    let mut params = layered(&default_params(), file.params, "params")?;
    let g = &mut params.geometry;
    let t = &mut params.transport;
    if let Some(v) = args.radius {
        g.radius = v;
    }
    if let Some(v) = args.eps {
        g.target_half_width = v;
    }
    if let Some(v) = args.target_center {
        g.target_center = v;
    }
    g.target_center = crate::model::wrap_angle(g.target_center);
    if let Some(v) = args.d1 {
        t.d1 = v;
    }
    if let Some(v) = args.d2 {
        t.d2 = v;
    }
    if let Some(v) = args.lambda {
        t.lambda = v;
    }
    if let Some(v) = args.a {
        t.a = v;
    }
    params.validate()?;

    let mut solver = layered(&SolverConfig::default(), file.solver, "solver")?;
    if let Some(mode) = args.mode {
        solver.mode = mode;
    }
    if args.gamma {
        solver.gamma_enabled = true;
    }
    if let Some(order) = args.order {
        solver.order = order;
    }
    solver.validate()?;

    let mut mc_base = McConfig::for_params(&params);
    if let Some(s) = env_seed {
        mc_base.seed = s
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("{SEED_ENV}=`{s}`: {e}")))?;
    }
    let mut mc = layered(&mc_base, file.mc, "mc")?;
    if let Some(p) = args.paths {
        mc.paths = p;
    }
    if let Some(dt) = args.dt {
        mc = mc.with_dt(dt);
    }
    if let Some(seed) = args.seed {
        mc.seed = seed;
    }
    mc.validate(&params)?;

    let mean = args.mean.or(file.mean).unwrap_or(MeanConvention::Average);
    Ok(RunConfig {
        params,
        solver,
        mc,
        mean,
    })
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code. Output goes to `stdout` unless `--out` is given; the effective
/// configuration and errors go to `stderr`.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
            };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(&cli, env_seed.as_deref(), stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn with_output<F>(out: &Option<PathBuf>, stdout: &mut dyn Write, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match out {
        Some(path) => {
            let mut w =
                BufWriter::new(File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(stdout)?,
    }
    Ok(())
}

fn json_line(w: &mut dyn Write, value: &impl Serialize) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)
}

#[derive(Serialize)]
struct SolveSummary {
    mean_mfpt: f64,
    convention: MeanConvention,
    boundary_residual_sup: f64,
    boundary_residual_l2: f64,
    ode_residual_max: f64,
    condition_estimate: f64,
    degenerate: bool,
    mode: Mode,
}

impl SolveSummary {
    fn new(s: &SpectralSolution, convention: MeanConvention) -> Self {
        SolveSummary {
            mean_mfpt: s.mean(convention),
            convention,
            boundary_residual_sup: s.boundary_residual_sup,
            boundary_residual_l2: s.boundary_residual_l2,
            ode_residual_max: s.ode_residual_max,
            condition_estimate: s.condition_estimate,
            degenerate: s.degenerate,
            mode: s.mode,
        }
    }

    fn write(&self, w: &mut dyn Write, format: Format) -> std::io::Result<()> {
        match format {
            Format::Json => json_line(w, self),
            Format::Csv => {
                writeln!(
                    w,
                    "mean_mfpt,convention,boundary_residual_sup,boundary_residual_l2,ode_residual_max,condition_estimate,degenerate,mode"
                )?;
                let conv = match self.convention {
                    MeanConvention::Integral => "integral",
                    MeanConvention::Average => "average",
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    self.mean_mfpt,
                    conv,
                    self.boundary_residual_sup,
                    self.boundary_residual_l2,
                    self.ode_residual_max,
                    self.condition_estimate,
                    self.degenerate,
                    self.mode
                )
            }
        }
    }
}

pub const PROFILE_HEADER: &str = "theta,t1";

fn write_profile(w: &mut dyn Write, rows: &[(f64, f64)], format: Format) -> std::io::Result<()> {
    match format {
        Format::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|(theta, t1)| serde_json::json!({"theta": theta, "t1": t1}))
                .collect();
            json_line(w, &v)
        }
        Format::Csv => {
            writeln!(w, "{PROFILE_HEADER}")?;
            for (theta, t1) in rows {
                writeln!(w, "{theta},{t1}")?;
            }
            Ok(())
        }
    }
}

fn solve_output(
    solution: &SpectralSolution,
    cfg: &RunConfig,
    profile: Option<usize>,
    common: &CommonArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let summary = SolveSummary::new(solution, cfg.mean);
    match profile {
        Some(points) => {
            if points < 2 {
                return Err(CliError::Usage("--profile needs at least 2 points".into()));
            }
            summary.write(stderr, common.format)?;
            let rows = solution.profile(points)?;
            with_output(&common.out, stdout, |w| write_profile(w, &rows, common.format))
        }
        None => with_output(&common.out, stdout, |w| summary.write(w, common.format)),
    }
}

fn start_state(args: &StartArgs) -> Result<StartState, CliError> {
    match (args.start_r, args.start_theta) {
        (None, None) => Ok(StartState::UniformOffTargetSurface),
        (None, Some(theta)) => Ok(StartState::Surface { theta }),
        (Some(r), Some(theta)) => Ok(StartState::Bulk { r, theta }),
        (Some(_), None) => Err(CliError::Usage("--start-r needs --start-theta".into())),
    }
}

fn execute(cli: &Cli, env_seed: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.common, env_seed)?;
    let echo = serde_json::to_string(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(stderr, "# effective configuration: {echo}")?;
    let common = &cli.common;
    let fmt = common.format;

    match &cli.command {
        Command::Solve { profile } => {
            let solution = solver::solve(&cfg.params, &cfg.solver)?;
            solve_output(&solution, &cfg, *profile, common, stdout, stderr)
        }
        Command::Special { profile } => {
            // Validates that the closed form applies.
            eval_t1_special(&cfg.params, std::f64::consts::PI)?;
            let solution = solver::solve(&cfg.params, &cfg.solver)?;
            solve_output(&solution, &cfg, *profile, common, stdout, stderr)
        }
        Command::Simulate { start } => {
            let start = start_state(start)?;
            let est = mc::estimate_mfpt(&cfg.params, start, &cfg.mc)?;
            if est.is_degenerate_sample() {
                writeln!(stderr, "warning: degenerate sample, standard error is zero")?;
            }
            with_output(&common.out, stdout, |w| match fmt {
                Format::Json => json_line(
                    w,
                    &serde_json::json!({
                        "mean": est.mean,
                        "stderr": est.stderr,
                        "paths": est.paths_used,
                        "censored": est.censored,
                        "desorptions": est.desorptions,
                    }),
                ),
                Format::Csv => {
                    writeln!(w, "mean,stderr,paths,censored,desorptions")?;
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        est.mean, est.stderr, est.paths_used, est.censored, est.desorptions
                    )
                }
            })
        }
        Command::Compare { allowance } => {
            if !(allowance.is_finite() && *allowance >= 0.0) {
                return Err(CliError::Usage(format!("--allowance must be >= 0, got {allowance}")));
            }
            let solution = solver::solve(&cfg.params, &cfg.solver)?;
            // The simulator starts uniformly over the off-target arc, so it
            // estimates the arc average whatever --mean says.
            let spectral = solution.mean(MeanConvention::Average);
            let est = mc::estimate_mfpt(&cfg.params, StartState::UniformOffTargetSurface, &cfg.mc)?;
            let cmp = Comparison::new(spectral, &est)?;
            with_output(&common.out, stdout, |w| match fmt {
                Format::Json => json_line(w, &cmp),
                Format::Csv => {
                    writeln!(w, "spectral_mean,mc_mean,mc_stderr,zscore,paths,censored")?;
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        cmp.spectral_mean, cmp.mc_mean, cmp.mc_stderr, cmp.zscore, cmp.paths, cmp.censored
                    )
                }
            })?;
            if mc::agrees(spectral, &est, 3.0, *allowance) {
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "spectral and Monte Carlo disagree: z = {:.3}, |diff| = {:.3e} > 3 stderr + {allowance} x spectral",
                    cmp.zscore,
                    (spectral - est.mean).abs()
                )))
            }
        }
        Command::Sweep {
            lambda_min,
            lambda_max,
            points,
            scale,
        } => {
            let spec = SweepSpec {
                lambda_min: *lambda_min,
                lambda_max: *lambda_max,
                points: *points,
                scale: *scale,
            };
            let rows = sweep::sweep_lambda(&cfg.params, &spec, &cfg.solver, cfg.mean)?;
            let mut records = Vec::with_capacity(rows.len());
            let mut failed = 0;
            for row in rows {
                match row.outcome {
                    Ok(r) => records.push(r),
                    Err(e) => {
                        failed += 1;
                        writeln!(stderr, "lambda = {}: {e}", row.lambda)?;
                    }
                }
            }
            with_output(&common.out, stdout, |w| match fmt {
                Format::Json => json_line(w, &records),
                Format::Csv => sweep::write_sweep_csv(w, &records),
            })?;
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} sweep point(s) failed")));
            }
            Ok(())
        }
        Command::Optimize { lo, hi, tol } => {
            let m = sweep::optimize_lambda(&cfg.params, (*lo, *hi), *tol, &cfg.solver, cfg.mean)?;
            with_output(&common.out, stdout, |w| match fmt {
                Format::Json => json_line(
                    w,
                    &serde_json::json!({"lambda_star": m.x, "mean_mfpt_star": m.value, "evaluations": m.evaluations}),
                ),
                Format::Csv => {
                    writeln!(w, "lambda_star,mean_mfpt_star,evaluations")?;
                    writeln!(w, "{},{},{}", m.x, m.value, m.evaluations)
                }
            })
        }
        Command::Converge { orders } => {
            let rows = solver::convergence_study(&cfg.params, &cfg.solver, orders, cfg.mean)?;
            with_output(&common.out, stdout, |w| match fmt {
                Format::Json => {
                    let v: Vec<_> = rows
                        .iter()
                        .map(|r| match &r.outcome {
                            Ok((mean, l2)) => serde_json::json!({"order": r.order, "mean_mfpt": mean, "boundary_residual_l2": l2, "status": "ok"}),
                            Err(e) => serde_json::json!({"order": r.order, "status": e.to_string()}),
                        })
                        .collect();
                    json_line(w, &v)
                }
                Format::Csv => {
                    writeln!(w, "order,mean_mfpt,boundary_residual_l2,status")?;
                    for r in &rows {
                        match &r.outcome {
                            Ok((mean, l2)) => writeln!(w, "{},{},{},ok", r.order, mean, l2)?,
                            Err(e) => writeln!(w, "{},,,\"{}\"", r.order, e.to_string().replace('"', "'"))?,
                        }
                    }
                    Ok(())
                }
            })
        }
    }
}
