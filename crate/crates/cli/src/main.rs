use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use st_hdg_core::projection::{measure_projection_rates, rates_to_csv, RateStudy};
use st_hdg_core::report::{
    execute_run, profile_file_name, run_study, ProblemKind, RunConfig, StudyKind, StudySpec,
};
use st_hdg_core::slab::{read_checkpoint, SolverChoice};
use st_hdg_core::waves::HarmonicWave;
use st_hdg_core::{ProjectionError, ReportError, SolveError};

#[derive(Parser, Debug)]
#[command(
    name = "st-hdg",
    version,
    about = "Space-time HDG solver for linear free-surface waves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// March one configured problem and write report.csv, profiles and run.json.
    Run(RunArgs),
    /// Run a convergence study on the periodic harmonic wave.
    Converge(ConvergeArgs),
    /// Measure approximation orders of the space-time projection.
    ProjectionRates(RatesArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ProblemArg {
    Harmonic,
    Wavemaker,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SolverArg {
    Direct,
    Iterative,
}

impl From<SolverArg> for SolverChoice {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Direct => SolverChoice::Direct,
            SolverArg::Iterative => SolverChoice::Iterative,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StudyArg {
    Space,
    Time,
    Spacetime,
    FixedH,
}

impl From<StudyArg> for StudyKind {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::Space => StudyKind::Space,
            StudyArg::Time => StudyKind::Time,
            StudyArg::Spacetime => StudyKind::Spacetime,
            StudyArg::FixedH => StudyKind::FixedH,
        }
    }
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<ProblemArg>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Plain-text mesh file (overrides nx, ny).
    #[arg(long)]
    mesh_file: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Restart from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Extra Gauss points in time beyond p + 2.
    #[arg(long)]
    time_quad_extra: Option<usize>,
    /// Use the wave-maker flux a exp(-a f t) instead of a sin(f t).
    #[arg(long)]
    wavemaker_literal: bool,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Comma-separated times at which to write surface profiles.
    #[arg(long, value_delimiter = ',')]
    profile_times: Option<Vec<f64>>,
}

#[derive(clap::Args, Debug)]
struct ConvergeArgs {
    #[arg(long, value_enum)]
    study: StudyArg,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 5.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Cells per side of the fixed mesh (time and fixed-h studies).
    #[arg(long)]
    mesh: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Also evaluate the energy identity on every slab.
    #[arg(long)]
    check_energy: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct RatesArgs {
    /// Degrees to measure; defaults to 1, 2, 3.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Solve(_) | ReportError::Level { .. } => CliError::Solver(e.to_string()),
            ReportError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Parameters(_) | SolveError::Checkpoint(_) | SolveError::Mesh(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        CliError::Solver(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Converge(a) => cmd_converge(a),
        Command::ProjectionRates(a) => cmd_rates(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("st-hdg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Preset for the chosen problem, then the file, then flags.
fn resolve_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    let file = match &a.config {
        Some(p) => Some(read_config_file(p)?),
        None => None,
    };
    let problem = match a.problem {
        Some(ProblemArg::Harmonic) => ProblemKind::Harmonic,
        Some(ProblemArg::Wavemaker) => ProblemKind::Wavemaker,
        None => match file
            .as_ref()
            .and_then(|f| f.get("problem"))
            .and_then(Value::as_str)
        {
            Some(s) => ProblemKind::parse(s)
                .ok_or_else(|| CliError::Config(format!("unknown problem `{s}`")))?,
            None => ProblemKind::Harmonic,
        },
    };
    let preset = match problem {
        ProblemKind::Harmonic => RunConfig::default(),
        ProblemKind::Wavemaker => RunConfig::wavemaker_preset(),
    };
    let mut value = serde_json::to_value(&preset).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(f) = file {
        merge(&mut value, f);
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.problem = problem;
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.dt {
        cfg.dt = v;
    }
    if let Some(v) = a.t_final {
        cfg.t_final = v;
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.nx {
        cfg.mesh.nx = v;
    }
    if let Some(v) = a.ny {
        cfg.mesh.ny = v;
    }
    if let Some(v) = &a.mesh_file {
        cfg.mesh.file = Some(v.clone());
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = Some(v);
    }
    if let Some(v) = a.time_quad_extra {
        cfg.time_quad_extra = v;
    }
    if a.wavemaker_literal {
        cfg.wavemaker.literal = true;
    }
    if let Some(v) = a.solver {
        cfg.solver = v.into();
    }
    if let Some(v) = &a.profile_times {
        cfg.profile_times = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn environment_stamp() -> Value {
    json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "threads": std::thread::available_parallelism().map_or(1, |n| n.get()),
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a)?;
    let resume = match &a.resume {
        Some(p) => Some(read_checkpoint(p)?),
        None => None,
    };
    create_dir(&cfg.out)?;
    let checkpoint_dir = cfg.checkpoint_every.map(|_| cfg.out.join("checkpoints"));
    if let Some(d) = &checkpoint_dir {
        create_dir(d)?;
    }
    let outcome = execute_run(&cfg, checkpoint_dir.as_deref(), resume)?;
    write(&cfg.out.join("report.csv"), &outcome.report_csv(&cfg))?;
    for prof in &outcome.profiles {
        write(&cfg.out.join(profile_file_name(prof.t)), &prof.to_csv())?;
    }
    let run = json!({
        "config": cfg,
        "config_hash": cfg.config_hash(),
        "environment": environment_stamp(),
        "summary": {
            "slabs": outcome.summary.slabs,
            "t_end": outcome.summary.t_end,
            "dofs": outcome.summary.n_dofs,
            "max_residual": outcome.summary.max_residual,
            "max_energy_residual": outcome.max_energy_residual,
            "err_q": outcome.err_q(),
            "err_lambda": outcome.err_lambda(),
            "warnings": outcome.summary.warnings,
        },
    });
    write(
        &cfg.out.join("run.json"),
        &(serde_json::to_string_pretty(&run).expect("json value serialises") + "\n"),
    )?;
    for w in &outcome.summary.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} slabs to t = {}, {} dofs, max energy residual {:.2e}",
        outcome.summary.slabs,
        outcome.summary.t_end,
        outcome.summary.n_dofs,
        outcome.max_energy_residual
    );
    if let (Some(q), Some(l)) = (outcome.err_q(), outcome.err_lambda()) {
        println!("err_q = {q:.4e}, err_lambda = {l:.4e}");
    }
    Ok(())
}

fn cmd_converge(a: ConvergeArgs) -> Result<(), CliError> {
    if a.p == 0 {
        return Err(CliError::Config("p must be at least 1".into()));
    }
    if a.levels == Some(0) {
        return Err(CliError::Config("levels must be at least 1".into()));
    }
    let mut spec = StudySpec::standard(a.study.into(), a.p, a.levels);
    spec.tau = a.tau;
    spec.alpha = a.alpha;
    spec.check_energy = a.check_energy;
    if let Some(s) = a.solver {
        spec.solver = s.into();
    }
    if let Some(n) = a.mesh {
        if matches!(spec.kind, StudyKind::Time | StudyKind::FixedH) {
            for l in &mut spec.levels {
                l.n = n;
            }
        } else {
            return Err(CliError::Config(
                "--mesh applies to the time and fixed-h studies".into(),
            ));
        }
    }
    if !(a.tau > 0.0 && a.alpha > 0.0) {
        return Err(CliError::Config("tau and alpha must be positive".into()));
    }
    let report = run_study(&spec)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(&dir.join("report.csv"), &csv)?;
        let run = json!({
            "study": spec,
            "config_hash": report.config_hash,
            "environment": environment_stamp(),
        });
        write(
            &dir.join("run.json"),
            &(serde_json::to_string_pretty(&run).expect("json value serialises") + "\n"),
        )?;
    }
    Ok(())
}

fn cmd_rates(a: RatesArgs) -> Result<(), CliError> {
    let ps = a.p.unwrap_or_else(|| vec![1, 2, 3]);
    if ps.contains(&0) {
        return Err(CliError::Config("p must be at least 1".into()));
    }
    let mut csv = String::new();
    for p in ps {
        let rows = measure_projection_rates(&HarmonicWave::standard(), &RateStudy::standard(p))?;
        csv.push_str(&rates_to_csv(p, &rows));
    }
    print!("{csv}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(&dir.join("projection_rates.csv"), &csv)?;
    }
    Ok(())
}
