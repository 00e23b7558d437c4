use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cmtf_bsd::bspline::Representation;
use cmtf_bsd::decoupling::{cmtf_bsd, CmtfConfig, Constraint, DecoupledModel, LambdaSchedule};
use cmtf_bsd::experiments::{run_experiment, summarize, write_outputs, Execution, ExperimentKind, ExperimentSpec};
use cmtf_bsd::io::{read_matrix_csv, read_tensor, write_matrix_csv, write_tensor};
use cmtf_bsd::sysgen::{builtin_mono, builtin_trig, sample_for_system};

const OUT_DIR_VAR: &str = "CMTF_BSD_OUT_DIR";

#[derive(Parser)]
#[command(name = "cmtf-bsd", version, about = "Decoupling of multivariate functions with B-spline branches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a decoupled model to a Jacobian tensor and zeroth-order data.
    Decouple(DecoupleArgs),
    /// Run one of the synthetic benchmark sweeps.
    Experiment(ExperimentArgs),
    /// Report the monotonicity certificate of every branch of a model.
    Certify {
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate a model on inputs (CSV, one row per input variable).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        /// Output CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a built-in synthetic system as tensor, zeroth and sample files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct DecoupleArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    zeroth: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long)]
    dof: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Multiply lambda by this factor after each iteration (fixed when omitted).
    #[arg(long)]
    lambda_growth: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    lambda_cap: f64,
    /// none | monotone
    #[arg(long, default_value = "none")]
    constraint: Constraint,
    /// g | gprime; defaults to gprime for monotone fits and g otherwise.
    #[arg(long)]
    rep: Option<Representation>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration objective trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// trig | mono
    kind: ExperimentKind,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, env = OUT_DIR_VAR, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    plots: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Comma-separated df grid overriding the default one.
    #[arg(long, value_delimiter = ',')]
    dofs: Option<Vec<usize>>,
    /// Comma-separated spline degrees overriding the default ones.
    #[arg(long, value_delimiter = ',')]
    degrees: Option<Vec<usize>>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// trig | mono
    kind: ExperimentKind,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = -1.5)]
    lo: f64,
    #[arg(long, default_value_t = 1.5)]
    hi: f64,
    #[arg(long, env = OUT_DIR_VAR, default_value = "out")]
    out_dir: PathBuf,
}

type CliResult = Result<(), String>;

fn ctx<T, E: std::fmt::Display>(r: Result<T, E>, what: impl FnOnce() -> String) -> Result<T, String> {
    r.map_err(|e| format!("{}: {e}", what()))
}

fn default_out(name: &str) -> PathBuf {
    std::env::var_os(OUT_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
        .join(name)
}

fn ensure_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ctx(fs::create_dir_all(p), || format!("creating {}", p.display())),
        _ => Ok(()),
    }
}

fn decouple(a: DecoupleArgs) -> CliResult {
    let j = ctx(read_tensor(&a.tensor), || format!("reading tensor {}", a.tensor.display()))?;
    let f = ctx(read_matrix_csv(&a.zeroth), || format!("reading zeroth {}", a.zeroth.display()))?;
    let x = ctx(read_matrix_csv(&a.samples), || format!("reading samples {}", a.samples.display()))?;

    let mut config = CmtfConfig::new(a.rank, a.degree, a.dof)
        .with_lambda(a.lambda)
        .with_seed(a.seed)
        .with_max_iter(a.max_iter);
    config.constraint = a.constraint;
    config.representation = a.rep.unwrap_or(match a.constraint {
        Constraint::None => Representation::G,
        Constraint::MonotoneIncreasing => Representation::GPrime,
    });
    if let Some(factor) = a.lambda_growth {
        config.lambda_schedule = LambdaSchedule::Geometric { factor, cap: a.lambda_cap };
    }

    let fit = ctx(cmtf_bsd(&j, &f, &x, &config), || "decoupling failed".into())?;
    for w in &fit.state.warnings {
        eprintln!("warning: {w}");
    }
    let out = a.out.unwrap_or_else(|| default_out("model.json"));
    ensure_parent(&out)?;
    ctx(fit.model.save(&out), || format!("writing {}", out.display()))?;
    if let Some(trace) = &a.trace {
        ensure_parent(trace)?;
        ctx(fs::write(trace, fit.state.trace_csv()), || format!("writing {}", trace.display()))?;
    }
    let last = fit.state.history.last().map_or(f64::NAN, |h| h.objective);
    println!(
        "iterations={} converged={} objective={last:.6e} relative={:.6e} fallbacks={} model={}",
        fit.state.iterations,
        fit.state.converged,
        last / j.frob_norm_sq(),
        fit.state.fallback_events,
        out.display()
    );
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult {
    let mut spec = ExperimentSpec::for_kind(a.kind);
    if let Some(runs) = a.runs {
        spec.runs = runs;
    }
    if let Some(seed) = a.seed {
        spec.base_seed = seed;
    }
    if let Some(it) = a.max_iter {
        spec.max_iter = it;
    }
    if let Some(dofs) = a.dofs {
        spec.dofs = dofs;
    }
    if let Some(degrees) = a.degrees {
        spec.degrees = degrees;
    }
    let execution = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let start = Instant::now();
    let records = ctx(run_experiment(&spec, execution), || format!("{} experiment", spec.kind))?;
    ctx(write_outputs(&a.out_dir, &spec, &records, a.plots), || {
        format!("writing results to {}", a.out_dir.display())
    })?;
    let failed = records.iter().filter(|r| r.status != cmtf_bsd::experiments::RunStatus::Ok).count();
    println!(
        "{} runs ({} failed) over {} cells in {:.1} s -> {}",
        records.len(),
        failed,
        summarize(&records).len(),
        start.elapsed().as_secs_f64(),
        a.out_dir.join("results.csv").display()
    );
    Ok(())
}

fn load(path: &Path) -> Result<DecoupledModel, String> {
    ctx(DecoupledModel::load(path), || format!("loading model {}", path.display()))
}

fn certify(model: &Path) -> CliResult {
    let model = load(model)?;
    for (i, c) in model.certify().iter().enumerate() {
        let label = if c.is_certified() { "CERTIFIED_INCREASING" } else { "NOT_CERTIFIED" };
        println!("branch {}: {label}", i + 1);
    }
    Ok(())
}

fn predict(model: &Path, inputs: &Path, out: Option<PathBuf>) -> CliResult {
    let model = load(model)?;
    let x = ctx(read_matrix_csv(inputs), || format!("reading inputs {}", inputs.display()))?;
    let y = ctx(model.predict(&x), || "prediction failed".into())?;
    match out {
        Some(path) => {
            ensure_parent(&path)?;
            ctx(write_matrix_csv(&path, &y), || format!("writing {}", path.display()))
        }
        None => {
            print!("{}", cmtf_bsd::io::format_matrix_csv(&y));
            Ok(())
        }
    }
}

fn generate(a: GenerateArgs) -> CliResult {
    let system = match a.kind {
        ExperimentKind::Trig => builtin_trig(),
        ExperimentKind::Mono => builtin_mono(a.seed),
    };
    let set = ctx(sample_for_system(&system, a.samples, a.lo, a.hi, a.seed), || "sampling".into())?;
    let j = ctx(system.jacobian_tensor(&set.x), || "jacobian".into())?;
    let f = ctx(system.zeroth_matrix(&set.x), || "zeroth-order data".into())?;
    ctx(fs::create_dir_all(&a.out_dir), || format!("creating {}", a.out_dir.display()))?;
    let path = |name: &str| a.out_dir.join(name);
    ctx(write_tensor(&path("tensor.txt"), &j), || "writing tensor.txt".into())?;
    ctx(write_matrix_csv(&path("zeroth.csv"), &f), || "writing zeroth.csv".into())?;
    ctx(write_matrix_csv(&path("samples.csv"), &set.x), || "writing samples.csv".into())?;
    println!(
        "wrote tensor.txt, zeroth.csv, samples.csv ({} samples, {} redrawn) to {}",
        set.len(),
        set.resampled,
        a.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decouple(a) => decouple(a),
        Command::Experiment(a) => experiment(a),
        Command::Certify { model } => certify(&model),
        Command::Predict { model, inputs, out } => predict(&model, &inputs, out),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
