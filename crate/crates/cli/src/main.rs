//! suruq: surrogate-assisted uncertainty quantification from the command
//! line.
//!
//! One binary, one subcommand per pipeline stage: sample a design, train a
//! POD-GP surrogate, validate it, then propagate uncertainty and estimate
//! Sobol sensitivities with the trained model (or with a built-in analytic
//! test model). Commands emit plot-ready CSV files plus a plain-text run
//! manifest recording the resolved configuration, seeds, and input
//! checksums, so every output can be traced back to an exact invocation.

mod config;
mod manifest;

use std::fmt::Display;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{require, FileConfig, Section};
use manifest::Manifest;
use suruq::design::{qmc_design, read_points_csv, ParameterSpace};
use suruq::gp::GpConfig;
use suruq::models::{
    load_dataset, read_responses_csv, EvaluatableModel, GFunction, Ishigami, SyntheticRestenosis,
};
use suruq::sensitivity::replicated_sobol;
use suruq::surrogate::{read_metadata, train_surrogate, SurrogateModel, TrainConfig};
use suruq::uqstats::{exceedance, summarize, text_table, write_summary_csv, Direction};
use suruq::validation::{cross_validate, pod_snapshot_sweep, write_sweep_csv};

#[derive(Parser)]
#[command(
    name = "suruq",
    version,
    about = "Surrogate-assisted uncertainty quantification and sensitivity analysis"
)]
struct Cli {
    /// Worker threads (default: the SURUQ_WORKERS variable, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Suppress progress reporting on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    /// TOML config file with one section per subcommand; flags take
    /// precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a quasi-Monte Carlo design CSV over a parameter space.
    Sample(SampleArgs),
    /// Train a surrogate from inputs, responses, and time-grid CSVs.
    Train(TrainArgs),
    /// Cross-validate the surrogate pipeline on a dataset.
    Cv(CvArgs),
    /// Sweep the basis projection error against the snapshot count.
    PodSweep(PodSweepArgs),
    /// Predict responses at new inputs with a trained model.
    Predict(PredictArgs),
    /// Propagate input uncertainty through a trained model.
    Uq(UqArgs),
    /// Estimate Sobol sensitivity indices of a model or a builtin.
    Sa(SaArgs),
    /// Print the metadata header of a model file.
    Report(ReportArgs),
    /// Regenerate the bundled example data.
    Assets(AssetsArgs),
}

struct Ctx {
    file: FileConfig,
    quiet: bool,
    workers: usize,
}

impl Ctx {
    fn progress(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, self.workers)
    }
}

fn resolve_workers(flag: Option<usize>) -> Result<usize> {
    let workers = match flag {
        Some(w) => w,
        None => match std::env::var("SURUQ_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("SURUQ_WORKERS is not a thread count: '{v}'"))?,
            Err(_) => std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1),
        },
    };
    if workers == 0 {
        bail!("worker count must be at least 1");
    }
    Ok(workers)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = resolve_workers(cli.workers)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .ok();
    let ctx = Ctx {
        file: FileConfig::load(cli.config.as_deref())?,
        quiet: cli.quiet,
        workers,
    };
    match cli.command {
        Command::Sample(args) => cmd_sample(&ctx, args),
        Command::Train(args) => cmd_train(&ctx, args),
        Command::Cv(args) => cmd_cv(&ctx, args),
        Command::PodSweep(args) => cmd_pod_sweep(&ctx, args),
        Command::Predict(args) => cmd_predict(&ctx, args),
        Command::Uq(args) => cmd_uq(&ctx, args),
        Command::Sa(args) => cmd_sa(&ctx, args),
        Command::Report(args) => cmd_report(&ctx, args),
        Command::Assets(args) => cmd_assets(&ctx, args),
    }
}

/// Loads a parameter space from a file, or the bundled vessel-lesion space
/// when no file is given. The second value describes the source for the run
/// manifest.
fn load_space(path: Option<&Path>) -> Result<(ParameterSpace, String)> {
    match path {
        None => Ok((ParameterSpace::isr3d(), "builtin".to_string())),
        Some(p) => {
            let space = ParameterSpace::from_file(p)
                .with_context(|| format!("loading parameter space {}", p.display()))?;
            Ok((space, p.display().to_string()))
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Parameter-space TOML (default: the bundled vessel-lesion space).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Number of design points.
    #[arg(long)]
    n: Option<usize>,
    /// Offset into the low-discrepancy stream (default 1, skipping the
    /// all-zeros point).
    #[arg(long)]
    skip: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_sample(ctx: &Ctx, args: SampleArgs) -> Result<()> {
    let sec = ctx.file.section("sample")?;
    let n = require(args.n.or(sec.usize("n")?), "--n")?;
    let skip = args.skip.or(sec.u64("skip")?).unwrap_or(1);
    let space_path = args.space.or(sec.path("space")?);
    let (space, space_desc) = load_space(space_path.as_deref())?;
    let out = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("design.csv"));

    ctx.progress(format_args!(
        "sampling {n} points in {} dimensions (stream offset {skip})",
        space.dimension()
    ));
    let design = qmc_design(&space, n, skip)?;
    design.to_csv(&out)?;

    let mut m = ctx.manifest("sample");
    m.push("resolved.space", &space_desc);
    m.push("resolved.n", n);
    m.push("resolved.skip", skip);
    if let Some(p) = &space_path {
        m.input_file("space", p)?;
    }
    m.output("design", &out);
    m.write(&manifest::for_file(&out))?;
    ctx.progress(format_args!("wrote {n} design rows to {}", out.display()));
    Ok(())
}

struct GpSettings {
    restarts: usize,
    max_iters: usize,
}

/// GP budget knobs live in the config file only; the defaults match the
/// library.
fn gp_settings(sec: &Section) -> Result<GpSettings> {
    let defaults = GpConfig::default();
    Ok(GpSettings {
        restarts: sec.usize("gp_restarts")?.unwrap_or(defaults.restarts),
        max_iters: sec.usize("gp_max_iters")?.unwrap_or(defaults.max_iters),
    })
}

#[derive(Args)]
struct TrainArgs {
    /// Parameter-space TOML (default: the bundled vessel-lesion space).
    #[arg(long)]
    space: Option<PathBuf>,
    /// CSV of training inputs, one row per run, header of parameter names.
    #[arg(long)]
    data_inputs: Option<PathBuf>,
    /// Headerless CSV of responses, one row per run.
    #[arg(long)]
    data_responses: Option<PathBuf>,
    /// Single-column file of time stamps.
    #[arg(long)]
    time_grid: Option<PathBuf>,
    /// Cumulative energy fraction retained by the basis.
    #[arg(long)]
    energy_threshold: Option<f64>,
    /// Build the basis from this many randomly chosen runs (default: all).
    #[arg(long)]
    snapshots: Option<usize>,
    /// Seed for snapshot choice and regression restarts.
    #[arg(long)]
    seed: Option<u64>,
    /// Output model path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_train(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let sec = ctx.file.section("train")?;
    let inputs = require(args.data_inputs.or(sec.path("data_inputs")?), "--data-inputs")?;
    let responses = require(
        args.data_responses.or(sec.path("data_responses")?),
        "--data-responses",
    )?;
    let grid_path = require(args.time_grid.or(sec.path("time_grid")?), "--time-grid")?;
    let space_path = args.space.or(sec.path("space")?);
    let (space, space_desc) = load_space(space_path.as_deref())?;
    let energy_threshold = args.energy_threshold.or(sec.f64("energy_threshold")?).unwrap_or(0.999);
    let snapshots = args.snapshots.or(sec.usize("snapshots")?);
    let seed = args.seed.or(sec.u64("seed")?).unwrap_or(0);
    let gp = gp_settings(&sec)?;
    let qoi_name = sec.string("qoi_name")?.unwrap_or_else(|| "response".to_string());
    let timestamp = sec.u64("timestamp")?.unwrap_or(0);
    let out = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("surrogate.suruq"));

    let dataset = load_dataset(&inputs, &responses, &grid_path, &space)?;
    ctx.progress(format_args!(
        "training on {} runs of {} time steps",
        dataset.n_runs(),
        dataset.time_grid.len()
    ));
    let train_config = TrainConfig {
        energy_threshold,
        n_snapshots: snapshots,
        seed,
        gp: GpConfig {
            restarts: gp.restarts,
            seed,
            max_iters: gp.max_iters,
            ..GpConfig::default()
        },
        qoi_name,
        timestamp: Some(timestamp),
    };
    let model = train_surrogate(&dataset.design, &dataset.responses, &dataset.time_grid, &train_config)?;
    model.save(&out)?;

    let meta = model.metadata();
    let mut m = ctx.manifest("train");
    m.push("resolved.space", &space_desc);
    m.push_f64("resolved.energy_threshold", energy_threshold);
    m.push(
        "resolved.snapshots",
        snapshots.map_or_else(|| "all".to_string(), |s| s.to_string()),
    );
    m.push("resolved.seed", seed);
    m.push("resolved.gp_restarts", gp.restarts);
    m.push("resolved.gp_max_iters", gp.max_iters);
    m.push("resolved.qoi_name", &meta.qoi_name);
    m.push("resolved.timestamp", timestamp);
    if let Some(p) = &space_path {
        m.input_file("space", p)?;
    }
    m.input_file("inputs", &inputs)?;
    m.input_file("responses", &responses)?;
    m.input_file("time_grid", &grid_path)?;
    m.push("result.training_runs", meta.training_size);
    m.push("result.modes", meta.modes);
    m.push_f64("result.achieved_energy", meta.achieved_energy);
    m.output("model", &out);
    m.write(&manifest::for_file(&out))?;
    ctx.progress(format_args!(
        "kept {} modes at {:.6}% energy; wrote {}",
        meta.modes,
        100.0 * meta.achieved_energy,
        out.display()
    ));
    Ok(())
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    data_inputs: Option<PathBuf>,
    #[arg(long)]
    data_responses: Option<PathBuf>,
    #[arg(long)]
    time_grid: Option<PathBuf>,
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Number of shuffled repetitions.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    energy_threshold: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-fold detail CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_cv(ctx: &Ctx, args: CvArgs) -> Result<()> {
    let sec = ctx.file.section("cv")?;
    let inputs = require(args.data_inputs.or(sec.path("data_inputs")?), "--data-inputs")?;
    let responses = require(
        args.data_responses.or(sec.path("data_responses")?),
        "--data-responses",
    )?;
    let grid_path = require(args.time_grid.or(sec.path("time_grid")?), "--time-grid")?;
    let space_path = args.space.or(sec.path("space")?);
    let (space, space_desc) = load_space(space_path.as_deref())?;
    let folds = args.folds.or(sec.usize("folds")?).unwrap_or(4);
    let reps = args.reps.or(sec.usize("reps")?).unwrap_or(10);
    let energy_threshold = args.energy_threshold.or(sec.f64("energy_threshold")?).unwrap_or(0.999);
    let snapshots = args.snapshots.or(sec.usize("snapshots")?);
    let seed = args.seed.or(sec.u64("seed")?).unwrap_or(0);
    let gp = gp_settings(&sec)?;
    let out = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("cv_report.csv"));

    let dataset = load_dataset(&inputs, &responses, &grid_path, &space)?;
    ctx.progress(format_args!(
        "cross-validating {} runs: {folds} folds x {reps} repetitions ({} surrogate trainings)",
        dataset.n_runs(),
        folds * reps
    ));
    let train_config = TrainConfig {
        energy_threshold,
        n_snapshots: snapshots,
        seed,
        gp: GpConfig {
            restarts: gp.restarts,
            seed,
            max_iters: gp.max_iters,
            ..GpConfig::default()
        },
        ..TrainConfig::default()
    };
    let report = cross_validate(
        &dataset.design,
        &dataset.responses,
        &dataset.time_grid,
        folds,
        reps,
        &train_config,
        seed,
    )?;

    print!("{}", report.to_text());
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    report.write_csv(BufWriter::new(file))?;

    let mut m = ctx.manifest("cv");
    m.push("resolved.space", &space_desc);
    m.push("resolved.folds", folds);
    m.push("resolved.reps", reps);
    m.push_f64("resolved.energy_threshold", energy_threshold);
    m.push(
        "resolved.snapshots",
        snapshots.map_or_else(|| "all".to_string(), |s| s.to_string()),
    );
    m.push("resolved.seed", seed);
    m.push("resolved.gp_restarts", gp.restarts);
    m.push("resolved.gp_max_iters", gp.max_iters);
    if let Some(p) = &space_path {
        m.input_file("space", p)?;
    }
    m.input_file("inputs", &inputs)?;
    m.input_file("responses", &responses)?;
    m.input_file("time_grid", &grid_path)?;
    m.push_f64("result.e_pod_mean", report.e_pod_mean);
    m.push_f64("result.e_pod_sd", report.e_pod_sd);
    m.push_f64("result.e_gp_mean", report.e_gp_mean);
    m.push_f64("result.e_gp_sd", report.e_gp_sd);
    m.output("per_fold_csv", &out);
    m.write(&manifest::for_file(&out))?;
    ctx.progress(format_args!("wrote per-fold detail to {}", out.display()));
    Ok(())
}

#[derive(Args)]
struct PodSweepArgs {
    /// Headerless CSV of responses, one row per run.
    #[arg(long)]
    data_responses: Option<PathBuf>,
    /// Snapshot counts to test, e.g. 10,25,50,100.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long)]
    energy_threshold: Option<f64>,
    /// Subset draws per count.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (count, mean, sd).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_pod_sweep(ctx: &Ctx, args: PodSweepArgs) -> Result<()> {
    let sec = ctx.file.section("pod-sweep")?;
    let responses_path = require(
        args.data_responses.or(sec.path("data_responses")?),
        "--data-responses",
    )?;
    let counts = require(args.counts.or(sec.usize_list("counts")?), "--counts")?;
    let energy_threshold = args.energy_threshold.or(sec.f64("energy_threshold")?).unwrap_or(0.999);
    let reps = args.reps.or(sec.usize("reps")?).unwrap_or(10);
    let seed = args.seed.or(sec.u64("seed")?).unwrap_or(0);
    let out = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("pod_sweep.csv"));

    let responses = read_responses_csv(&responses_path)?;
    ctx.progress(format_args!(
        "sweeping {} snapshot counts x {reps} repetitions over {} runs",
        counts.len(),
        responses.len()
    ));
    let points = pod_snapshot_sweep(&responses, &counts, energy_threshold, reps, seed)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_sweep_csv(&points, BufWriter::new(file))?;

    let mut m = ctx.manifest("pod-sweep");
    m.push(
        "resolved.counts",
        format!("[{}]", counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")),
    );
    m.push_f64("resolved.energy_threshold", energy_threshold);
    m.push("resolved.reps", reps);
    m.push("resolved.seed", seed);
    m.input_file("responses", &responses_path)?;
    m.output("sweep_csv", &out);
    m.write(&manifest::for_file(&out))?;
    ctx.progress(format_args!("wrote sweep to {}", out.display()));
    Ok(())
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV of query inputs with a header of parameter names.
    #[arg(long)]
    data_inputs: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_predict(ctx: &Ctx, args: PredictArgs) -> Result<()> {
    let sec = ctx.file.section("predict")?;
    let model_path = require(args.model.or(sec.path("model")?), "--model")?;
    let inputs = require(args.data_inputs.or(sec.path("data_inputs")?), "--data-inputs")?;
    let out = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("predictions.csv"));

    let model = SurrogateModel::load(&model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    let file = File::open(&inputs).with_context(|| format!("opening {}", inputs.display()))?;
    let (points, reordered) = read_points_csv(std::io::BufReader::new(file), model.space())?;
    ctx.progress(format_args!(
        "predicting {} runs with {} modes",
        points.nrows(),
        model.n_modes()
    ));
    let (means, extrapolated) = model.predict_batch(&points)?;

    let grid = &model.metadata().time_grid;
    let out_file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(out_file));
    let mut header: Vec<String> = grid.iter().map(|t| format!("t={t:?}")).collect();
    header.push("extrapolated".to_string());
    w.write_record(&header).map_err(std::io::Error::from)?;
    for i in 0..means.nrows() {
        let mut row: Vec<String> = (0..means.ncols()).map(|t| format!("{:?}", means[(i, t)])).collect();
        row.push(extrapolated[i].to_string());
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    w.flush()?;

    let mut m = ctx.manifest("predict");
    m.input_file("model", &model_path)?;
    m.input_file("inputs", &inputs)?;
    m.push("resolved.columns_reordered", reordered);
    m.push("result.predictions", means.nrows());
    m.push("result.extrapolated", extrapolated.iter().filter(|&&f| f).count());
    m.output("predictions", &out);
    m.write(&manifest::for_file(&out))?;
    ctx.progress(format_args!("wrote {} prediction rows to {}", means.nrows(), out.display()));
    Ok(())
}

#[derive(Args)]
struct UqArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of propagation samples.
    #[arg(long)]
    n: Option<usize>,
    /// Seed selecting a disjoint stretch of the sample stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Exceedance thresholds on the response, e.g. 1.585 for half the
    /// initial lumen area. Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    threshold: Option<Vec<f64>>,
    /// Side of the threshold that counts as exceeding (above or below).
    #[arg(long)]
    direction: Option<String>,
    /// Days for the plain-text statistics table, e.g. 5,10,15,20,30.
    #[arg(long, value_delimiter = ',')]
    report_days: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_uq(ctx: &Ctx, args: UqArgs) -> Result<()> {
    let sec = ctx.file.section("uq")?;
    let model_path = require(args.model.or(sec.path("model")?), "--model")?;
    let n = args.n.or(sec.usize("n")?).unwrap_or(100_000);
    let seed = args.seed.or(sec.u64("seed")?).unwrap_or(0);
    let thresholds = args.threshold.or(sec.f64_list("threshold")?).unwrap_or_default();
    let direction_str = args
        .direction
        .or(sec.string("direction")?)
        .unwrap_or_else(|| "below".to_string());
    let direction = Direction::from_str(&direction_str)?;
    let report_days = args.report_days.or(sec.f64_list("report_days")?).unwrap_or_default();
    let out_dir = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("uq_out"));

    if n == 0 {
        bail!("--n must be at least 1");
    }
    let skip = (seed)
        .checked_mul(n as u64)
        .and_then(|s| s.checked_add(1))
        .context("seed * n overflows the sample stream")?;

    let model = SurrogateModel::load(&model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    ctx.progress(format_args!(
        "propagating {n} samples (stream offset {skip}) through {} modes",
        model.n_modes()
    ));
    let design = qmc_design(model.space(), n, skip)?;
    let (ensemble, _) = model.predict_batch(design.points())?;
    let grid = model.metadata().time_grid.clone();
    let summary = summarize(&ensemble, &grid)?;

    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary, &summary_path)?;

    let mut m = ctx.manifest("uq");
    m.push("resolved.n", n);
    m.push("resolved.seed", seed);
    m.push("resolved.skip", skip);
    m.push_f64_list("resolved.threshold", &thresholds);
    m.push("resolved.direction", direction);
    m.push_f64_list("resolved.report_days", &report_days);
    m.input_file("model", &model_path)?;
    m.output("summary", &summary_path);

    let names: Vec<String> = model.space().names().iter().map(|s| s.to_string()).collect();
    let mut reports = Vec::with_capacity(thresholds.len());
    for (i, &threshold) in thresholds.iter().enumerate() {
        let report = exceedance(&ensemble, design.points(), &grid, threshold, direction)?;
        let frac_path = out_dir.join(format!("exceedance_{}.csv", i + 1));
        let file = File::create(&frac_path)?;
        report.write_long_csv(BufWriter::new(file))?;
        let inputs_path = out_dir.join(format!("exceeding_inputs_{}.csv", i + 1));
        let file = File::create(&inputs_path)?;
        report.write_exceeding_inputs_csv(&names, BufWriter::new(file))?;
        m.push(format!("result.exceeding_count_{}", i + 1), report.exceeding_inputs.len());
        m.output(&format!("exceedance_{}", i + 1), &frac_path);
        m.output(&format!("exceeding_inputs_{}", i + 1), &inputs_path);
        reports.push(report);
    }

    if !report_days.is_empty() {
        let table = text_table(&summary, reports.first(), &report_days)?;
        let table_path = out_dir.join("table.txt");
        std::fs::write(&table_path, &table)?;
        m.output("table", &table_path);
        print!("{table}");
    }

    m.write(&manifest::for_dir(&out_dir))?;
    ctx.progress(format_args!("wrote uncertainty outputs to {}", out_dir.display()));
    Ok(())
}

#[derive(Args)]
struct SaArgs {
    /// Trained model file to analyze.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Built-in analytic model: ishigami, g-function, or
    /// synthetic-restenosis.
    #[arg(long)]
    builtin: Option<String>,
    /// Total evaluation budget; the base sample count becomes
    /// n / (dimension + 2).
    #[arg(long)]
    n: Option<usize>,
    /// Base sample count per replication (alternative to --n).
    #[arg(long)]
    n_base: Option<usize>,
    /// Independent replications for confidence intervals.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct SaTarget {
    model: Box<dyn EvaluatableModel>,
    space: ParameterSpace,
    names: Vec<String>,
    grid: Vec<f64>,
    description: String,
}

fn sa_target(model_path: Option<&Path>, builtin: Option<&str>) -> Result<SaTarget> {
    match (model_path, builtin) {
        (Some(path), None) => {
            let model = SurrogateModel::load(path)
                .with_context(|| format!("loading model {}", path.display()))?;
            let space = model.space().clone();
            let meta = model.metadata();
            Ok(SaTarget {
                names: meta.parameter_names.clone(),
                grid: meta.time_grid.clone(),
                description: path.display().to_string(),
                space,
                model: Box::new(model),
            })
        }
        (None, Some(name)) => {
            let (model, space, grid): (Box<dyn EvaluatableModel>, ParameterSpace, Vec<f64>) =
                match name {
                    "ishigami" => {
                        let m = Ishigami::standard();
                        let s = m.space();
                        (Box::new(m), s, vec![0.0])
                    }
                    "g-function" => {
                        let m = GFunction::new(vec![0.0, 0.5, 3.0, 9.0])?;
                        let s = m.space();
                        (Box::new(m), s, vec![0.0])
                    }
                    "synthetic-restenosis" => {
                        let m = SyntheticRestenosis::daily();
                        let s = m.space();
                        let g = m.time_grid().to_vec();
                        (Box::new(m), s, g)
                    }
                    other => bail!(
                        "unknown builtin '{other}'; available: ishigami, g-function, synthetic-restenosis"
                    ),
                };
            Ok(SaTarget {
                names: space.names().iter().map(|s| s.to_string()).collect(),
                grid,
                description: format!("builtin:{name}"),
                space,
                model,
            })
        }
        (Some(_), Some(_)) => bail!("give either --model or --builtin, not both"),
        (None, None) => bail!("give a model to analyze: --model FILE or --builtin NAME"),
    }
}

fn cmd_sa(ctx: &Ctx, args: SaArgs) -> Result<()> {
    let sec = ctx.file.section("sa")?;
    let model_path = args.model.or(sec.path("model")?);
    let builtin = args.builtin.or(sec.string("builtin")?);
    let n_total = args.n.or(sec.usize("n")?);
    let n_base_flag = args.n_base.or(sec.usize("n_base")?);
    let reps = args.reps.or(sec.usize("reps")?).unwrap_or(10);
    let seed = args.seed.or(sec.u64("seed")?).unwrap_or(0);
    let out = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("sobol_indices.csv"));

    let target = sa_target(model_path.as_deref(), builtin.as_deref())?;
    let d = target.space.dimension();
    let n_base = match (n_base_flag, n_total) {
        (Some(_), Some(_)) => bail!("give either --n-base or --n, not both"),
        (Some(b), None) => b,
        (None, Some(n)) => {
            let b = n / (d + 2);
            if b < 2 {
                bail!("--n {n} leaves fewer than 2 base samples after dividing by d + 2 = {}", d + 2);
            }
            b
        }
        (None, None) => bail!("give a sample budget: --n-base COUNT or --n TOTAL"),
    };

    ctx.progress(format_args!(
        "estimating Sobol indices of {}: {reps} replications x {n_base} x ({d} + 2) = {} model evaluations",
        target.description,
        reps * n_base * (d + 2)
    ));
    let indices = replicated_sobol(target.model.as_ref(), &target.space, n_base, reps, seed)?
        .with_labels(target.names, target.grid)?;
    indices.to_csv(&out)?;

    let mut m = ctx.manifest("sa");
    m.push("resolved.target", &target.description);
    m.push("resolved.n_base", n_base);
    if let Some(n) = n_total {
        m.push("resolved.n_requested", n);
    }
    m.push("resolved.total_evaluations", reps * n_base * (d + 2));
    m.push("resolved.reps", reps);
    m.push("resolved.seed", seed);
    if let Some(p) = &model_path {
        m.input_file("model", p)?;
    }
    m.output("indices", &out);
    m.write(&manifest::for_file(&out))?;
    ctx.progress(format_args!("wrote Sobol indices to {}", out.display()));
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also save the metadata text to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_report(ctx: &Ctx, args: ReportArgs) -> Result<()> {
    let sec = ctx.file.section("report")?;
    let model_path = require(args.model.or(sec.path("model")?), "--model")?;
    let out = args.out.or(sec.path("out")?);

    let meta = read_metadata(&model_path)
        .with_context(|| format!("reading model {}", model_path.display()))?;
    let text = meta.to_text();
    print!("{text}");

    if let Some(out) = out {
        std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
        let mut m = ctx.manifest("report");
        m.input_file("model", &model_path)?;
        m.output("metadata", &out);
        m.write(&manifest::for_file(&out))?;
        ctx.progress(format_args!("wrote metadata to {}", out.display()));
    }
    Ok(())
}

#[derive(Args)]
struct AssetsArgs {
    /// Directory to regenerate the bundled example data into.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_assets(ctx: &Ctx, args: AssetsArgs) -> Result<()> {
    let sec = ctx.file.section("assets")?;
    let out_dir = args.out.or(sec.path("out")?).unwrap_or_else(|| PathBuf::from("data"));

    let paths = suruq::assets::generate_tutorial_assets(&out_dir)?;
    let mut m = ctx.manifest("assets");
    for path in &paths {
        ctx.progress(format_args!("wrote {}", path.display()));
    }
    for (i, path) in paths.iter().enumerate() {
        m.output(&format!("file_{}", i + 1), path);
    }
    m.write(&manifest::for_dir(&out_dir))?;
    ctx.progress(format_args!(
        "regenerated {} example files under {}",
        paths.len(),
        out_dir.display()
    ));
    Ok(())
}
