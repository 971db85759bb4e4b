//! `prden` command-line tool.
//!
//! Settings come from built-in defaults, then the `--config` TOML file, then
//! command-line flags; later sources win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use prden::bench::{
    estimate_dataset, iteration_curve, parse_algorithms, snr_sweep, stored_measurements, Algorithm,
    EstimatorSet, SampleResult,
};
use prden::channel::dataset::{generate_dataset, Dataset};
use prden::config::{RunConfig, StopKind};
use prden::denoiser::{ResidualDenoiser, WeightFile};
use prden::metrics::{mean_std, BenchmarkReport};
use prden::selftest::{run_selftest, SelftestConfig};
use prden::Error;

#[derive(Debug, Parser)]
#[command(
    name = "prden",
    version,
    about = "Regularized MIMO channel estimation by dual Peaceman-Rachford splitting"
)]
struct Cli {
    /// Worker threads for sample-parallel work (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "PRDN_THREADS")]
    threads: Option<usize>,

    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate channels and pilot measurements into a dataset file.
    Generate(GenerateArgs),
    /// Run one estimator over a dataset and write per-sample NMSE.
    Estimate(EstimateArgs),
    /// Sweep estimators over SNRs and write a summary CSV.
    Benchmark(BenchmarkArgs),
    /// Check the splitting identities on small random problems.
    Selftest(SelftestArgs),
    /// Print the header of a dataset (.prdn) or weight (.prdw) file.
    Inspect { file: PathBuf },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    n_samples: Option<usize>,
    /// Measurement SNR in dB.
    #[arg(long, conflicts_with = "noiseless")]
    snr: Option<f64>,
    #[arg(long)]
    noiseless: bool,
    /// Number of antennas (a multiple of the UPA count with square UPAs).
    #[arg(long)]
    antennas: Option<usize>,
    /// Store the spatial channel instead of its angular (DFT) form.
    #[arg(long)]
    spatial: bool,
    /// Keep the raw channel scale instead of normalizing to ||h||^2 = N.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Absolute L1 weight; default is lambda_rel * ||A^T y||_inf per sample.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stop on ||x+ - x|| < tol instead of the relative eta residual.
    #[arg(long)]
    x_step: bool,
    #[arg(long)]
    tol: Option<f64>,
    /// Averaging weight in (0, 1]; 1 is the undamped iteration.
    #[arg(long)]
    damping: Option<f64>,
    /// Trained denoiser for pr-den.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Report 10 log10(||h - e|| / ||h||) instead of the squared ratio.
    #[arg(long)]
    nmse_unsquared: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(short, long)]
    dataset: PathBuf,
    #[arg(short, long)]
    algorithm: String,
    /// Per-sample CSV (index,nmse_db,iterations,converged).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(short, long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
    /// Comma-separated algorithm names.
    #[arg(short, long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Comma-separated SNRs in dB; the dataset channels are re-measured at each.
    /// Without SNRs the stored measurements are used.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snrs: Option<Vec<f64>>,
    #[arg(short, long)]
    out: PathBuf,
    /// Also write NMSE-versus-iteration curves to this CSV.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    curve_iters: Option<usize>,
    /// Measure wall time (median over repeats).
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Iterations compared in the equivalence suites.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 4)]
    instances: usize,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 1.0, hide = true)]
    tolerance_scale: f64,
}

/// Exit status: 2 validation, 3 numeric, 4 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 4,
        Error::Numeric(_) | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

enum Failure {
    Error(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(k) = cli.threads.filter(|&k| k > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            eprintln!("error: cannot start {k} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Generate(args) => generate(cfg, args),
        Command::Estimate(args) => estimate(cfg, cli.config.is_some(), args),
        Command::Benchmark(args) => benchmark(cfg, cli.config.is_some(), args),
        Command::Selftest(args) => selftest(cfg.seed, args),
        Command::Inspect { file } => inspect(file),
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn generate(mut cfg: RunConfig, args: &GenerateArgs) -> CmdResult {
    let d = &mut cfg.dataset;
    if let Some(n) = args.n_samples {
        d.n_samples = n;
    }
    if let Some(snr) = args.snr {
        d.snr_db = snr;
        d.noiseless = false;
    }
    d.noiseless |= args.noiseless;
    d.angular &= !args.spatial;
    d.normalize &= !args.no_normalize;
    if let Some(n) = args.antennas {
        cfg.geometry.n_antennas = n;
    }
    if !cfg.dataset.noiseless && !cfg.dataset.snr_db.is_finite() {
        return Err(Error::Config {
            field: "dataset.snr_db".into(),
            reason: "must be finite; use --noiseless for exact measurements".into(),
        }
        .into());
    }
    cfg.validate()?;
    info!(
        "generating {} samples with seed {}",
        cfg.dataset.n_samples, cfg.seed
    );
    let ds = generate_dataset(&cfg.dataset_spec(), cfg.seed)?;
    ds.write(&args.out)?;
    println!(
        "wrote {} samples (N={}, M={}) to {}",
        ds.len(),
        ds.n_antennas(),
        ds.m_complex(),
        args.out.display()
    );
    Ok(())
}

fn apply_solver_args(cfg: &mut RunConfig, args: &SolverArgs) {
    let s = &mut cfg.solver;
    if args.lambda.is_some() {
        s.lambda = args.lambda;
    }
    if let Some(v) = args.sigma {
        s.sigma = v;
    }
    if let Some(v) = args.max_iter {
        s.max_iter = v;
    }
    if args.x_step {
        s.stop = StopKind::XStep;
    }
    if let Some(v) = args.tol {
        s.tol = v;
    }
    if let Some(v) = args.damping {
        s.damping_rho = v;
    }
    cfg.benchmark.nmse_unsquared |= args.nmse_unsquared;
}

fn load_denoiser(
    algorithms: &[Algorithm],
    weights: Option<&Path>,
) -> Result<Option<ResidualDenoiser>, Error> {
    match weights {
        Some(path) if algorithms.contains(&Algorithm::PrDen) => {
            Ok(Some(ResidualDenoiser::load(path)?))
        }
        _ => Ok(None),
    }
}

/// Geometry is not stored in dataset files; take N from the dataset when the
/// configuration does not pin it.
fn adopt_dataset_size(cfg: &mut RunConfig, explicit_config: bool, ds: &Dataset) {
    if !explicit_config {
        cfg.geometry.n_antennas = ds.n_antennas();
        cfg.pilot.p_slots = ds.m_complex() / cfg.pilot.n_rf.max(1);
    }
}

fn estimate(mut cfg: RunConfig, explicit_config: bool, args: &EstimateArgs) -> CmdResult {
    apply_solver_args(&mut cfg, &args.solver);
    let alg: Algorithm = args.algorithm.parse()?;
    let ds = Dataset::read(&args.dataset)?;
    adopt_dataset_size(&mut cfg, explicit_config, &ds);
    let den = load_denoiser(&[alg], args.solver.weights.as_deref())?;
    let set = EstimatorSet::new(&cfg, &ds, &[alg], den)?;
    let results = estimate_dataset(&set, &ds, alg)?;
    if let Some(out) = &args.out {
        write_file(out, &per_sample_csv(&results))?;
    }
    let nmse: Vec<f64> = results.iter().map(|r| r.nmse_db).collect();
    let (mean, std) = mean_std(&nmse);
    let converged = results.iter().filter(|r| r.converged).count();
    let iters = mean_std(
        &results
            .iter()
            .map(|r| r.iterations as f64)
            .collect::<Vec<_>>(),
    )
    .0;
    println!("algorithm: {alg}");
    println!("samples: {}", results.len());
    println!("nmse_db_mean: {mean}");
    println!("nmse_db_std: {std}");
    println!("iters_mean: {iters}");
    println!(
        "converged: {converged}/{} ({:.1}%)",
        results.len(),
        100.0 * converged as f64 / results.len().max(1) as f64
    );
    if results.iter().any(|r| r.nmse_db.is_nan()) {
        return Err(Failure::Numeric("non-finite NMSE in the estimates".into()));
    }
    Ok(())
}

fn per_sample_csv(results: &[SampleResult]) -> String {
    let mut s = String::from("index,nmse_db,iterations,converged\n");
    for r in results {
        writeln!(
            s,
            "{},{},{},{}",
            r.index, r.nmse_db, r.iterations, r.converged
        )
        .unwrap();
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn benchmark(mut cfg: RunConfig, explicit_config: bool, args: &BenchmarkArgs) -> CmdResult {
    apply_solver_args(&mut cfg, &args.solver);
    let b = &mut cfg.benchmark;
    if let Some(a) = &args.algorithms {
        b.algorithms = a.clone();
    }
    if let Some(s) = &args.snrs {
        b.snrs = s.clone();
    }
    if let Some(k) = args.curve_iters {
        b.curve_iters = k;
    }
    b.timing |= args.timing;
    let algorithms = parse_algorithms(&cfg.benchmark.algorithms)?;
    let den = load_denoiser(&algorithms, args.solver.weights.as_deref())?;

    let mut report = BenchmarkReport::default();
    for path in &args.dataset {
        let ds = Dataset::read(path)?;
        adopt_dataset_size(&mut cfg, explicit_config, &ds);
        info!(
            "benchmarking {} on {}",
            cfg.benchmark.algorithms.join(","),
            path.display()
        );
        let set = EstimatorSet::new(&cfg, &ds, &algorithms, den.clone())?;
        let part = snr_sweep(&set, &ds, &algorithms, &cfg.benchmark.snrs)?;
        report.rows.extend(part.rows);
        if args.curves.is_some() {
            let curves = iteration_curve(
                &set,
                &ds,
                &stored_measurements(&ds),
                &algorithms,
                cfg.benchmark.curve_iters,
            )?;
            report.curves.extend(curves);
        }
    }
    // group rows by algorithm across datasets
    report
        .rows
        .sort_by_key(|r| algorithms.iter().position(|a| a.name() == r.algorithm));
    report.write_csv(&args.out)?;
    if let Some(path) = &args.curves {
        report.write_curves_csv(path)?;
    }
    print!("{}", report.to_csv());
    if report.has_non_finite() {
        return Err(Failure::Numeric(
            "benchmark produced a non-finite NMSE".into(),
        ));
    }
    Ok(())
}

fn selftest(seed: u64, args: &SelftestArgs) -> CmdResult {
    let cfg = SelftestConfig {
        seed,
        iters: args.iters,
        instances_per_setting: args.instances,
        pairs: args.pairs,
        tolerance_scale: args.tolerance_scale,
        ..Default::default()
    };
    let report = run_selftest(&cfg)?;
    for s in &report.suites {
        println!(
            "{} {}: defect {:.3e} (tolerance {:.1e}, {} cases)",
            if s.passed() { "PASS" } else { "FAIL" },
            s.name,
            s.defect,
            s.tolerance,
            s.cases
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numeric("self-test failed".into()))
    }
}

fn inspect(path: &Path) -> CmdResult {
    let buf = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match buf.get(..4) {
        Some(b"PRDN") => {
            let ds = Dataset::from_bytes(&buf, path)?;
            println!("format: PRDN dataset v1");
            println!("antennas (N): {}", ds.n_antennas());
            println!("measurements (M): {}", ds.m_complex());
            println!("samples: {}", ds.len());
            println!(
                "flags: normalized={} angular={} noiseless={}",
                ds.flags.normalized, ds.flags.angular, ds.flags.noiseless
            );
            if let Some(s) = ds.samples.first() {
                println!("snr_db: {}", s.snr_db);
            }
        }
        Some(b"PRDW") => {
            let wf = WeightFile::from_bytes(&buf).map_err(Error::from)?;
            println!("format: PRDW weights v1");
            println!("antennas (N): {}", wf.n_antennas);
            println!("sigma: {}", wf.sigma);
            println!("norm_mean: {:?}", wf.norm_mean);
            println!("norm_scale: {:?}", wf.norm_scale);
            for (name, t) in &wf.tensors {
                println!("tensor {name}: {:?}", t.dims);
            }
        }
        _ => {
            return Err(Error::DatasetFormat {
                path: path.to_path_buf(),
                reason: "neither a PRDN dataset nor a PRDW weight file".into(),
            }
            .into())
        }
    }
    Ok(())
}
