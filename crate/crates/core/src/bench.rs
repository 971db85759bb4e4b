//! Running estimators over datasets: per-sample NMSE, SNR sweeps, NMSE
//! versus iteration curves and wall-clock timing.
//!
//! Samples run in parallel but every random draw comes from a per-sample
//! stream and results are aggregated in index order, so reports do not
//! depend on the thread count. Timing is the one exception and is opt-in.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::baselines::{
    ls_estimate, proximal_gradient, CovarianceModel, IterativeConfig, LmmseEstimator,
};
use crate::channel::dataset::{prepare_target, Dataset};
use crate::channel::pilot::{add_noise, PilotSystem};
use crate::channel::ChannelSimulator;
use crate::config::RunConfig;
use crate::denoiser::ResidualDenoiser;
use crate::error::{Error, Result};
use crate::metrics::{mean_std, median, nmse_db_with, BenchmarkReport, CurvePoint, ReportRow};
use crate::model::ProblemInstance;
use crate::prox::L1SoftThreshold;
use crate::resolvent::QuadraticResolvent;
use crate::rng::{stream_rng, Stream};
use crate::solver::{run_deq_observed, run_observed, SolverConfig, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ls,
    Lmmse,
    Ista,
    Fista,
    Pr,
    PrDen,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ls,
        Algorithm::Lmmse,
        Algorithm::Ista,
        Algorithm::Fista,
        Algorithm::Pr,
        Algorithm::PrDen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ls => "ls",
            Algorithm::Lmmse => "lmmse",
            Algorithm::Ista => "ista",
            Algorithm::Fista => "fista",
            Algorithm::Pr => "pr",
            Algorithm::PrDen => "pr-den",
        }
    }

    pub fn is_iterative(self) -> bool {
        !matches!(self, Algorithm::Ls | Algorithm::Lmmse)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::config(
                    "algorithm",
                    format!(
                        "unknown algorithm '{s}'; valid choices: {}",
                        valid.join(", ")
                    ),
                )
            })
    }
}

pub fn parse_algorithms(names: &[String]) -> Result<Vec<Algorithm>> {
    names.iter().map(|n| n.parse()).collect()
}

/// A measurement together with the real-coordinate noise variance it was drawn with.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub y: DVector<f64>,
    pub noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub h: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub index: usize,
    /// `-inf` for an exact estimate.
    pub nmse_db: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything shared by the estimators for one measurement operator.
#[derive(Debug)]
pub struct EstimatorSet {
    cfg: RunConfig,
    resolvent: Arc<QuadraticResolvent>,
    lmmse: Option<LmmseEstimator>,
    denoiser: Option<(ResidualDenoiser, Arc<QuadraticResolvent>)>,
}

impl EstimatorSet {
    /// Prepares the estimators in `algorithms` for `dataset`. The LMMSE
    /// second-moment matrix is fitted on fresh channels from the covariance
    /// stream, never on the dataset itself.
    pub fn new(
        cfg: &RunConfig,
        dataset: &Dataset,
        algorithms: &[Algorithm],
        denoiser: Option<ResidualDenoiser>,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = dataset.n_antennas();
        if n != cfg.geometry.n_antennas {
            return Err(Error::config(
                "geometry.n_antennas",
                format!(
                    "dataset has N={n} but the configured geometry has N={}",
                    cfg.geometry.n_antennas
                ),
            ));
        }
        let resolvent = Arc::new(QuadraticResolvent::new(
            dataset.op.clone(),
            cfg.solver.sigma,
        )?);
        let lmmse = if algorithms.contains(&Algorithm::Lmmse) {
            let cov = fit_covariance(cfg, dataset)?;
            Some(LmmseEstimator::new(&dataset.op, &cov)?)
        } else {
            None
        };
        let denoiser = if algorithms.contains(&Algorithm::PrDen) {
            let den = denoiser.ok_or_else(|| {
                Error::config(
                    "weights",
                    "pr-den needs a trained denoiser; pass --weights <file.prdw>",
                )
            })?;
            den.expect_antennas(n)?;
            let res = Arc::new(QuadraticResolvent::new(dataset.op.clone(), den.sigma())?);
            Some((den, res))
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            resolvent,
            lmmse,
            denoiser,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// The L1 problem for `m`, with the configured weight rule applied.
    pub fn instance(
        &self,
        m: &Measurement,
        resolvent: &Arc<QuadraticResolvent>,
    ) -> Result<ProblemInstance> {
        let inst = ProblemInstance::with_resolvent(
            resolvent.clone(),
            m.y.clone().into(),
            0.0,
            m.noise_var,
        )?;
        let lambda = self.cfg.solver.lambda_for(inst.lambda_max());
        inst.with_lambda(lambda)
    }

    pub fn estimate(&self, alg: Algorithm, m: &Measurement) -> Result<Estimate> {
        self.estimate_observed(
            alg,
            m,
            &self.cfg.solver.solver_config(),
            &self.cfg.benchmark.iterative_config(),
            &mut |_, _| {},
        )
    }

    /// Runs `alg`, reporting the running primal iterate after every
    /// iteration of the iterative methods.
    pub fn estimate_observed(
        &self,
        alg: Algorithm,
        m: &Measurement,
        solver: &SolverConfig,
        iterative: &IterativeConfig,
        observer: &mut dyn FnMut(usize, &DVector<f64>),
    ) -> Result<Estimate> {
        let single = |h: DVector<f64>| Estimate {
            h,
            iterations: 1,
            converged: true,
        };
        match alg {
            Algorithm::Ls => Ok(single(
                ls_estimate(&self.instance(m, &self.resolvent)?).into_inner(),
            )),
            Algorithm::Lmmse => {
                let est = self
                    .lmmse
                    .as_ref()
                    .ok_or_else(|| Error::config("algorithm", "lmmse was not prepared"))?;
                Ok(single(est.estimate(&m.y, m.noise_var)))
            }
            Algorithm::Ista | Algorithm::Fista => {
                let inst = self.instance(m, &self.resolvent)?;
                let out = proximal_gradient(
                    &inst,
                    inst.lambda(),
                    iterative,
                    alg == Algorithm::Fista,
                    |k, x| observer(k, x),
                )?;
                Ok(Estimate {
                    h: out.estimate.into_inner(),
                    iterations: out.iterations,
                    converged: out.converged,
                })
            }
            Algorithm::Pr => {
                let inst = self.instance(m, &self.resolvent)?;
                let g = L1SoftThreshold::new(inst.lambda())?;
                let out = run_observed(&inst, &g, solver, |s| observer(s.k, &s.q))?;
                Ok(Estimate {
                    h: out.estimate.into_inner(),
                    iterations: out.iterations,
                    converged: out.converged,
                })
            }
            Algorithm::PrDen => {
                let (den, res) = self.denoiser.as_ref().ok_or_else(|| {
                    Error::config(
                        "weights",
                        "pr-den needs a trained denoiser; pass --weights <file.prdw>",
                    )
                })?;
                let inst = ProblemInstance::with_resolvent(
                    res.clone(),
                    m.y.clone().into(),
                    0.0,
                    m.noise_var,
                )?;
                let out = run_deq_observed(&inst, den, solver, |s| observer(s.k, &s.q))?;
                Ok(Estimate {
                    h: out.estimate.into_inner(),
                    iterations: out.iterations,
                    converged: out.converged,
                })
            }
        }
    }

    fn nmse(&self, h: &DVector<f64>, e: &DVector<f64>) -> Result<f64> {
        Ok(nmse_db_with(h, e, !self.cfg.benchmark.nmse_unsquared)?.db())
    }
}

fn fit_covariance(cfg: &RunConfig, dataset: &Dataset) -> Result<CovarianceModel> {
    let sim = ChannelSimulator::new(&cfg.geometry, &cfg.channel)?;
    let system =
        PilotSystem::from_operator(dataset.op.clone(), cfg.pilot.n_rf, dataset.flags.angular)?;
    let normalize = dataset.flags.normalized;
    let samples: Vec<DVector<f64>> = (0..cfg.benchmark.cov_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, Stream::CovarianceFit, i);
            let paths = sim.draw_paths(&mut rng);
            prepare_target(&system, &sim.synthesize(&paths), normalize).into_inner()
        })
        .collect();
    CovarianceModel::fit(&samples, cfg.benchmark.cov_ridge)
}

/// The measurements stored in the dataset.
pub fn stored_measurements(dataset: &Dataset) -> Vec<Measurement> {
    (0..dataset.len())
        .map(|i| Measurement {
            y: dataset.samples[i].y.clone(),
            noise_var: dataset.noise_var(i),
        })
        .collect()
}

/// Fresh measurements of the dataset channels at `snr_db`. Sample `i` uses
/// the same noise stream at every SNR, so sweeps differ only in the level.
pub fn remeasure(
    dataset: &Dataset,
    n_rf: usize,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<Measurement>> {
    let system = PilotSystem::from_operator(dataset.op.clone(), n_rf, dataset.flags.angular)?;
    dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(seed, Stream::Sweep, i as u64);
            let meas = add_noise(&system, &s.h.clone().into(), snr_db, &mut rng)?;
            Ok(Measurement {
                y: meas.y.into_inner(),
                noise_var: meas.noise_var,
            })
        })
        .collect()
}

/// Per-sample NMSE of `alg` on `measurements` of the dataset channels.
pub fn estimate_samples(
    set: &EstimatorSet,
    dataset: &Dataset,
    measurements: &[Measurement],
    alg: Algorithm,
) -> Result<Vec<SampleResult>> {
    if measurements.len() != dataset.len() {
        return Err(Error::dim(
            "measurements",
            dataset.len(),
            measurements.len(),
        ));
    }
    measurements
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let est = set.estimate(alg, m)?;
            Ok(SampleResult {
                index: i,
                nmse_db: set.nmse(&dataset.samples[i].h, &est.h)?,
                iterations: est.iterations,
                converged: est.converged,
            })
        })
        .collect()
}

pub fn estimate_dataset(
    set: &EstimatorSet,
    dataset: &Dataset,
    alg: Algorithm,
) -> Result<Vec<SampleResult>> {
    estimate_samples(set, dataset, &stored_measurements(dataset), alg)
}

/// Median over repeats of the mean per-sample wall time in milliseconds.
/// The solver stops on `||x+ - x|| < timing_tol` here.
pub fn time_algorithm(
    set: &EstimatorSet,
    alg: Algorithm,
    measurements: &[Measurement],
) -> Result<f64> {
    let b = &set.cfg.benchmark;
    let solver = SolverConfig {
        stop: StopRule::XStep(b.timing_tol),
        ..set.cfg.solver.solver_config()
    };
    let iterative = b.iterative_config();
    let subset = &measurements[..b.timing_samples.min(measurements.len())];
    if subset.is_empty() {
        return Ok(f64::NAN);
    }
    let mut per_repeat = Vec::with_capacity(b.timing_repeats);
    for _ in 0..b.timing_repeats {
        let start = Instant::now();
        for m in subset {
            set.estimate_observed(alg, m, &solver, &iterative, &mut |_, _| {})?;
        }
        per_repeat.push(start.elapsed().as_secs_f64() * 1e3 / subset.len() as f64);
    }
    Ok(median(&per_repeat))
}

fn summarize(alg: Algorithm, snr_db: f64, results: &[SampleResult], time_ms: f64) -> ReportRow {
    let nmse: Vec<f64> = results.iter().map(|r| r.nmse_db).collect();
    let iters: Vec<f64> = results.iter().map(|r| r.iterations as f64).collect();
    let (mean, std) = mean_std(&nmse);
    ReportRow {
        algorithm: alg.name().to_string(),
        snr_db,
        n_samples: results.len(),
        nmse_db_mean: mean,
        nmse_db_std: std,
        iters_mean: mean_std(&iters).0,
        time_ms_median: time_ms,
    }
}

/// One row per `(algorithm, snr)`, algorithm-major. With no SNRs the stored
/// measurements are used and the row carries the dataset SNR.
pub fn snr_sweep(
    set: &EstimatorSet,
    dataset: &Dataset,
    algorithms: &[Algorithm],
    snrs: &[f64],
) -> Result<BenchmarkReport> {
    let groups: Vec<(f64, Vec<Measurement>)> = if snrs.is_empty() {
        let snr = dataset.samples.first().map_or(f64::NAN, |s| s.snr_db);
        vec![(snr, stored_measurements(dataset))]
    } else {
        snrs.iter()
            .map(|&snr| {
                Ok((
                    snr,
                    remeasure(dataset, set.cfg.pilot.n_rf, snr, set.cfg.seed)?,
                ))
            })
            .collect::<Result<_>>()?
    };
    let mut report = BenchmarkReport::default();
    for &alg in algorithms {
        for (snr, meas) in &groups {
            let results = estimate_samples(set, dataset, meas, alg)?;
            let time_ms = if set.cfg.benchmark.timing {
                time_algorithm(set, alg, meas)?
            } else {
                f64::NAN
            };
            report.rows.push(summarize(alg, *snr, &results, time_ms));
        }
    }
    Ok(report)
}

/// Mean NMSE (dB) of the running primal iterate at iterations `1..=iters`.
/// Stopping rules are disabled; a run that hits an exact fixed point early
/// keeps its last value. Non-iterative algorithms are skipped.
pub fn iteration_curve(
    set: &EstimatorSet,
    dataset: &Dataset,
    measurements: &[Measurement],
    algorithms: &[Algorithm],
    iters: usize,
) -> Result<Vec<CurvePoint>> {
    let solver = SolverConfig {
        max_iter: iters,
        stop: StopRule::EtaRelative(0.0),
        ..set.cfg.solver.solver_config()
    };
    let iterative = IterativeConfig {
        max_iter: iters,
        tol: 0.0,
    };
    let mut points = Vec::new();
    for &alg in algorithms.iter().filter(|a| a.is_iterative()) {
        let per_sample: Vec<Vec<f64>> =
            measurements
                .par_iter()
                .enumerate()
                .map(|(i, m)| {
                    let h = &dataset.samples[i].h;
                    let mut curve = Vec::with_capacity(iters);
                    let mut err = None;
                    set.estimate_observed(alg, m, &solver, &iterative, &mut |_, x| match set
                        .nmse(h, x)
                    {
                        Ok(v) => curve.push(v),
                        Err(e) => err = Some(e),
                    })?;
                    if let Some(e) = err {
                        return Err(e);
                    }
                    let last = curve.last().copied().unwrap_or(f64::NAN);
                    curve.resize(iters, last);
                    Ok(curve)
                })
                .collect::<Result<_>>()?;
        for k in 0..iters {
            let column: Vec<f64> = per_sample.iter().map(|c| c[k]).collect();
            points.push(CurvePoint {
                algorithm: alg.name().to_string(),
                iteration: k + 1,
                nmse_db_mean: mean_std(&column).0,
            });
        }
    }
    Ok(points)
}
