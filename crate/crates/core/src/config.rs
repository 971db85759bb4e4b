//! Run configuration read from a TOML file.
//!
//! Every field has a default, so an empty file is the desk-scale setup.
//! Command-line flags are applied on top of the parsed file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::IterativeConfig;
use crate::channel::dataset::DatasetSpec;
use crate::channel::pilot::PilotConfig;
use crate::channel::{ArrayGeometry, ChannelConfig};
use crate::error::{Error, Result};
use crate::solver::{SolverConfig, SolverMode, StopRule};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: ArrayGeometry,
    pub channel: ChannelConfig,
    pub pilot: PilotConfig,
    pub dataset: DatasetSection,
    pub solver: SolverSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub snr_db: f64,
    pub noiseless: bool,
    /// Scale every channel to `||h||^2 = N`.
    pub normalize: bool,
    /// Estimate `F^H h` instead of `h`.
    pub angular: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_samples: 100,
            snr_db: 10.0,
            noiseless: false,
            normalize: true,
            angular: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    EtaRelative,
    XStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub sigma: f64,
    /// Absolute L1 weight. When absent, `lambda_rel * ||A^T y||_inf` is used
    /// per sample.
    pub lambda: Option<f64>,
    pub lambda_rel: f64,
    pub max_iter: usize,
    pub stop: StopKind,
    pub tol: f64,
    pub damping_rho: f64,
    pub mode: SolverMode,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            lambda: None,
            lambda_rel: 0.015,
            max_iter: 2000,
            stop: StopKind::EtaRelative,
            tol: 1e-8,
            damping_rho: 1.0,
            mode: SolverMode::Explicit,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.max_iter,
            stop: match self.stop {
                StopKind::EtaRelative => StopRule::EtaRelative(self.tol),
                StopKind::XStep => StopRule::XStep(self.tol),
            },
            damping_rho: self.damping_rho,
            mode: self.mode,
        }
    }

    /// L1 weight for a measurement whose `||A^T y||_inf` is `lambda_max`.
    pub fn lambda_for(&self, lambda_max: f64) -> f64 {
        self.lambda.unwrap_or(self.lambda_rel * lambda_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(
                "solver.sigma",
                format!("must be finite and > 0, got {}", self.sigma),
            ));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config(
                    "solver.lambda",
                    format!("must be finite and >= 0, got {l}"),
                ));
            }
        }
        if !(self.lambda_rel >= 0.0 && self.lambda_rel.is_finite()) {
            return Err(Error::config(
                "solver.lambda_rel",
                format!("must be finite and >= 0, got {}", self.lambda_rel),
            ));
        }
        self.solver_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub algorithms: Vec<String>,
    /// Empty means: use the measurements stored in the dataset.
    pub snrs: Vec<f64>,
    /// Channels drawn to fit the LMMSE second-moment matrix.
    pub cov_samples: usize,
    pub cov_ridge: f64,
    pub fista_max_iter: usize,
    pub fista_tol: f64,
    pub curve_iters: usize,
    pub timing: bool,
    pub timing_repeats: usize,
    pub timing_samples: usize,
    /// `||x+ - x||` threshold for the solver during timing runs.
    pub timing_tol: f64,
    pub nmse_unsquared: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            algorithms: ["ls", "lmmse", "fista", "pr"].map(String::from).to_vec(),
            snrs: Vec::new(),
            cov_samples: 2000,
            cov_ridge: 1e-9,
            fista_max_iter: 2000,
            fista_tol: 1e-8,
            curve_iters: 50,
            timing: false,
            timing_repeats: 5,
            timing_samples: 20,
            timing_tol: 1e-2,
            nmse_unsquared: false,
        }
    }
}

impl BenchmarkSection {
    pub fn iterative_config(&self) -> IterativeConfig {
        IterativeConfig {
            max_iter: self.fista_max_iter,
            tol: self.fista_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::config(
                "benchmark.algorithms",
                "list at least one algorithm",
            ));
        }
        for a in &self.algorithms {
            a.parse::<crate::bench::Algorithm>()?;
        }
        if let Some(s) = self.snrs.iter().find(|s| !s.is_finite()) {
            return Err(Error::config(
                "benchmark.snrs",
                format!("SNRs must be finite, got {s}"),
            ));
        }
        if self.cov_samples == 0 {
            return Err(Error::config(
                "benchmark.cov_samples",
                "need at least one channel",
            ));
        }
        if !(self.cov_ridge >= 0.0 && self.cov_ridge.is_finite()) {
            return Err(Error::config(
                "benchmark.cov_ridge",
                "must be finite and >= 0",
            ));
        }
        if !(self.fista_tol >= 0.0) {
            return Err(Error::config("benchmark.fista_tol", "must be >= 0"));
        }
        if self.timing && (self.timing_repeats == 0 || self.timing_samples == 0) {
            return Err(Error::config(
                "benchmark.timing_repeats",
                "timing needs repeats and samples > 0",
            ));
        }
        if !(self.timing_tol > 0.0) {
            return Err(Error::config("benchmark.timing_tol", "must be > 0"));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_default();
            Error::config(
                if field.is_empty() {
                    "config".into()
                } else {
                    format!("config at {field}")
                },
                e.message(),
            )
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.channel.validate()?;
        self.pilot.validate()?;
        if self.dataset.snr_db.is_nan() {
            return Err(Error::config("dataset.snr_db", "must be a number"));
        }
        self.solver.validate()?;
        self.benchmark.validate()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            geometry: self.geometry,
            channel: self.channel.clone(),
            pilot: self.pilot,
            n_samples: self.dataset.n_samples,
            snr_db: if self.dataset.noiseless {
                f64::INFINITY
            } else {
                self.dataset.snr_db
            },
            normalize: self.dataset.normalize,
            angular: self.dataset.angular,
        }
    }
}
