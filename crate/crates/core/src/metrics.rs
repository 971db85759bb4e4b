//! NMSE, benchmark reports and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// NMSE in dB. A perfect estimate has no finite dB value and is kept apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nmse {
    Db(f64),
    Exact,
}

impl Nmse {
    /// dB value, `-inf` for [`Nmse::Exact`].
    pub fn db(self) -> f64 {
        match self {
            Nmse::Db(v) => v,
            Nmse::Exact => f64::NEG_INFINITY,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Nmse::Exact)
    }
}

/// `10 log10(||h - e||^2 / ||h||^2)`; with `squared = false` the norms are
/// not squared (half the dB magnitude).
pub fn nmse_db_with(h_true: &DVector<f64>, h_est: &DVector<f64>, squared: bool) -> Result<Nmse> {
    if h_true.len() != h_est.len() {
        return Err(Error::dim("nmse estimate", h_true.len(), h_est.len()));
    }
    let denom = h_true.norm_squared();
    if denom == 0.0 {
        return Err(Error::Domain("NMSE undefined for a zero channel".into()));
    }
    let num = (h_true - h_est).norm_squared();
    if num == 0.0 {
        return Ok(Nmse::Exact);
    }
    let ratio = num / denom;
    Ok(Nmse::Db(if squared {
        10.0 * ratio.log10()
    } else {
        5.0 * ratio.log10()
    }))
}

pub fn nmse_db(h_true: &DVector<f64>, h_est: &DVector<f64>) -> Result<Nmse> {
    nmse_db_with(h_true, h_est, true)
}

/// Mean and population standard deviation, summed in index order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub algorithm: String,
    pub snr_db: f64,
    pub n_samples: usize,
    pub nmse_db_mean: f64,
    pub nmse_db_std: f64,
    pub iters_mean: f64,
    /// NaN when timing was not requested.
    pub time_ms_median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub algorithm: String,
    pub iteration: usize,
    pub nmse_db_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub curves: Vec<CurvePoint>,
}

pub const REPORT_HEADER: &str =
    "algorithm,snr_db,n_samples,nmse_db_mean,nmse_db_std,iters_mean,time_ms_median";
pub const CURVE_HEADER: &str = "algorithm,iteration,nmse_db_mean";

impl BenchmarkReport {
    pub fn has_non_finite(&self) -> bool {
        self.rows.iter().any(|r| !r.nmse_db_mean.is_finite())
            || self.curves.iter().any(|c| !c.nmse_db_mean.is_finite())
    }

    /// Sample counts agree across algorithms at every SNR.
    pub fn counts_consistent(&self) -> bool {
        self.rows.iter().all(|r| {
            self.rows
                .iter()
                .filter(|o| o.snr_db.to_bits() == r.snr_db.to_bits())
                .all(|o| o.n_samples == r.n_samples)
        })
    }

    pub fn row(&self, algorithm: &str, snr_db: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.snr_db == snr_db)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.algorithm,
                r.snr_db,
                r.n_samples,
                r.nmse_db_mean,
                r.nmse_db_std,
                r.iters_mean,
                r.time_ms_median
            )
            .unwrap();
        }
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for c in &self.curves {
            writeln!(out, "{},{},{}", c.algorithm, c.iteration, c.nmse_db_mean).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_curves_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.curves_csv()).map_err(|e| Error::io(path, e))
    }
}
