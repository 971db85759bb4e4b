//! Reference estimators: least squares, linear MMSE with a sample
//! covariance, ISTA and FISTA on the L1-regularized objective.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{MeasurementOperator, ProblemInstance, RealEmbedding};
use crate::prox::soft_threshold_vec;

/// Minimum-norm least-squares estimate `A^+ y`.
pub fn ls_estimate(instance: &ProblemInstance) -> RealEmbedding {
    RealEmbedding::new(instance.op().pseudo_inverse() * instance.y().as_vector())
}

/// Second-moment matrix of real-form channels, fitted from samples.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub r_h: DMatrix<f64>,
    pub n_fit: usize,
    pub ridge: f64,
}

impl CovarianceModel {
    /// `R_h = (1/n) sum_i h_i h_i^T`. Channels are zero-mean (uniform carrier
    /// phase), so no centering is applied.
    pub fn fit(samples: &[DVector<f64>], ridge: f64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Domain("covariance fit needs at least one sample".into()))?;
        let dim = first.len();
        if !(ridge >= 0.0) {
            return Err(Error::Domain(format!("ridge must be >= 0, got {ridge}")));
        }
        let mut r_h = DMatrix::zeros(dim, dim);
        for h in samples {
            if h.len() != dim {
                return Err(Error::dim("covariance sample", dim, h.len()));
            }
            r_h.ger(1.0, h, h, 1.0);
        }
        r_h /= samples.len() as f64;
        // exact symmetry
        let r_h = (&r_h + r_h.transpose()) * 0.5;
        Ok(Self {
            r_h,
            n_fit: samples.len(),
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.r_h.nrows()
    }

    pub fn regularized(&self) -> DMatrix<f64> {
        &self.r_h + DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }
}

/// Linear MMSE estimator `R A^T (A R A^T + s I)^-1 y` for a fixed operator
/// and covariance, valid for any noise level `s`.
///
/// With `R = L L^T` and `B = A L`, the estimate equals
/// `L V (Lambda + s)^-1 V^T B^T y` where `B^T B = V Lambda V^T`, so one
/// eigendecomposition serves every noise level.
#[derive(Debug, Clone)]
pub struct LmmseEstimator {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl LmmseEstimator {
    pub fn new(op: &MeasurementOperator, cov: &CovarianceModel) -> Result<Self> {
        let n = 2 * op.n_complex();
        if cov.dim() != n {
            return Err(Error::dim("covariance dimension", n, cov.dim()));
        }
        let r = SymmetricEigen::new(cov.regularized());
        let sqrt_d = r.eigenvalues.map(|d| d.max(0.0).sqrt());
        let l = &r.eigenvectors * DMatrix::from_diagonal(&sqrt_d);
        let b = op.a_real() * &l;
        let btb = b.tr_mul(&b);
        let eig = SymmetricEigen::new((&btb + btb.transpose()) * 0.5);
        let left = &l * &eig.eigenvectors;
        let right = eig.eigenvectors.tr_mul(&b.transpose());
        Ok(Self {
            left,
            right,
            eigenvalues: eig.eigenvalues,
        })
    }

    /// `noise_var` is the variance of each real noise coordinate.
    pub fn estimate(&self, y: &DVector<f64>, noise_var: f64) -> DVector<f64> {
        let lmax = self.eigenvalues.amax();
        let floor = 1e-12 * lmax.max(f64::MIN_POSITIVE);
        let mut s = noise_var.max(0.0);
        if self.eigenvalues.iter().any(|&l| l.max(0.0) + s <= floor) {
            warn!(
                "LMMSE inner matrix is singular at noise_var={noise_var}; adding ridge {floor:e}"
            );
            s += floor;
        }
        let mut c = &self.right * y;
        for (ci, &l) in c.iter_mut().zip(self.eigenvalues.iter()) {
            *ci /= l.max(0.0) + s;
        }
        &self.left * c
    }
}

pub fn lmmse_estimate(instance: &ProblemInstance, cov: &CovarianceModel) -> Result<RealEmbedding> {
    let est = LmmseEstimator::new(instance.op(), cov)?;
    Ok(est
        .estimate(instance.y().as_vector(), instance.noise_var())
        .into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeConfig {
    pub max_iter: usize,
    /// Stop when `||x+ - x|| <= tol (1 + ||x||)`.
    pub tol: f64,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterativeOutcome {
    pub estimate: RealEmbedding,
    /// Objective `lambda ||x||_1 + 1/2 ||y - A x||^2` after each iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn lasso_objective(instance: &ProblemInstance, lambda: f64, x: &DVector<f64>) -> f64 {
    lambda * x.lp_norm(1) + instance.data_fidelity(x)
}

pub fn fista(
    instance: &ProblemInstance,
    lambda: f64,
    cfg: &IterativeConfig,
) -> Result<IterativeOutcome> {
    proximal_gradient(instance, lambda, cfg, true, |_, _| {})
}

pub fn ista(
    instance: &ProblemInstance,
    lambda: f64,
    cfg: &IterativeConfig,
) -> Result<IterativeOutcome> {
    proximal_gradient(instance, lambda, cfg, false, |_, _| {})
}

/// Proximal gradient with step `1/L`, `L` the largest eigenvalue of `A^T A`.
/// `accelerated` selects the FISTA momentum sequence. `observer` receives the
/// iterate after each step.
pub fn proximal_gradient(
    instance: &ProblemInstance,
    lambda: f64,
    cfg: &IterativeConfig,
    accelerated: bool,
    mut observer: impl FnMut(usize, &DVector<f64>),
) -> Result<IterativeOutcome> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let op = instance.op();
    let gram = op.gram();
    let lip = op.lipschitz_constant();
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let threshold = lambda * step;

    let dim = instance.dim();
    let mut x = DVector::zeros(dim);
    let mut extrapolated = x.clone();
    let mut t = 1.0_f64;
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=cfg.max_iter {
        let grad = gram * &extrapolated - instance.aty();
        let next = soft_threshold_vec(&(&extrapolated - grad * step), threshold);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        let delta = (&next - &x).norm();
        let done = delta <= cfg.tol * (1.0 + x.norm());
        if accelerated {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            extrapolated = &next + (&next - &x) * ((t - 1.0) / t_next);
            t = t_next;
        } else {
            extrapolated = next.clone();
        }
        x = next;
        iterations = k;
        objective.push(lasso_objective(instance, lambda, &x));
        observer(k, &x);
        if done {
            converged = true;
            break;
        }
    }

    Ok(IterativeOutcome {
        estimate: x.into(),
        objective,
        iterations,
        converged,
    })
}
