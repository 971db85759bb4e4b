//! Peaceman-Rachford splitting on the dual of `min_h g(h) + 1/2 ||y - A h||^2`.
//!
//! One iteration, starting from the dual iterate `eta`:
//!
//! ```text
//! q+   = (A^T A + sigma I)^-1 (A^T y + eta)
//! w+   = eta - sigma q+
//! p+   = prox_{g/sigma}((2 sigma q+ - eta) / sigma)
//! x+   = eta + sigma p+ - 2 sigma q+
//! eta+ = eta + 2 sigma (p+ - q+)
//! ```
//!
//! The `eta` sequence is exactly the fixed-point iteration
//! `eta+ = R_{sigma M1} R_{sigma M2} eta` (see [`iterate_raw`]). `p` and `q`
//! converge to the primal minimizer and `x`, `w` to the dual one, so the
//! channel estimate reported by [`run`] is `q`. `x` is kept as
//! [`SolveOutcome::dual_estimate`].
//!
//! Replacing the prox by a learned denoiser gives the deep-equilibrium
//! inference loop [`run_deq`].

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserProx};
use crate::error::{Error, Result};
use crate::model::{ProblemInstance, RealEmbedding};
use crate::prox::{reflected_resolvent_m1, reflected_resolvent_m2, ProxOperator};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub eta: DVector<f64>,
    pub q: DVector<f64>,
    pub w: DVector<f64>,
    pub p: DVector<f64>,
    pub x: DVector<f64>,
    pub k: usize,
}

/// `eta0 = x0 + sigma p0`, with `p0 = x0` when omitted.
pub fn init_state(x0: &DVector<f64>, p0: Option<&DVector<f64>>, sigma: f64) -> Result<SolverState> {
    let p0 = p0.unwrap_or(x0);
    if p0.len() != x0.len() {
        return Err(Error::dim("initial p", x0.len(), p0.len()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(SolverState {
        eta: x0 + p0 * sigma,
        q: p0.clone(),
        w: x0.clone(),
        p: p0.clone(),
        x: x0.clone(),
        k: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// The explicit `q, w, p, x, eta` update. Serialized as `algorithm1`.
    #[default]
    #[serde(rename = "algorithm1")]
    Explicit,
    RawFixedPoint,
    Deq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tol", rename_all = "snake_case")]
pub enum StopRule {
    /// `||eta+ - eta|| <= tol (1 + ||eta||)`.
    EtaRelative(f64),
    /// `||x+ - x|| < tol`, the criterion used for runtime comparisons.
    XStep(f64),
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::EtaRelative(1e-8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub stop: StopRule,
    /// Krasnosel'skii-Mann averaging weight; 1 is the plain iteration.
    pub damping_rho: f64,
    pub mode: SolverMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            stop: StopRule::default(),
            damping_rho: 1.0,
            mode: SolverMode::Explicit,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping_rho > 0.0 && self.damping_rho <= 1.0) {
            return Err(Error::config(
                "solver.damping_rho",
                format!("must lie in (0, 1], got {}", self.damping_rho),
            ));
        }
        let tol = match self.stop {
            StopRule::EtaRelative(t) | StopRule::XStep(t) => t,
        };
        if !(tol >= 0.0) {
            return Err(Error::config(
                "solver.stop",
                format!("tolerance must be >= 0, got {tol}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    /// `||eta+ - eta||` per iteration.
    pub eta_residual: Vec<f64>,
    /// `||p - q||` per iteration.
    pub primal_gap: Vec<f64>,
    /// Regularized objective at `q`; NaN when `g` has no closed-form value.
    pub objective: Vec<f64>,
    /// Seconds since the start of the run.
    pub wall_time: Vec<f64>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.eta_residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta_residual.is_empty()
    }

    /// Ratios `||eta^{k+1} - eta^k|| / ||eta^k - eta^{k-1}||`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.eta_residual
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }

    /// Fraction of steps whose residual did not grow.
    pub fn contraction_fraction(&self) -> f64 {
        let ratios = self.contraction_ratios();
        if ratios.is_empty() {
            return 1.0;
        }
        ratios.iter().filter(|&&r| r <= 1.0).count() as f64 / ratios.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Primal channel estimate `q^L`.
    pub estimate: RealEmbedding,
    /// `x^L`, the iterate the algorithm listing outputs; it tracks the dual optimum.
    pub dual_estimate: RealEmbedding,
    pub state: SolverState,
    pub trace: SolverTrace,
    pub converged: bool,
    pub iterations: usize,
}

/// One step of the explicit update. `damping_rho < 1` averages the new `eta` with the old one.
pub fn iterate_once(
    state: &SolverState,
    instance: &ProblemInstance,
    prox_g: &dyn ProxOperator,
    damping_rho: f64,
) -> Result<SolverState> {
    let sigma = instance.sigma();
    let eta = &state.eta;
    if eta.len() != instance.dim() {
        return Err(Error::dim("solver state", instance.dim(), eta.len()));
    }
    let q = instance.resolvent().solve(&(instance.aty() + eta));
    let w = eta - &q * sigma;
    let two_sigma_q = &q * (2.0 * sigma);
    let p = prox_g.evaluate(&((&two_sigma_q - eta) / sigma), 1.0 / sigma);
    let x = eta + &p * sigma - &two_sigma_q;
    let mut eta_next = eta + (&p - &q) * (2.0 * sigma);
    if damping_rho < 1.0 {
        eta_next = eta * (1.0 - damping_rho) + eta_next * damping_rho;
    }
    let k = state.k + 1;
    if !eta_next
        .iter()
        .chain(q.iter())
        .chain(p.iter())
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite { iteration: k });
    }
    Ok(SolverState {
        eta: eta_next,
        q,
        w,
        p,
        x,
        k,
    })
}

/// `eta+ = R_{sigma M1}(R_{sigma M2}(eta))`, built from the two reflected resolvents.
pub fn iterate_raw(
    eta: &DVector<f64>,
    instance: &ProblemInstance,
    prox_g: &dyn ProxOperator,
) -> Result<DVector<f64>> {
    let v = reflected_resolvent_m2(instance, eta)?;
    Ok(reflected_resolvent_m1(prox_g, instance.sigma(), &v))
}

pub fn run(
    instance: &ProblemInstance,
    prox_g: &dyn ProxOperator,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    run_observed(instance, prox_g, config, |_| {})
}

/// Like [`run`], calling `observer` with the state after every iteration.
pub fn run_observed(
    instance: &ProblemInstance,
    prox_g: &dyn ProxOperator,
    config: &SolverConfig,
    mut observer: impl FnMut(&SolverState),
) -> Result<SolveOutcome> {
    config.validate()?;
    if config.mode == SolverMode::RawFixedPoint && !prox_g.is_convex() {
        return Err(Error::config(
            "solver.mode",
            "the raw fixed-point iteration needs a convex regularizer",
        ));
    }
    let zero = DVector::zeros(instance.dim());
    let mut state = init_state(&zero, None, instance.sigma())?;
    let mut trace = SolverTrace::default();
    let mut converged = false;
    let start = Instant::now();

    for _ in 0..config.max_iter {
        let next = match config.mode {
            SolverMode::Explicit | SolverMode::Deq => {
                iterate_once(&state, instance, prox_g, config.damping_rho)?
            }
            SolverMode::RawFixedPoint => raw_step(&state, instance, prox_g, config.damping_rho)?,
        };
        let eta_res = (&next.eta - &state.eta).norm();
        trace.eta_residual.push(eta_res);
        trace.primal_gap.push((&next.p - &next.q).norm());
        trace.objective.push(objective(instance, prox_g, &next.q));
        trace.wall_time.push(start.elapsed().as_secs_f64());

        let done = match config.stop {
            StopRule::EtaRelative(tol) => eta_res <= tol * (1.0 + state.eta.norm()),
            StopRule::XStep(tol) => (&next.x - &state.x).norm() < tol,
        };
        state = next;
        observer(&state);
        if done {
            converged = true;
            break;
        }
    }

    Ok(SolveOutcome {
        estimate: state.q.clone().into(),
        dual_estimate: state.x.clone().into(),
        iterations: state.k,
        state,
        trace,
        converged,
    })
}

/// Deep-equilibrium inference: the same loop with `prox_{g/sigma}` replaced by `denoiser`.
pub fn run_deq(
    instance: &ProblemInstance,
    denoiser: &dyn Denoiser,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    run_deq_observed(instance, denoiser, config, |_| {})
}

pub fn run_deq_observed(
    instance: &ProblemInstance,
    denoiser: &dyn Denoiser,
    config: &SolverConfig,
    observer: impl FnMut(&SolverState),
) -> Result<SolveOutcome> {
    denoiser.check_dim(instance.dim())?;
    let plug = DenoiserProx::new(denoiser);
    let config = SolverConfig {
        mode: SolverMode::Deq,
        ..config.clone()
    };
    run_observed(instance, &plug, &config, observer)
}

/// `g(q) + 1/2 ||y - A q||^2`.
pub fn objective(instance: &ProblemInstance, prox_g: &dyn ProxOperator, q: &DVector<f64>) -> f64 {
    match prox_g.value(q) {
        Some(g) => g + instance.data_fidelity(q),
        None => f64::NAN,
    }
}

// Raw mode: advance eta through the reflected resolvents and recover the
// primal/dual quantities from the same resolvents for the trace.
fn raw_step(
    state: &SolverState,
    instance: &ProblemInstance,
    prox_g: &dyn ProxOperator,
    damping_rho: f64,
) -> Result<SolverState> {
    let sigma = instance.sigma();
    let eta = &state.eta;
    let q = instance.resolvent().solve(&(instance.aty() + eta));
    let w = eta - &q * sigma;
    let v = &w * 2.0 - eta;
    let x = crate::prox::resolvent_m1(prox_g, sigma, &v);
    let p = (&x - eta + &q * (2.0 * sigma)) / sigma;
    let mut eta_next = reflected_resolvent_m1(prox_g, sigma, &v);
    if damping_rho < 1.0 {
        eta_next = eta * (1.0 - damping_rho) + eta_next * damping_rho;
    }
    let k = state.k + 1;
    if !eta_next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { iteration: k });
    }
    Ok(SolverState {
        eta: eta_next,
        q,
        w,
        p,
        x,
        k,
    })
}
