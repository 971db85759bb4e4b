//! Numerical self-checks of the splitting machinery on small random problems.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{MeasurementOperator, ProblemInstance, RealEmbedding};
use crate::prox::{moreau_check, L1SoftThreshold, ProxOperator};
use crate::resolvent::{QuadraticResolvent, ResolventStrategy};
use crate::rng::{stream_rng, Stream};
use crate::solver::{init_state, iterate_once, iterate_raw};

pub const LAMBDAS: [f64; 2] = [0.01, 0.1];
pub const SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const MOREAU_SIGMAS: [f64; 3] = [0.1, 1.0, 10.0];

pub const TOL_EQUIVALENCE: f64 = 1e-10;
pub const TOL_IDENTITY: f64 = 1e-12;
pub const TOL_MOREAU: f64 = 1e-10;
pub const TOL_NONEXPANSIVE: f64 = 1e-9;
pub const TOL_WOODBURY: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Iterations compared in the equivalence and identity suites.
    pub iters: usize,
    /// Random instances per `(lambda, sigma)` pair.
    pub instances_per_setting: usize,
    pub pairs: usize,
    pub n_complex: usize,
    pub m_complex: usize,
    /// Multiplies every tolerance. Only useful to check that failures are reported.
    pub tolerance_scale: f64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iters: 50,
            instances_per_setting: 4,
            pairs: 1000,
            n_complex: 16,
            m_complex: 8,
            tolerance_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    /// Worst defect observed.
    pub defect: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.defect <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

/// Random complex `m x n` operator and measurement with entries uniform in `[-1, 1)`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    lambda: f64,
    sigma: f64,
) -> Result<ProblemInstance> {
    let re = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let im = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let op = Arc::new(MeasurementOperator::from_blocks(re, im)?);
    let y = RealEmbedding::new(DVector::from_fn(2 * m, |_, _| rng.random_range(-1.0..1.0)));
    ProblemInstance::new(op, y, lambda, sigma, 0.0)
}

fn settings(cfg: &SelftestConfig) -> impl Iterator<Item = (u64, f64, f64)> + '_ {
    LAMBDAS.into_iter().flat_map(move |l| {
        SIGMAS
            .into_iter()
            .flat_map(move |s| (0..cfg.instances_per_setting as u64).map(move |i| (i, l, s)))
    })
}

fn setting_rng(cfg: &SelftestConfig, k: u64) -> ChaCha8Rng {
    stream_rng(cfg.seed, Stream::Selftest, k)
}

/// Largest `||eta_alg^k - eta_raw^k||` and largest
/// `||(x - w) - (eta+ - eta)/2||` over all instances and iterations.
pub fn equivalence_and_identity(cfg: &SelftestConfig) -> Result<(SuiteResult, SuiteResult)> {
    let (mut eq, mut id, mut cases) = (0.0_f64, 0.0_f64, 0);
    for (k, (_, lambda, sigma)) in settings(cfg).enumerate() {
        let mut rng = setting_rng(cfg, k as u64);
        let inst = random_instance(&mut rng, cfg.m_complex, cfg.n_complex, lambda, sigma)?;
        let g = L1SoftThreshold::new(lambda)?;
        let mut state = init_state(&DVector::zeros(inst.dim()), None, sigma)?;
        let mut eta_raw = state.eta.clone();
        for _ in 0..cfg.iters {
            let next = iterate_once(&state, &inst, &g, 1.0)?;
            eta_raw = iterate_raw(&eta_raw, &inst, &g)?;
            eq = eq.max((&next.eta - &eta_raw).norm());
            let half_step = (&next.eta - &state.eta) * 0.5;
            id = id.max((&next.x - &next.w - half_step).norm());
            state = next;
        }
        cases += 1;
    }
    Ok((
        SuiteResult {
            name: "algorithm/raw iteration equivalence",
            defect: eq,
            tolerance: TOL_EQUIVALENCE * cfg.tolerance_scale,
            cases,
        },
        SuiteResult {
            name: "x - w = (eta+ - eta)/2 identity",
            defect: id,
            tolerance: TOL_IDENTITY * cfg.tolerance_scale,
            cases,
        },
    ))
}

/// Moreau decomposition defect for the L1 prox on random points.
pub fn moreau(cfg: &SelftestConfig) -> Result<SuiteResult> {
    let mut rng = setting_rng(cfg, 1000);
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for lambda in LAMBDAS {
        let g = L1SoftThreshold::new(lambda)?;
        for sigma in MOREAU_SIGMAS {
            for _ in 0..50 {
                let z = DVector::from_fn(2 * cfg.n_complex, |_, _| rng.random_range(-2.0..2.0));
                worst = worst.max(moreau_check(&g, &z, sigma).expect("closed-form conjugate"));
                cases += 1;
            }
        }
    }
    Ok(SuiteResult {
        name: "Moreau decomposition (L1)",
        defect: worst,
        tolerance: TOL_MOREAU * cfg.tolerance_scale,
        cases,
    })
}

/// Worst `||T a - T b|| / ||a - b|| - 1` for the composed reflected resolvents.
pub fn nonexpansive(cfg: &SelftestConfig) -> Result<SuiteResult> {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for (k, (_, lambda, sigma)) in settings(cfg).enumerate() {
        let mut rng = setting_rng(cfg, 2000 + k as u64);
        let inst = random_instance(&mut rng, cfg.m_complex, cfg.n_complex, lambda, sigma)?;
        let g = L1SoftThreshold::new(lambda)?;
        worst = worst.max(max_expansion(&inst, &g, cfg.pairs, &mut rng)? - 1.0);
        cases += cfg.pairs;
    }
    Ok(SuiteResult {
        name: "nonexpansiveness of the composed map",
        defect: worst.max(0.0),
        tolerance: TOL_NONEXPANSIVE * cfg.tolerance_scale,
        cases,
    })
}

/// Largest ratio `||T a - T b|| / ||a - b||` over `pairs` random pairs.
pub fn max_expansion(
    inst: &ProblemInstance,
    g: &dyn ProxOperator,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for j in 0..pairs {
        // alternate far-apart and nearby pairs
        let spread = if j % 2 == 0 { 5.0 } else { 1e-2 };
        let a = DVector::from_fn(inst.dim(), |_, _| rng.random_range(-5.0..5.0));
        let b = &a + DVector::from_fn(inst.dim(), |_, _| rng.random_range(-spread..spread));
        let d = (&a - &b).norm();
        if d == 0.0 {
            continue;
        }
        let ta = iterate_raw(&a, inst, g)?;
        let tb = iterate_raw(&b, inst, g)?;
        worst = worst.max((ta - tb).norm() / d);
    }
    Ok(worst)
}

/// Relative disagreement of the Woodbury and direct resolvents.
pub fn woodbury(cfg: &SelftestConfig) -> Result<SuiteResult> {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for (k, sigma) in MOREAU_SIGMAS.into_iter().enumerate() {
        let mut rng = setting_rng(cfg, 3000 + k as u64);
        let inst = random_instance(&mut rng, cfg.m_complex, cfg.n_complex, 0.0, sigma)?;
        let op = inst.shared_op().clone();
        let direct =
            QuadraticResolvent::with_strategy(op.clone(), sigma, ResolventStrategy::Direct)?;
        let wood = QuadraticResolvent::with_strategy(op, sigma, ResolventStrategy::Woodbury)?;
        for _ in 0..20 {
            let b = DVector::from_fn(inst.dim(), |_, _| rng.random_range(-1.0..1.0));
            let (x, z) = (direct.solve(&b), wood.solve(&b));
            worst = worst.max((&x - &z).norm() / x.norm().max(f64::MIN_POSITIVE));
            cases += 1;
        }
    }
    Ok(SuiteResult {
        name: "Woodbury vs direct resolvent",
        defect: worst,
        tolerance: TOL_WOODBURY * cfg.tolerance_scale,
        cases,
    })
}

pub fn run_selftest(cfg: &SelftestConfig) -> Result<SelftestReport> {
    let (eq, id) = equivalence_and_identity(cfg)?;
    Ok(SelftestReport {
        suites: vec![eq, id, moreau(cfg)?, nonexpansive(cfg)?, woodbury(cfg)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SelftestConfig {
        SelftestConfig {
            instances_per_setting: 1,
            pairs: 100,
            ..Default::default()
        }
    }

    #[test]
    fn default_suites_pass() {
        let report = run_selftest(&quick()).unwrap();
        for s in &report.suites {
            assert!(s.passed(), "{s:?}");
        }
        assert_eq!(report.suites[0].cases, 6);
    }

    #[test]
    fn zero_tolerance_fails() {
        let cfg = SelftestConfig {
            tolerance_scale: 0.0,
            ..quick()
        };
        assert!(!run_selftest(&cfg).unwrap().passed());
    }

    #[test]
    fn defaults_cover_twenty_four_instances() {
        assert_eq!(settings(&SelftestConfig::default()).count(), 24);
    }
}
