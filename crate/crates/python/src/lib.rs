//! Python bindings. Vectors cross the boundary as flat lists of floats in
//! the `[Re; Im]` real form; matrices as lists of rows.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use prden::baselines::{self, IterativeConfig};
use prden::bench::{self, Algorithm, EstimatorSet};
use prden::channel::dataset::{self, generate_dataset};
use prden::denoiser::{ResidualDenoiser as CoreDenoiser, WeightFile};
use prden::metrics::nmse_db_with;
use prden::prox::{self, L1SoftThreshold, ProxOperator, ZeroRegularizer};
use prden::selftest::{run_selftest, SelftestConfig};
use prden::solver::{self, SolverConfig, StopRule};
use prden::{Error, RealEmbedding, RunConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) | Error::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

/// Complex measurement operator `A`, given by its real and imaginary parts.
#[pyclass(name = "MeasurementOperator", module = "prden", frozen)]
struct PyOperator {
    inner: Arc<prden::MeasurementOperator>,
}

#[pymethods]
impl PyOperator {
    #[new]
    fn new(re: Vec<Vec<f64>>, im: Vec<Vec<f64>>) -> PyResult<Self> {
        let op =
            prden::MeasurementOperator::from_blocks(matrix(re)?, matrix(im)?).map_err(to_py)?;
        Ok(Self {
            inner: Arc::new(op),
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m_complex()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_complex()
    }

    /// The `2M x 2N` real form `[[Re A, -Im A], [Im A, Re A]]`.
    fn real_form(&self) -> Vec<Vec<f64>> {
        rows(self.inner.a_real())
    }

    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let y = self
            .inner
            .apply(&RealEmbedding::from_slice(&x))
            .map_err(to_py)?;
        Ok(list(y.as_vector()))
    }
}

/// `min_h g(h) + 1/2 ||y - A h||^2` with `g = lam ||h||_1`.
#[pyclass(name = "ProblemInstance", module = "prden", frozen)]
struct PyInstance {
    inner: prden::ProblemInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (op, y, lam, sigma=1.0, noise_var=0.0))]
    fn new(op: &PyOperator, y: Vec<f64>, lam: f64, sigma: f64, noise_var: f64) -> PyResult<Self> {
        let inner = prden::ProblemInstance::new(
            op.inner.clone(),
            RealEmbedding::from_slice(&y),
            lam,
            sigma,
            noise_var,
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `||A^T y||_inf`.
    fn lambda_max(&self) -> f64 {
        self.inner.lambda_max()
    }

    fn objective(&self, h: Vec<f64>) -> PyResult<f64> {
        self.check(&h)?;
        Ok(baselines::lasso_objective(
            &self.inner,
            self.inner.lambda(),
            &DVector::from_vec(h),
        ))
    }
}

impl PyInstance {
    fn check(&self, v: &[f64]) -> PyResult<()> {
        if v.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "expected length {}, got {}",
                self.inner.dim(),
                v.len()
            )));
        }
        Ok(())
    }

    fn prox(&self) -> PyResult<Box<dyn ProxOperator>> {
        Ok(if self.inner.lambda() == 0.0 {
            Box::new(ZeroRegularizer)
        } else {
            Box::new(L1SoftThreshold::new(self.inner.lambda()).map_err(to_py)?)
        })
    }
}

/// Result of a solver run.
#[pyclass(name = "SolveResult", module = "prden", frozen, get_all)]
struct PySolveResult {
    estimate: Vec<f64>,
    dual_estimate: Vec<f64>,
    iterations: usize,
    converged: bool,
    eta_residual: Vec<f64>,
    primal_gap: Vec<f64>,
    objective: Vec<f64>,
}

fn solver_config(max_iter: usize, tol: f64, damping: f64, x_step: bool) -> SolverConfig {
    SolverConfig {
        max_iter,
        stop: if x_step {
            StopRule::XStep(tol)
        } else {
            StopRule::EtaRelative(tol)
        },
        damping_rho: damping,
        ..Default::default()
    }
}

fn solve_result(out: solver::SolveOutcome) -> PySolveResult {
    PySolveResult {
        estimate: list(out.estimate.as_vector()),
        dual_estimate: list(out.dual_estimate.as_vector()),
        iterations: out.iterations,
        converged: out.converged,
        eta_residual: out.trace.eta_residual,
        primal_gap: out.trace.primal_gap,
        objective: out.trace.objective,
    }
}

/// Peaceman-Rachford splitting on the dual; the estimate is the primal iterate `q`.
#[pyfunction]
#[pyo3(signature = (instance, max_iter=2000, tol=1e-8, damping=1.0, x_step=false))]
fn solve(
    instance: &PyInstance,
    max_iter: usize,
    tol: f64,
    damping: f64,
    x_step: bool,
) -> PyResult<PySolveResult> {
    let g = instance.prox()?;
    let out = solver::run(
        &instance.inner,
        g.as_ref(),
        &solver_config(max_iter, tol, damping, x_step),
    )
    .map_err(to_py)?;
    Ok(solve_result(out))
}

/// The `eta` sequence of the first `iters` iterations, as produced by the
/// explicit update (`raw=False`) or by composing the reflected resolvents.
#[pyfunction]
#[pyo3(signature = (instance, iters, raw=false))]
fn eta_sequence(instance: &PyInstance, iters: usize, raw: bool) -> PyResult<Vec<Vec<f64>>> {
    let g = instance.prox()?;
    let inst = &instance.inner;
    let mut state =
        solver::init_state(&DVector::zeros(inst.dim()), None, inst.sigma()).map_err(to_py)?;
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        if raw {
            state.eta = solver::iterate_raw(&state.eta, inst, g.as_ref()).map_err(to_py)?;
        } else {
            state = solver::iterate_once(&state, inst, g.as_ref(), 1.0).map_err(to_py)?;
        }
        out.push(list(&state.eta));
    }
    Ok(out)
}

#[pyfunction]
fn ls_estimate(instance: &PyInstance) -> Vec<f64> {
    list(baselines::ls_estimate(&instance.inner).as_vector())
}

#[pyfunction]
#[pyo3(signature = (instance, max_iter=2000, tol=1e-8, accelerated=true))]
fn fista(
    instance: &PyInstance,
    max_iter: usize,
    tol: f64,
    accelerated: bool,
) -> PyResult<(Vec<f64>, usize)> {
    let cfg = IterativeConfig { max_iter, tol };
    let inst = &instance.inner;
    let out = baselines::proximal_gradient(inst, inst.lambda(), &cfg, accelerated, |_, _| {})
        .map_err(to_py)?;
    Ok((list(out.estimate.as_vector()), out.iterations))
}

#[pyfunction]
fn soft_threshold(z: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let out = prox::soft_threshold(&RealEmbedding::from_slice(&z), t).map_err(to_py)?;
    Ok(list(out.as_vector()))
}

#[pyfunction]
#[pyo3(signature = (h, e, squared=true))]
fn nmse_db(h: Vec<f64>, e: Vec<f64>, squared: bool) -> PyResult<f64> {
    Ok(
        nmse_db_with(&DVector::from_vec(h), &DVector::from_vec(e), squared)
            .map_err(to_py)?
            .db(),
    )
}

/// A simulated dataset: channels `h`, measurements `y` and the shared operator.
#[pyclass(name = "Dataset", module = "prden", frozen)]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::Dataset::read(path).map_err(to_py)?,
        })
    }

    /// Desk-scale simulation; `snr_db=None` gives noiseless measurements.
    #[staticmethod]
    #[pyo3(signature = (n_samples, snr_db=Some(10.0), seed=0, n_antennas=64, p_slots=32, n_rf=4))]
    fn generate(
        n_samples: usize,
        snr_db: Option<f64>,
        seed: u64,
        n_antennas: usize,
        p_slots: usize,
        n_rf: usize,
    ) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        cfg.geometry.n_antennas = n_antennas;
        cfg.pilot.p_slots = p_slots;
        cfg.pilot.n_rf = n_rf;
        cfg.dataset.n_samples = n_samples;
        match snr_db {
            Some(s) => cfg.dataset.snr_db = s,
            None => cfg.dataset.noiseless = true,
        }
        cfg.validate().map_err(to_py)?;
        Ok(Self {
            inner: generate_dataset(&cfg.dataset_spec(), seed).map_err(to_py)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_antennas(&self) -> usize {
        self.inner.n_antennas()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m_complex()
    }

    fn operator(&self) -> PyOperator {
        PyOperator {
            inner: self.inner.op.clone(),
        }
    }

    /// `(h, y, snr_db, noise_var)` of sample `i`.
    fn sample(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64, f64)> {
        let s = self
            .inner
            .samples
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("sample {i} out of range")))?;
        Ok((list(&s.h), list(&s.y), s.snr_db, self.inner.noise_var(i)))
    }

    /// Per-sample NMSE (dB) of `algorithm` on the stored measurements.
    #[pyo3(signature = (algorithm, lam=None, weights=None, seed=0))]
    fn estimate(
        &self,
        algorithm: &str,
        lam: Option<f64>,
        weights: Option<&str>,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let alg: Algorithm = algorithm.parse().map_err(to_py)?;
        let mut cfg = RunConfig {
            seed,
            ..Default::default()
        };
        cfg.geometry.n_antennas = self.inner.n_antennas();
        cfg.solver.lambda = lam;
        let den = weights.map(CoreDenoiser::load).transpose().map_err(to_py)?;
        let set = EstimatorSet::new(&cfg, &self.inner, &[alg], den).map_err(to_py)?;
        let res = bench::estimate_dataset(&set, &self.inner, alg).map_err(to_py)?;
        Ok(res.into_iter().map(|r| r.nmse_db).collect())
    }
}

/// The residual CNN denoiser loaded from a weight file.
#[pyclass(name = "Denoiser", module = "prden", frozen)]
struct PyDenoiser {
    inner: CoreDenoiser,
}

#[pymethods]
impl PyDenoiser {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreDenoiser::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_antennas(&self) -> usize {
        self.inner.n_antennas()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    fn forward(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(
            &self.inner.forward(&DVector::from_vec(z)).map_err(to_py)?,
        ))
    }
}

/// Writes a randomly initialized weight file.
#[pyfunction]
#[pyo3(signature = (path, n_antennas, sigma=1.0, seed=0, gain=0.1))]
fn write_random_weights(
    path: &str,
    n_antennas: usize,
    sigma: f64,
    seed: u64,
    gain: f64,
) -> PyResult<()> {
    WeightFile::random(n_antennas, sigma, seed, gain)
        .write(path)
        .map_err(to_py)
}

/// Header values and tensors (`name -> (dims, flat data)`) of a weight file.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn read_weights(
    path: &str,
) -> PyResult<(
    usize,
    f64,
    [f32; 2],
    [f32; 2],
    BTreeMap<String, (Vec<usize>, Vec<f32>)>,
)> {
    let wf = WeightFile::read(path).map_err(to_py)?;
    let tensors = wf
        .tensors
        .into_iter()
        .map(|(k, t)| (k, (t.dims, t.data)))
        .collect();
    Ok((
        wf.n_antennas,
        wf.sigma,
        wf.norm_mean,
        wf.norm_scale,
        tensors,
    ))
}

/// Runs the numerical self-checks; returns `(name, defect, tolerance, passed)` per suite.
#[pyfunction]
#[pyo3(signature = (iters=50, seed=0))]
fn selftest(iters: usize, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let cfg = SelftestConfig {
        iters,
        seed,
        ..Default::default()
    };
    let report = run_selftest(&cfg).map_err(to_py)?;
    Ok(report
        .suites
        .iter()
        .map(|s| (s.name.to_string(), s.defect, s.tolerance, s.passed()))
        .collect())
}

#[pymodule]
#[pyo3(name = "prden")]
pub fn prden_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PySolveResult>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(eta_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(ls_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(fista, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(nmse_db, m)?)?;
    m.add_function(wrap_pyfunction!(write_random_weights, m)?)?;
    m.add_function(wrap_pyfunction!(read_weights, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
