//! Complex signals, their stacked real form, and measurement-problem assembly.
//!
//! The real form of a complex vector `v` of length `N` is the length-`2N`
//! vector `[Re(v); Im(v)]`, and the real form of a complex `M x N` matrix is
//!
//! ```text
//! [ Re(A)  -Im(A) ]
//! [ Im(A)   Re(A) ]
//! ```
//!
//! so that `realform(A) * embed(h) == embed(A * h)`. Every module uses this
//! ordering.

use std::ops::Deref;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::resolvent::QuadraticResolvent;

/// A complex vector stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::dim(
                "ComplexVector imaginary part",
                re.len(),
                im.len(),
            ));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_complex(values: &[Complex64]) -> Self {
        Self {
            re: values.iter().map(|c| c.re).collect(),
            im: values.iter().map(|c| c.im).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }

    pub fn to_dvector(&self) -> DVector<Complex64> {
        DVector::from_vec(self.to_complex())
    }
}

/// Stacked `[Re; Im]` real form of a complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RealEmbedding(DVector<f64>);

impl RealEmbedding {
    pub fn new(data: DVector<f64>) -> Self {
        Self(data)
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self(DVector::from_column_slice(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    /// Number of complex entries represented (half the real length).
    pub fn complex_len(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn extract(&self) -> Result<ComplexVector> {
        extract_complex(self)
    }
}

impl Deref for RealEmbedding {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for RealEmbedding {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

pub fn embed_complex(v: &ComplexVector) -> RealEmbedding {
    let n = v.len();
    let mut data = DVector::zeros(2 * n);
    data.rows_mut(0, n).copy_from_slice(v.re());
    data.rows_mut(n, n).copy_from_slice(v.im());
    RealEmbedding(data)
}

pub fn extract_complex(e: &RealEmbedding) -> Result<ComplexVector> {
    if !e.len().is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "real embedding has odd length {}",
            e.len()
        )));
    }
    let n = e.len() / 2;
    Ok(ComplexVector {
        re: e.as_slice()[..n].to_vec(),
        im: e.as_slice()[n..].to_vec(),
    })
}

/// The overall combining matrix `A` in real form, with its complex blocks.
///
/// Derived matrices (`A^T A`, the pseudo-inverse, the largest eigenvalue of
/// `A^T A`) are computed on first use and cached.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    a_real: DMatrix<f64>,
    re: DMatrix<f64>,
    im: DMatrix<f64>,
    gram: OnceLock<DMatrix<f64>>,
    pinv: OnceLock<DMatrix<f64>>,
    lipschitz: OnceLock<f64>,
}

impl PartialEq for MeasurementOperator {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re && self.im == other.im
    }
}

pub fn build_real_operator(a_re: DMatrix<f64>, a_im: DMatrix<f64>) -> Result<MeasurementOperator> {
    MeasurementOperator::from_blocks(a_re, a_im)
}

impl MeasurementOperator {
    pub fn from_blocks(a_re: DMatrix<f64>, a_im: DMatrix<f64>) -> Result<Self> {
        if a_re.nrows() != a_im.nrows() {
            return Err(Error::dim(
                "operator rows (Im block)",
                a_re.nrows(),
                a_im.nrows(),
            ));
        }
        if a_re.ncols() != a_im.ncols() {
            return Err(Error::dim(
                "operator columns (Im block)",
                a_re.ncols(),
                a_im.ncols(),
            ));
        }
        let (m, n) = a_re.shape();
        let mut a_real = DMatrix::zeros(2 * m, 2 * n);
        a_real.view_mut((0, 0), (m, n)).copy_from(&a_re);
        a_real.view_mut((0, n), (m, n)).copy_from(&(-&a_im));
        a_real.view_mut((m, 0), (m, n)).copy_from(&a_im);
        a_real.view_mut((m, n), (m, n)).copy_from(&a_re);
        Ok(Self {
            a_real,
            re: a_re,
            im: a_im,
            gram: OnceLock::new(),
            pinv: OnceLock::new(),
            lipschitz: OnceLock::new(),
        })
    }

    pub fn from_complex(a: &DMatrix<Complex64>) -> Self {
        let re = a.map(|c| c.re);
        let im = a.map(|c| c.im);
        Self::from_blocks(re, im).expect("blocks of one complex matrix share a shape")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_blocks(DMatrix::identity(n, n), DMatrix::zeros(n, n)).expect("square blocks")
    }

    /// Number of complex measurements `M`.
    pub fn m_complex(&self) -> usize {
        self.re.nrows()
    }

    /// Number of complex unknowns `N`.
    pub fn n_complex(&self) -> usize {
        self.re.ncols()
    }

    pub fn a_real(&self) -> &DMatrix<f64> {
        &self.a_real
    }

    pub fn re_block(&self) -> &DMatrix<f64> {
        &self.re
    }

    pub fn im_block(&self) -> &DMatrix<f64> {
        &self.im
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        self.re.zip_map(&self.im, Complex64::new)
    }

    pub fn is_finite(&self) -> bool {
        self.a_real.iter().all(|v| v.is_finite())
    }

    /// `A^T A` in real form.
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| self.a_real.tr_mul(&self.a_real))
    }

    /// Moore-Penrose pseudo-inverse of the real form, via SVD.
    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        self.pinv.get_or_init(|| {
            let (rows, cols) = self.a_real.shape();
            let svd = self.a_real.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let eps = smax * rows.max(cols) as f64 * f64::EPSILON;
            svd.pseudo_inverse(eps)
                .expect("both singular-vector sets were computed")
        })
    }

    /// Largest eigenvalue of `A^T A` by power iteration (at most 100 steps,
    /// stopping at 1e-6 relative change).
    pub fn lipschitz_constant(&self) -> f64 {
        *self
            .lipschitz
            .get_or_init(|| power_iteration(self.gram(), 100, 1e-6))
    }

    pub fn apply(&self, x: &RealEmbedding) -> Result<RealEmbedding> {
        if x.len() != 2 * self.n_complex() {
            return Err(Error::dim(
                "apply_operator input",
                2 * self.n_complex(),
                x.len(),
            ));
        }
        Ok(RealEmbedding(&self.a_real * x.as_vector()))
    }

    pub fn apply_transpose(&self, y: &RealEmbedding) -> Result<RealEmbedding> {
        if y.len() != 2 * self.m_complex() {
            return Err(Error::dim("transpose input", 2 * self.m_complex(), y.len()));
        }
        Ok(RealEmbedding(self.a_real.tr_mul(y.as_vector())))
    }
}

fn power_iteration(gram: &DMatrix<f64>, max_steps: usize, rel_tol: f64) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    // Fixed, non-symmetric start vector so no eigenvector is systematically missed.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_steps {
        let gv = gram * &v;
        let next = v.dot(&gv);
        let norm = gv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = gv / norm;
        let done = (next - estimate).abs() <= rel_tol * next.abs();
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

pub fn apply_operator(op: &MeasurementOperator, x: &RealEmbedding) -> Result<RealEmbedding> {
    op.apply(x)
}

/// One regularized estimation problem `min_h g(h) + 1/2 ||y - A h||^2`.
///
/// The operator and the cached factorization of `A^T A + sigma I` live in a
/// shared [`QuadraticResolvent`], so many instances with the same `A` and
/// `sigma` reuse one factorization.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    resolvent: Arc<QuadraticResolvent>,
    y: RealEmbedding,
    aty: DVector<f64>,
    lambda: f64,
    noise_var: f64,
}

impl ProblemInstance {
    /// `noise_var` is the variance of each real coordinate of the noise.
    pub fn new(
        op: Arc<MeasurementOperator>,
        y: RealEmbedding,
        lambda: f64,
        sigma: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let resolvent = Arc::new(QuadraticResolvent::new(op, sigma)?);
        Self::with_resolvent(resolvent, y, lambda, noise_var)
    }

    pub fn with_resolvent(
        resolvent: Arc<QuadraticResolvent>,
        y: RealEmbedding,
        lambda: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let op = resolvent.operator();
        if y.len() != 2 * op.m_complex() {
            return Err(Error::dim(
                "measurement vector",
                2 * op.m_complex(),
                y.len(),
            ));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::Domain(format!(
                "noise variance must be >= 0, got {noise_var}"
            )));
        }
        let aty = op.a_real().tr_mul(y.as_vector());
        Ok(Self {
            resolvent,
            y,
            aty,
            lambda,
            noise_var,
        })
    }

    /// Same problem with a different L1 weight, reusing the cached `A^T y`.
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn op(&self) -> &MeasurementOperator {
        self.resolvent.operator()
    }

    pub fn shared_op(&self) -> &Arc<MeasurementOperator> {
        self.resolvent.shared_operator()
    }

    pub fn resolvent(&self) -> &Arc<QuadraticResolvent> {
        &self.resolvent
    }

    pub fn y(&self) -> &RealEmbedding {
        &self.y
    }

    /// Cached `A^T y`.
    pub fn aty(&self) -> &DVector<f64> {
        &self.aty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.resolvent.sigma()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Real length `2N` of the unknown.
    pub fn dim(&self) -> usize {
        2 * self.op().n_complex()
    }

    /// `1/2 ||y - A h||^2`.
    pub fn data_fidelity(&self, h: &DVector<f64>) -> f64 {
        let r = self.op().a_real() * h - self.y.as_vector();
        0.5 * r.norm_squared()
    }

    /// `||A^T y||_inf`, the smallest L1 weight for which the lasso solution is zero.
    pub fn lambda_max(&self) -> f64 {
        self.aty.amax()
    }
}
