//! Cached solver for the regularized normal equations `(A^T A + sigma I) x = b`.
//!
//! Two factorizations are available. `Direct` factors the `2N x 2N` matrix
//! itself. `Woodbury` factors the `2M x 2M` matrix `A A^T + sigma I` and uses
//!
//! ```text
//! (A^T A + sigma I)^-1 = (I - A^T (A A^T + sigma I)^-1 A) / sigma
//! ```
//!
//! which is cheaper when there are fewer measurements than unknowns.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::MeasurementOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolventStrategy {
    Direct,
    Woodbury,
}

impl ResolventStrategy {
    /// Woodbury when `2M < 2N`.
    pub fn auto(op: &MeasurementOperator) -> Self {
        if op.m_complex() < op.n_complex() {
            ResolventStrategy::Woodbury
        } else {
            ResolventStrategy::Direct
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticResolvent {
    op: Arc<MeasurementOperator>,
    sigma: f64,
    strategy: ResolventStrategy,
    factor: Cholesky<f64, Dyn>,
}

impl QuadraticResolvent {
    pub fn new(op: Arc<MeasurementOperator>, sigma: f64) -> Result<Self> {
        let strategy = ResolventStrategy::auto(&op);
        Self::with_strategy(op, sigma, strategy)
    }

    pub fn with_strategy(
        op: Arc<MeasurementOperator>,
        sigma: f64,
        strategy: ResolventStrategy,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Numeric(format!(
                "splitting parameter sigma must be finite and > 0, got {sigma}"
            )));
        }
        if !op.is_finite() {
            return Err(Error::Numeric(
                "measurement operator has non-finite entries".into(),
            ));
        }
        let a = op.a_real();
        let mut gram = match strategy {
            ResolventStrategy::Direct => a.tr_mul(a),
            ResolventStrategy::Woodbury => a * a.transpose(),
        };
        for i in 0..gram.nrows() {
            gram[(i, i)] += sigma;
        }
        let factor = Cholesky::new(gram).ok_or_else(|| {
            Error::Numeric(format!(
                "Cholesky factorization failed ({strategy:?}, sigma={sigma})"
            ))
        })?;
        Ok(Self {
            op,
            sigma,
            strategy,
            factor,
        })
    }

    pub fn operator(&self) -> &MeasurementOperator {
        &self.op
    }

    pub fn shared_operator(&self) -> &Arc<MeasurementOperator> {
        &self.op
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn strategy(&self) -> ResolventStrategy {
        self.strategy
    }

    /// Solves `(A^T A + sigma I) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self.strategy {
            ResolventStrategy::Direct => self.factor.solve(b),
            ResolventStrategy::Woodbury => {
                let a = self.op.a_real();
                let inner = self.factor.solve(&(a * b));
                (b - a.tr_mul(&inner)) / self.sigma
            }
        }
    }

    /// `(A^T A + sigma I) x`, used for residual checks.
    pub fn apply_system(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = self.op.a_real();
        a.tr_mul(&(a * x)) + x * self.sigma
    }

    /// Dense explicit inverse; only for diagnostics on small systems.
    pub fn dense_inverse(&self) -> DMatrix<f64> {
        let n = 2 * self.op.n_complex();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Arc<MeasurementOperator> {
        let re = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let im = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        Arc::new(MeasurementOperator::from_blocks(re, im).unwrap())
    }

    #[test]
    fn auto_strategy_follows_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            ResolventStrategy::auto(&random_op(&mut rng, 4, 8)),
            ResolventStrategy::Woodbury
        );
        assert_eq!(
            ResolventStrategy::auto(&random_op(&mut rng, 8, 4)),
            ResolventStrategy::Direct
        );
        assert_eq!(
            ResolventStrategy::auto(&random_op(&mut rng, 4, 4)),
            ResolventStrategy::Direct
        );
    }

    #[test]
    fn rejects_bad_sigma_and_nonfinite_operator() {
        let op = Arc::new(MeasurementOperator::identity(2));
        assert!(matches!(
            QuadraticResolvent::new(op.clone(), 0.0),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            QuadraticResolvent::new(op, -1.0),
            Err(Error::Numeric(_))
        ));
        let bad = MeasurementOperator::from_blocks(
            DMatrix::from_element(1, 1, f64::NAN),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(
            QuadraticResolvent::new(Arc::new(bad), 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn zero_operator_is_still_invertible() {
        let op = Arc::new(
            MeasurementOperator::from_blocks(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3)).unwrap(),
        );
        for strategy in [ResolventStrategy::Direct, ResolventStrategy::Woodbury] {
            let res = QuadraticResolvent::with_strategy(op.clone(), 2.0, strategy).unwrap();
            let b = DVector::from_fn(6, |i, _| i as f64);
            assert!((res.solve(&b) - &b / 2.0).norm() < 1e-15);
        }
    }

    #[test]
    fn residual_and_strategy_agreement_against_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let (m, n) = if trial % 2 == 0 { (4, 8) } else { (8, 5) };
            let sigma = [0.1, 1.0, 10.0][trial % 3];
            let op = random_op(&mut rng, m, n);
            let b = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
            let direct =
                QuadraticResolvent::with_strategy(op.clone(), sigma, ResolventStrategy::Direct)
                    .unwrap();
            let wood =
                QuadraticResolvent::with_strategy(op.clone(), sigma, ResolventStrategy::Woodbury)
                    .unwrap();
            let xd = direct.solve(&b);
            let xw = wood.solve(&b);

            let a = op.a_real();
            let sys = a.tr_mul(a) + DMatrix::identity(2 * n, 2 * n) * sigma;
            let oracle = sys.clone().lu().solve(&b).unwrap();

            assert!((&sys * &xd - &b).norm() <= 1e-9 * b.norm());
            assert!((&sys * &xw - &b).norm() <= 1e-9 * b.norm());
            assert!((&xd - &xw).norm() <= 1e-9 * xd.norm());
            assert!((&xd - &oracle).norm() <= 1e-9 * oracle.norm());
        }
    }
}
