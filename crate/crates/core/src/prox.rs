//! Proximal operators and the two reflected resolvents of the dual splitting.
//!
//! The dual problem involves the conjugates `f*` and `g*`, which are never
//! formed. Their resolvents are evaluated through the Moreau decomposition
//!
//! ```text
//! prox_{s h}(x) + s * prox_{h*/s}(x / s) = x
//! ```
//!
//! Scale convention: `ProxOperator::evaluate(z, s)` returns `prox_{s g}(z)`.
//! The splitting calls it with `s = 1/sigma`, so for `g = lambda ||.||_1` the
//! soft threshold applied inside the solver is `lambda / sigma`.

use std::fmt::Debug;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ProblemInstance, RealEmbedding};

/// `prox_{scale * g}` for a fixed regularizer `g`.
pub trait ProxOperator: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn evaluate(&self, z: &DVector<f64>, scale: f64) -> DVector<f64>;

    /// `g(z)`, when the regularizer has a closed-form value.
    fn value(&self, _z: &DVector<f64>) -> Option<f64> {
        None
    }

    fn is_convex(&self) -> bool;

    /// `prox_{scale * g*}(z)` when the conjugate has a known closed form.
    fn conjugate_prox(&self, _z: &DVector<f64>, _scale: f64) -> Option<DVector<f64>> {
        None
    }
}

/// `g = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRegularizer;

impl ProxOperator for ZeroRegularizer {
    fn name(&self) -> &str {
        "zero"
    }

    fn evaluate(&self, z: &DVector<f64>, _scale: f64) -> DVector<f64> {
        z.clone()
    }

    fn value(&self, _z: &DVector<f64>) -> Option<f64> {
        Some(0.0)
    }

    fn is_convex(&self) -> bool {
        true
    }

    // g* is the indicator of {0}.
    fn conjugate_prox(&self, z: &DVector<f64>, _scale: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(z.len()))
    }
}

/// `g = lambda ||.||_1`.
#[derive(Debug, Clone, Copy)]
pub struct L1SoftThreshold {
    lambda: f64,
}

impl L1SoftThreshold {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "L1 weight must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The threshold used for `prox_{scale * g}`.
    pub fn threshold(&self, scale: f64) -> f64 {
        scale * self.lambda
    }
}

impl ProxOperator for L1SoftThreshold {
    fn name(&self) -> &str {
        "l1"
    }

    fn evaluate(&self, z: &DVector<f64>, scale: f64) -> DVector<f64> {
        soft_threshold_vec(z, self.threshold(scale))
    }

    fn value(&self, z: &DVector<f64>) -> Option<f64> {
        Some(self.lambda * z.lp_norm(1))
    }

    fn is_convex(&self) -> bool {
        true
    }

    // g* is the indicator of the l_inf ball of radius lambda; its prox is the
    // projection onto that ball for every scale.
    fn conjugate_prox(&self, z: &DVector<f64>, _scale: f64) -> Option<DVector<f64>> {
        Some(z.map(|v| v.clamp(-self.lambda, self.lambda)))
    }
}

pub(crate) fn soft_threshold_vec(z: &DVector<f64>, t: f64) -> DVector<f64> {
    z.map(|v| {
        let mag = v.abs() - t;
        if mag > 0.0 {
            mag.copysign(v)
        } else {
            0.0
        }
    })
}

/// Elementwise `sign(z_i) * max(|z_i| - t, 0)`.
pub fn soft_threshold(z: &RealEmbedding, t: f64) -> Result<RealEmbedding> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("threshold must be >= 0, got {t}")));
    }
    Ok(soft_threshold_vec(z.as_vector(), t).into())
}

/// `q = (A^T A + sigma I)^-1 (A^T y + eta)`, i.e. `prox_{f/sigma}(eta/sigma)`.
pub fn resolvent_f(instance: &ProblemInstance, eta: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(instance, eta)?;
    Ok(instance.resolvent().solve(&(instance.aty() + eta)))
}

/// `R_{sigma M2}(eta) = eta - 2 sigma q` with `M2 = d f*`.
///
/// Uses `J_{sigma d f*}(eta) = eta - sigma * prox_{f/sigma}(eta/sigma) = eta - sigma q`.
pub fn reflected_resolvent_m2(
    instance: &ProblemInstance,
    eta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let q = resolvent_f(instance, eta)?;
    Ok(eta - q * (2.0 * instance.sigma()))
}

/// `R_{sigma M1}(v) = v + 2 sigma prox_{g/sigma}(-v/sigma)` with `M1 = d(g* o -I)`.
///
/// Uses `J_{sigma M1}(v) = v + sigma * prox_{g/sigma}(-v/sigma)`.
pub fn reflected_resolvent_m1(
    prox_g: &dyn ProxOperator,
    sigma: f64,
    v: &DVector<f64>,
) -> DVector<f64> {
    let inner = prox_g.evaluate(&(v / -sigma), 1.0 / sigma);
    v + inner * (2.0 * sigma)
}

/// `J_{sigma M1}(v)`.
pub fn resolvent_m1(prox_g: &dyn ProxOperator, sigma: f64, v: &DVector<f64>) -> DVector<f64> {
    let inner = prox_g.evaluate(&(v / -sigma), 1.0 / sigma);
    v + inner * sigma
}

/// Defect `||prox_{sigma g}(z) + sigma prox_{g*/sigma}(z/sigma) - z||` of the
/// Moreau decomposition, with the conjugate prox taken from its closed form.
///
/// Returns `None` when `prox_g` has no closed-form conjugate.
pub fn moreau_check(prox_g: &dyn ProxOperator, z: &DVector<f64>, sigma: f64) -> Option<f64> {
    let primal = prox_g.evaluate(z, sigma);
    let dual = prox_g.conjugate_prox(&(z / sigma), 1.0 / sigma)?;
    Some((primal + dual * sigma - z).norm())
}

fn check_len(instance: &ProblemInstance, v: &DVector<f64>) -> Result<()> {
    if v.len() != instance.dim() {
        return Err(Error::dim("dual iterate", instance.dim(), v.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::MeasurementOperator;

    fn scalar_instance(a: f64, y: f64, sigma: f64) -> ProblemInstance {
        // Real 1x1 operator embedded as a 1x1 complex matrix with zero
        // imaginary part: the real form is a*I_2.
        let op =
            MeasurementOperator::from_blocks(DMatrix::from_element(1, 1, a), DMatrix::zeros(1, 1))
                .unwrap();
        ProblemInstance::new(
            Arc::new(op),
            RealEmbedding::from_slice(&[y, 0.0]),
            0.0,
            sigma,
            0.0,
        )
        .unwrap()
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
        lambda: f64,
        sigma: f64,
    ) -> ProblemInstance {
        let re = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let im = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let op = Arc::new(MeasurementOperator::from_blocks(re, im).unwrap());
        let y = RealEmbedding::new(DVector::from_fn(2 * m, |_, _| rng.random_range(-1.0..1.0)));
        ProblemInstance::new(op, y, lambda, sigma, 0.0).unwrap()
    }

    /// Minimizes `t|u| + (u - z)^2 / 2` over a fine grid around `z`.
    fn grid_prox(z: f64, t: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let steps = 200_000;
        for k in 0..=steps {
            let u = -5.0 + 10.0 * k as f64 / steps as f64;
            let obj = t * u.abs() + 0.5 * (u - z).powi(2);
            if obj < best.0 {
                best = (obj, u);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_examples() {
        let z = RealEmbedding::from_slice(&[0.0, 0.0]);
        assert_eq!(soft_threshold(&z, 1.0).unwrap(), z);

        let z = RealEmbedding::from_slice(&[3.0, -1.0, 0.5]);
        let out = soft_threshold(&z, 1.0).unwrap();
        for (i, &zi) in z.iter().enumerate() {
            assert!((out[i] - grid_prox(zi, 1.0)).abs() < 1e-4);
        }
        assert_eq!(out.as_slice(), &[2.0, 0.0, 0.0]);

        assert_eq!(soft_threshold(&z, 0.0).unwrap(), z);
        assert!(soft_threshold(&z, -0.1).is_err());
    }

    #[test]
    fn zero_regularizer_is_identity() {
        let z = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        assert_eq!(ZeroRegularizer.evaluate(&z, 3.0), z);
    }

    #[test]
    fn l1_threshold_scales_with_prox_weight() {
        let g = L1SoftThreshold::new(0.5).unwrap();
        // prox_{g/sigma} with sigma = 2 thresholds at lambda/sigma = 0.25.
        let out = g.evaluate(&DVector::from_vec(vec![1.0, -0.2]), 1.0 / 2.0);
        assert_eq!(out.as_slice(), &[0.75, 0.0]);
    }

    #[test]
    fn resolvent_f_examples() {
        // A = I (one complex dim), y = 0, sigma = 1, eta = [2, 2] -> [1, 1]
        let inst = scalar_instance(1.0, 0.0, 1.0);
        let q = resolvent_f(&inst, &DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert!((q - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-15);

        // A = [1], y = [1], sigma = 1, eta = 0 -> q = 0.5
        let inst = scalar_instance(1.0, 1.0, 1.0);
        let q = resolvent_f(&inst, &DVector::zeros(2)).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-15);

        assert!(resolvent_f(&inst, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn reflected_m2_examples() {
        let inst = scalar_instance(1.0, 1.0, 1.0);
        let r = reflected_resolvent_m2(&inst, &DVector::zeros(2)).unwrap();
        assert!((r[0] + 1.0).abs() < 1e-15);

        // A = 0: q = eta / sigma, R = -eta.
        let inst = scalar_instance(0.0, 1.0, 2.0);
        let eta = DVector::from_vec(vec![0.7, -1.3]);
        let r = reflected_resolvent_m2(&inst, &eta).unwrap();
        assert!((r + &eta).norm() < 1e-15);
    }

    #[test]
    fn reflected_m1_examples() {
        let v = DVector::from_vec(vec![0.3, -2.0, 5.0]);
        let r = reflected_resolvent_m1(&ZeroRegularizer, 1.5, &v);
        assert!((r + &v).norm() < 1e-14);

        // |v_i / sigma| below lambda / sigma: prox is zero, R(v) = v.
        let g = L1SoftThreshold::new(1.0).unwrap();
        let v = DVector::from_vec(vec![0.5, -0.9, 0.0]);
        assert_eq!(reflected_resolvent_m1(&g, 2.0, &v), v);
    }

    #[test]
    fn reflected_resolvents_are_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 4, 8, 0.1, 1.0);
        let g = L1SoftThreshold::new(0.1).unwrap();
        for _ in 0..1000 {
            let a = DVector::from_fn(16, |_, _| rng.random_range(-3.0..3.0));
            let b = DVector::from_fn(16, |_, _| rng.random_range(-3.0..3.0));
            let d = (&a - &b).norm();
            let r2 = (reflected_resolvent_m2(&inst, &a).unwrap()
                - reflected_resolvent_m2(&inst, &b).unwrap())
            .norm();
            assert!(r2 <= (1.0 + 1e-9) * d);
            let r1 =
                (reflected_resolvent_m1(&g, 1.0, &a) - reflected_resolvent_m1(&g, 1.0, &b)).norm();
            assert!(r1 <= (1.0 + 1e-9) * d);
            let p = (g.evaluate(&a, 0.7) - g.evaluate(&b, 0.7)).norm();
            assert!(p <= d * (1.0 + 1e-12));
        }
    }

    #[test]
    fn moreau_defects() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = L1SoftThreshold::new(0.3).unwrap();
        for sigma in [0.1, 1.0, 2.0, 10.0] {
            for _ in 0..50 {
                let z = DVector::from_fn(20, |_, _| rng.random_range(-4.0..4.0));
                assert!(moreau_check(&g, &z, sigma).unwrap() <= 1e-10);
                assert_eq!(moreau_check(&ZeroRegularizer, &z, sigma).unwrap(), 0.0);
            }
        }
    }
}
