//! Analog combiners, the overall measurement operator and measurement noise.
//!
//! Slot `p` observes `A_p (F h + n_p)` where `h` is the angular-domain channel,
//! `F` the unitary DFT, `A_p` an `N_RF x N` constant-modulus combiner and
//! `n_p ~ CN(0, s^2 I)`. The digital combiner is the identity. Stacking the
//! slots gives `y = A h + C n` with `A = [A_1 F; ...; A_P F]` and
//! `C = blockdiag(A_p)`. With `angular = false` the unknown is the spatial
//! channel itself and `A = [A_1; ...; A_P]`; the measurements are the same.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComplexVector, MeasurementOperator, RealEmbedding};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    pub p_slots: usize,
    pub n_rf: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            p_slots: 32,
            n_rf: 4,
        }
    }
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_slots == 0 {
            return Err(Error::config(
                "pilot.p_slots",
                "need at least one pilot slot",
            ));
        }
        if self.n_rf == 0 {
            return Err(Error::config("pilot.n_rf", "need at least one RF chain"));
        }
        Ok(())
    }

    /// Complex measurement count `N_RF * P`.
    pub fn m_complex(&self) -> usize {
        self.p_slots * self.n_rf
    }
}

/// Unitary DFT matrix, `F[j, k] = exp(-j 2 pi j k / N) / sqrt(N)`.
pub fn dft_matrix(n: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |j, k| {
        // reduce j*k mod n first so the angle stays small and exact
        let e = (j * k) % n;
        Complex64::from_polar(scale, -2.0 * PI * e as f64 / n as f64)
    })
}

/// Combiners and the operator they induce.
#[derive(Debug, Clone)]
pub struct PilotSystem {
    combiners: Vec<DMatrix<Complex64>>,
    dft: DMatrix<Complex64>,
    op: Arc<MeasurementOperator>,
    /// `||C||_F^2`: expected combined noise energy per unit noise variance.
    noise_gain: f64,
    angular: bool,
}

impl PilotSystem {
    /// Draws `P` combiners with entries `exp(j psi) / sqrt(N)`, `psi ~ U[0, 2 pi)`.
    pub fn generate(
        n_antennas: usize,
        cfg: &PilotConfig,
        seed: u64,
        angular: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        if n_antennas == 0 {
            return Err(Error::config("geometry.n_antennas", "must be > 0"));
        }
        let mut rng = stream_rng(seed, Stream::Pilot, 0);
        let amp = 1.0 / (n_antennas as f64).sqrt();
        let combiners: Vec<DMatrix<Complex64>> = (0..cfg.p_slots)
            .map(|_| {
                DMatrix::from_fn(cfg.n_rf, n_antennas, |_, _| {
                    Complex64::from_polar(amp, rng.random_range(0.0..2.0 * PI))
                })
            })
            .collect();
        Ok(Self::from_combiners(combiners, angular))
    }

    pub fn from_combiners(combiners: Vec<DMatrix<Complex64>>, angular: bool) -> Self {
        let n = combiners[0].ncols();
        let dft = dft_matrix(n);
        let m: usize = combiners.iter().map(|a| a.nrows()).sum();
        let mut a = DMatrix::zeros(m, n);
        let mut row = 0;
        for ap in &combiners {
            let block = if angular { ap * &dft } else { ap.clone() };
            a.view_mut((row, 0), (ap.nrows(), n)).copy_from(&block);
            row += ap.nrows();
        }
        Self::assemble(
            combiners,
            dft,
            Arc::new(MeasurementOperator::from_complex(&a)),
            angular,
        )
    }

    /// Recovers the combiners from a stored operator, `A_p = (A_p F) F^H`
    /// for the angular form, keeping the stored operator bit-for-bit.
    pub fn from_operator(op: Arc<MeasurementOperator>, n_rf: usize, angular: bool) -> Result<Self> {
        let (m, n) = (op.m_complex(), op.n_complex());
        if n_rf == 0 || m % n_rf != 0 || n == 0 {
            return Err(Error::config(
                "pilot.n_rf",
                format!("{m} measurements cannot be split into slots of {n_rf} RF chains"),
            ));
        }
        let dft = dft_matrix(n);
        let a = op.to_complex();
        let combiners = (0..m / n_rf)
            .map(|p| {
                let rows = a.rows(p * n_rf, n_rf).into_owned();
                if angular {
                    rows * dft.adjoint()
                } else {
                    rows
                }
            })
            .collect();
        Ok(Self::assemble(combiners, dft, op, angular))
    }

    fn assemble(
        combiners: Vec<DMatrix<Complex64>>,
        dft: DMatrix<Complex64>,
        op: Arc<MeasurementOperator>,
        angular: bool,
    ) -> Self {
        let noise_gain = combiners.iter().map(|c| c.norm_squared()).sum();
        Self {
            combiners,
            dft,
            op,
            noise_gain,
            angular,
        }
    }

    pub fn is_angular(&self) -> bool {
        self.angular
    }

    pub fn combiners(&self) -> &[DMatrix<Complex64>] {
        &self.combiners
    }

    pub fn dft(&self) -> &DMatrix<Complex64> {
        &self.dft
    }

    pub fn operator(&self) -> &Arc<MeasurementOperator> {
        &self.op
    }

    pub fn n_antennas(&self) -> usize {
        self.dft.nrows()
    }

    /// The unknown this operator acts on: `F^H h` for the angular form,
    /// `h` itself otherwise.
    pub fn target(&self, h: &ComplexVector) -> ComplexVector {
        if !self.angular {
            return h.clone();
        }
        let v = self.dft.ad_mul(&h.to_dvector());
        ComplexVector::from_complex(v.as_slice())
    }

    pub fn noise_gain(&self) -> f64 {
        self.noise_gain
    }
}

/// Per-antenna noise variance `s^2` giving `||A h||^2 / E||C n||^2 = 10^(snr/10)`.
/// `E||C n||^2 = s^2 ||C||_F^2`.
pub fn noise_variance_for(clean_energy: f64, noise_gain: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY || noise_gain == 0.0 {
        return 0.0;
    }
    clean_energy / (10f64.powf(snr_db / 10.0) * noise_gain)
}

#[derive(Debug, Clone)]
pub struct NoisyMeasurement {
    pub y: RealEmbedding,
    /// Complex noise variance `s^2` per antenna and slot.
    pub sigma2: f64,
    /// Variance of one real coordinate of the combined noise, `s^2 / 2`
    /// (the combiner rows have unit norm).
    pub noise_var: f64,
}

/// `y = A h + C n`. `snr_db = +inf` is the noiseless case and returns `A h`
/// exactly; `h` is the real form of the angular-domain channel.
pub fn add_noise(
    system: &PilotSystem,
    h: &RealEmbedding,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<NoisyMeasurement> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Domain(format!(
            "SNR must be finite or +inf, got {snr_db}"
        )));
    }
    let clean = system.op.apply(h)?;
    let sigma2 = noise_variance_for(clean.norm_squared(), system.noise_gain, snr_db);
    if sigma2 == 0.0 {
        return Ok(NoisyMeasurement {
            y: clean,
            sigma2: 0.0,
            noise_var: 0.0,
        });
    }
    let std = (sigma2 / 2.0).sqrt();
    let n = system.n_antennas();
    let m = system.op.m_complex();
    let mut y = clean.into_inner();
    let mut row = 0;
    for ap in &system.combiners {
        let np = DVector::from_fn(n, |_, _| {
            Complex64::new(
                std * rng.sample::<f64, _>(StandardNormal),
                std * rng.sample::<f64, _>(StandardNormal),
            )
        });
        let cn = ap * np;
        for (i, v) in cn.iter().enumerate() {
            y[row + i] += v.re;
            y[m + row + i] += v.im;
        }
        row += ap.nrows();
    }
    Ok(NoisyMeasurement {
        y: y.into(),
        sigma2,
        noise_var: sigma2 / 2.0,
    })
}

/// [`add_noise`] drawing from the noise stream of sample `index`.
pub fn add_noise_seeded(
    system: &PilotSystem,
    h: &RealEmbedding,
    snr_db: f64,
    seed: u64,
    index: u64,
) -> Result<NoisyMeasurement> {
    add_noise(
        system,
        h,
        snr_db,
        &mut stream_rng(seed, Stream::Noise, index),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::embed_complex;

    #[test]
    fn combiner_modulus_and_shape() {
        let cfg = PilotConfig {
            p_slots: 5,
            n_rf: 3,
        };
        let sys = PilotSystem::generate(16, &cfg, 1, true).unwrap();
        assert_eq!(sys.combiners().len(), 5);
        for ap in sys.combiners() {
            assert_eq!(ap.shape(), (3, 16));
            for v in ap.iter() {
                assert!((v.norm() - 0.25).abs() <= 1e-12);
            }
        }
        assert_eq!(sys.operator().m_complex(), 15);
        assert_eq!(sys.operator().n_complex(), 16);
        assert!((sys.noise_gain() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn dft_is_unitary() {
        for n in [1, 4, 16, 64] {
            let f = dft_matrix(n);
            let g = f.ad_mul(&f);
            let err = (g - DMatrix::<Complex64>::identity(n, n))
                .map(|v| v.norm())
                .max();
            assert!(err <= 1e-10, "N={n}: {err}");
        }
    }

    #[test]
    fn operator_is_stacked_combiner_times_dft() {
        let cfg = PilotConfig {
            p_slots: 2,
            n_rf: 2,
        };
        let sys = PilotSystem::generate(4, &cfg, 3, true).unwrap();
        let a = sys.operator().to_complex();
        let f = dft_matrix(4);
        for (p, ap) in sys.combiners().iter().enumerate() {
            let block = ap * &f;
            for i in 0..2 {
                for j in 0..4 {
                    assert!((a[(2 * p + i, j)] - block[(i, j)]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn combiners_recovered_from_operator() {
        let cfg = PilotConfig {
            p_slots: 3,
            n_rf: 2,
        };
        for angular in [true, false] {
            let sys = PilotSystem::generate(16, &cfg, 5, angular).unwrap();
            let back = PilotSystem::from_operator(sys.operator().clone(), 2, angular).unwrap();
            for (a, b) in sys.combiners().iter().zip(back.combiners()) {
                assert!((a - b).map(|v| v.norm()).max() <= 1e-12);
            }
            assert!((sys.noise_gain() - back.noise_gain()).abs() <= 1e-12);
        }
        let sys = PilotSystem::generate(16, &cfg, 5, true).unwrap();
        assert!(PilotSystem::from_operator(sys.operator().clone(), 4, true).is_err());
    }

    #[test]
    fn spatial_and_angular_forms_measure_the_same() {
        let cfg = PilotConfig {
            p_slots: 4,
            n_rf: 2,
        };
        let ang = PilotSystem::generate(16, &cfg, 6, true).unwrap();
        let spa = PilotSystem::generate(16, &cfg, 6, false).unwrap();
        let h: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new(1.0 / (1.0 + i as f64), (i as f64).sin()))
            .collect();
        let h = ComplexVector::from_complex(&h);
        let ya = ang
            .operator()
            .apply(&embed_complex(&ang.target(&h)))
            .unwrap();
        let ys = spa
            .operator()
            .apply(&embed_complex(&spa.target(&h)))
            .unwrap();
        assert!((ya.as_vector() - ys.as_vector()).norm() <= 1e-12 * ys.norm());
    }

    #[test]
    fn pilot_determinism() {
        let cfg = PilotConfig::default();
        let a = PilotSystem::generate(16, &cfg, 7, true).unwrap();
        let b = PilotSystem::generate(16, &cfg, 7, true).unwrap();
        let c = PilotSystem::generate(16, &cfg, 8, true).unwrap();
        assert_eq!(a.operator().a_real(), b.operator().a_real());
        assert_ne!(a.operator().a_real(), c.operator().a_real());
    }

    fn sample_channel(n: usize) -> RealEmbedding {
        let v: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64).cos(), (0.3 * i as f64).sin()))
            .collect();
        embed_complex(&ComplexVector::from_complex(&v))
    }

    #[test]
    fn noiseless_is_exact() {
        let sys = PilotSystem::generate(16, &PilotConfig::default(), 2, true).unwrap();
        let h = sample_channel(16);
        let out = add_noise_seeded(&sys, &h, f64::INFINITY, 1, 0).unwrap();
        assert_eq!(out.y, sys.operator().apply(&h).unwrap());
        assert_eq!(out.noise_var, 0.0);
        assert!(add_noise_seeded(&sys, &h, f64::NAN, 1, 0).is_err());
    }

    #[test]
    fn empirical_snr_matches_target() {
        let sys = PilotSystem::generate(16, &PilotConfig::default(), 2, true).unwrap();
        let h = sample_channel(16);
        let clean = sys.operator().apply(&h).unwrap();
        let mut noise_energy = 0.0;
        for i in 0..1000 {
            let out = add_noise_seeded(&sys, &h, 10.0, 4, i).unwrap();
            noise_energy += (out.y.as_vector() - clean.as_vector()).norm_squared();
        }
        let snr = 10.0 * (clean.norm_squared() / (noise_energy / 1000.0)).log10();
        assert!((snr - 10.0).abs() <= 0.2, "empirical SNR {snr}");
    }

    #[test]
    fn noise_is_reproducible() {
        let sys = PilotSystem::generate(16, &PilotConfig::default(), 2, true).unwrap();
        let h = sample_channel(16);
        let a = add_noise_seeded(&sys, &h, 5.0, 9, 1).unwrap();
        let b = add_noise_seeded(&sys, &h, 5.0, 9, 1).unwrap();
        let c = add_noise_seeded(&sys, &h, 5.0, 9, 2).unwrap();
        assert_eq!(a.y, b.y);
        assert_ne!(a.y, c.y);
    }
}
