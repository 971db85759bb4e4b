//! Hybrid far/near-field ray channels, pilot combiners, noisy measurements
//! and the dataset file format.

pub mod dataset;
pub mod geometry;
pub mod pilot;
pub mod propagation;

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComplexVector;
use crate::rng::{stream_rng, Stream};

pub use geometry::{direction, far_response, near_response, ArrayGeometry};
pub use propagation::{path_loss, rayleigh_distance, reflection_coeff};

/// Physical parameters of the ray model. Defaults are the reference
/// 300 GHz indoor setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    pub speed_of_light: f64,
    /// Total ray count including the LoS ray.
    pub n_paths: usize,
    /// Molecular absorption, 1/m.
    pub k_abs: f64,
    pub n_t_re: f64,
    pub n_t_im: f64,
    pub sigma_rough: f64,
    /// Rays farther than this use the planar-wavefront response.
    pub d_rayleigh: f64,
    /// LoS length, meters.
    pub r1: f64,
    /// LoS delay, seconds.
    pub tau1: f64,
    pub tau_range: [f64; 2],
    pub r_range: [f64; 2],
    pub theta_range: [f64; 2],
    pub phi_range: [f64; 2],
    pub phi_in_range: [f64; 2],
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 300e9,
            speed_of_light: 2.998e8,
            n_paths: 5,
            k_abs: 0.0033,
            n_t_re: 2.24,
            n_t_im: -0.025,
            sigma_rough: 8.8e-5,
            d_rayleigh: 20.0,
            r1: 30.0,
            tau1: 100e-9,
            tau_range: [100e-9, 110e-9],
            r_range: [10.0, 25.0],
            theta_range: [-FRAC_PI_2, FRAC_PI_2],
            phi_range: [-PI, PI],
            phi_in_range: [0.0, FRAC_PI_2],
        }
    }
}

impl ChannelConfig {
    pub fn n_t(&self) -> Complex64 {
        Complex64::new(self.n_t_re, self.n_t_im)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel.carrier_hz", self.carrier_hz),
            ("channel.speed_of_light", self.speed_of_light),
            ("channel.d_rayleigh", self.d_rayleigh),
            ("channel.r1", self.r1),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    field,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if self.n_paths == 0 {
            return Err(Error::config(
                "channel.n_paths",
                "need at least the LoS ray",
            ));
        }
        for (field, v) in [
            ("channel.k_abs", self.k_abs),
            ("channel.sigma_rough", self.sigma_rough),
            ("channel.tau1", self.tau1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    field,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if !(self.n_t_re.is_finite() && self.n_t_im.is_finite())
            || self.n_t() == Complex64::new(0.0, 0.0)
        {
            return Err(Error::config(
                "channel.n_t",
                "refractive index must be finite and nonzero",
            ));
        }
        for (field, [lo, hi]) in [
            ("channel.tau_range", self.tau_range),
            ("channel.r_range", self.r_range),
            ("channel.theta_range", self.theta_range),
            ("channel.phi_range", self.phi_range),
            ("channel.phi_in_range", self.phi_in_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(
                    field,
                    format!("need finite lo <= hi, got [{lo}, {hi}]"),
                ));
            }
        }
        if self.r_range[0] <= 0.0 {
            return Err(Error::config("channel.r_range", "distances must be > 0"));
        }
        if self.phi_in_range[0] < 0.0 || self.phi_in_range[1] > FRAC_PI_2 {
            return Err(Error::config(
                "channel.phi_in_range",
                "incidence must lie in [0, pi/2]",
            ));
        }
        Ok(())
    }
}

/// One ray as drawn by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub beta: f64,
    pub phi: f64,
    pub theta: f64,
    pub r: f64,
    pub tau: f64,
    pub gamma: Complex64,
    pub phi_in: f64,
    pub is_los: bool,
    /// Planar response used (`r > d_rayleigh`).
    pub far_field: bool,
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws rays and sums their responses for a fixed geometry.
#[derive(Debug, Clone)]
pub struct ChannelSimulator {
    positions: Vec<[f64; 3]>,
    cfg: ChannelConfig,
}

impl ChannelSimulator {
    pub fn new(geom: &ArrayGeometry, cfg: &ChannelConfig) -> Result<Self> {
        geom.validate()?;
        cfg.validate()?;
        Ok(Self {
            positions: geom.positions()?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn draw_paths(&self, rng: &mut impl Rng) -> Vec<PathParams> {
        let cfg = &self.cfg;
        let (f_c, c) = (cfg.carrier_hz, cfg.speed_of_light);
        (0..cfg.n_paths)
            .map(|l| {
                let theta = uniform(rng, cfg.theta_range);
                let phi = uniform(rng, cfg.phi_range);
                let is_los = l == 0;
                let (r, tau, phi_in) = if is_los {
                    (cfg.r1, cfg.tau1, 0.0)
                } else {
                    let r = uniform(rng, cfg.r_range);
                    let tau = uniform(rng, cfg.tau_range);
                    (r, tau, uniform(rng, cfg.phi_in_range))
                };
                let gamma = reflection_coeff(phi_in, cfg.n_t(), cfg.sigma_rough, f_c, c, is_los);
                let beta = path_loss(gamma, cfg.r1, f_c, c, cfg.k_abs).expect("validated r1");
                PathParams {
                    beta,
                    phi,
                    theta,
                    r,
                    tau,
                    gamma,
                    phi_in,
                    is_los,
                    far_field: r > cfg.d_rayleigh,
                }
            })
            .collect()
    }

    /// Array response of one ray, far or near according to its flag.
    pub fn response(&self, path: &PathParams) -> ComplexVector {
        let (f_c, c) = (self.cfg.carrier_hz, self.cfg.speed_of_light);
        if path.far_field {
            far_response(&self.positions, path.phi, path.theta, f_c, c)
        } else {
            near_response(&self.positions, path.phi, path.theta, path.r, f_c, c)
        }
    }

    /// `sum_l beta_l a_l exp(-j 2 pi f_c tau_l)`.
    pub fn synthesize(&self, paths: &[PathParams]) -> ComplexVector {
        let mut h = vec![Complex64::new(0.0, 0.0); self.positions.len()];
        for path in paths {
            let gain =
                path.beta * Complex64::from_polar(1.0, -2.0 * PI * self.cfg.carrier_hz * path.tau);
            for (hi, ai) in h.iter_mut().zip(self.response(path).to_complex()) {
                *hi += gain * ai;
            }
        }
        ComplexVector::from_complex(&h)
    }

    /// Channel for sample `index` of the stream seeded by `seed`.
    pub fn generate(&self, seed: u64, index: u64) -> (ComplexVector, Vec<PathParams>) {
        let mut rng = stream_rng(seed, Stream::Channel, index);
        let paths = self.draw_paths(&mut rng);
        (self.synthesize(&paths), paths)
    }
}

pub fn generate_channel(
    geom: &ArrayGeometry,
    cfg: &ChannelConfig,
    seed: u64,
    index: u64,
) -> Result<(ComplexVector, Vec<PathParams>)> {
    Ok(ChannelSimulator::new(geom, cfg)?.generate(seed, index))
}
