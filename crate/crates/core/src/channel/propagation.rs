use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `D^2 / lambda_c`.
pub fn rayleigh_distance(aperture: f64, lambda_c: f64) -> Result<f64> {
    if !(aperture > 0.0) || !(lambda_c > 0.0) {
        return Err(Error::Domain(format!(
            "aperture and wavelength must be > 0, got {aperture} and {lambda_c}"
        )));
    }
    Ok(aperture * aperture / lambda_c)
}

/// Rough-surface reflection coefficient with incidence `phi_in`, complex
/// refractive index `n_t` and roughness `sigma_rough`. The refraction angle
/// uses the principal complex arcsine. Line-of-sight rays return exactly 1.
pub fn reflection_coeff(
    phi_in: f64,
    n_t: Complex64,
    sigma_rough: f64,
    f_c: f64,
    c: f64,
    is_los: bool,
) -> Complex64 {
    if is_los {
        return Complex64::new(1.0, 0.0);
    }
    let cos_in = phi_in.cos();
    let phi_ref = (Complex64::new(phi_in.sin(), 0.0) / n_t).asin();
    let nt_cos_ref = n_t * phi_ref.cos();
    let fresnel = (cos_in - nt_cos_ref) / (cos_in + nt_cos_ref);
    let roughness =
        (-8.0 * PI * PI * f_c * f_c * sigma_rough * sigma_rough * cos_in * cos_in / (c * c)).exp();
    fresnel * roughness
}

/// `|Gamma| c / (4 pi f_c r1) exp(-k_abs r1 / 2)`.
pub fn path_loss(gamma: Complex64, r1: f64, f_c: f64, c: f64, k_abs: f64) -> Result<f64> {
    if !(r1 > 0.0) {
        return Err(Error::Domain(format!("LoS length must be > 0, got {r1}")));
    }
    Ok(gamma.norm() * (c / (4.0 * PI * f_c * r1)) * (-0.5 * k_abs * r1).exp())
}
