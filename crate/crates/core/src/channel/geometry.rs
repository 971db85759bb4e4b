//! Antenna layout of `S` square UPAs on a `sqrt(S) x sqrt(S)` grid and the
//! far/near-field array responses.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComplexVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_antennas: usize,
    pub n_upas: usize,
    /// Antenna spacing inside a UPA, meters.
    pub d: f64,
    /// Spacing between adjacent UPAs, meters.
    pub d_upa: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            n_antennas: 64,
            n_upas: 4,
            d: 5.0e-4,
            d_upa: 5.6e-2,
        }
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_upas == 0 || exact_sqrt(self.n_upas).is_none() {
            return Err(Error::config(
                "geometry.n_upas",
                format!("{} is not a positive perfect square", self.n_upas),
            ));
        }
        if self.n_antennas == 0 || !self.n_antennas.is_multiple_of(self.n_upas) {
            return Err(Error::config(
                "geometry.n_antennas",
                format!(
                    "{} is not a positive multiple of n_upas = {}",
                    self.n_antennas, self.n_upas
                ),
            ));
        }
        if exact_sqrt(self.n_antennas / self.n_upas).is_none() {
            return Err(Error::config(
                "geometry.n_antennas",
                format!(
                    "{} antennas per UPA is not a perfect square",
                    self.n_antennas / self.n_upas
                ),
            ));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::config(
                "geometry.d",
                "antenna spacing must be finite and > 0",
            ));
        }
        if !(self.d_upa >= 0.0 && self.d_upa.is_finite()) {
            return Err(Error::config(
                "geometry.d_upa",
                "UPA spacing must be finite and >= 0",
            ));
        }
        Ok(())
    }

    pub fn per_upa(&self) -> usize {
        self.n_antennas / self.n_upas
    }

    /// Side length `sqrt(N/S)` of one UPA.
    pub fn upa_side(&self) -> usize {
        exact_sqrt(self.per_upa()).expect("validated geometry")
    }

    /// Side length `sqrt(S)` of the UPA grid.
    pub fn grid_side(&self) -> usize {
        exact_sqrt(self.n_upas).expect("validated geometry")
    }

    /// Position of antenna `s2` (1-based, row-major inside the UPA) of UPA
    /// `s1` (1-based, row-major over the UPA grid).
    pub fn antenna_position(&self, s1: usize, s2: usize) -> Result<[f64; 3]> {
        self.validate()?;
        let (q, g) = (self.upa_side(), self.grid_side());
        if !(1..=self.n_upas).contains(&s1) {
            return Err(Error::Domain(format!(
                "UPA index s1={s1} outside 1..={}",
                self.n_upas
            )));
        }
        if !(1..=self.per_upa()).contains(&s2) {
            return Err(Error::Domain(format!(
                "antenna index s2={s2} outside 1..={}",
                self.per_upa()
            )));
        }
        let (m2, n2) = ((s1 - 1) / g + 1, (s1 - 1) % g + 1);
        let (m1, n1) = ((s2 - 1) / q + 1, (s2 - 1) % q + 1);
        let offset = (q as f64 - 1.0) * self.d_upa;
        Ok([
            (m1 - 1) as f64 * self.d + (m2 - 1) as f64 * offset,
            (n1 - 1) as f64 * self.d + (n2 - 1) as f64 * offset,
            0.0,
        ])
    }

    /// All positions in antenna-vector order: index `(s1-1) * N/S + (s2-1)`.
    pub fn positions(&self) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(self.n_antennas);
        for s1 in 1..=self.n_upas {
            for s2 in 1..=self.per_upa() {
                out.push(self.antenna_position(s1, s2)?);
            }
        }
        Ok(out)
    }

    /// Largest distance between two antennas.
    pub fn aperture(&self) -> Result<f64> {
        let pos = self.positions()?;
        let first = pos[0];
        let last = pos[pos.len() - 1];
        Ok(dist(&first, &last))
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Unit vector towards `(phi, theta)`: `[sin t cos p, sin t sin p, cos t]`.
pub fn direction(phi: f64, theta: f64) -> [f64; 3] {
    [
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    ]
}

fn phase_entry(wavenumber: f64, path: f64) -> Complex64 {
    Complex64::from_polar(1.0, -wavenumber * path)
}

/// Planar-wavefront response, entry `exp(-j 2 pi f_c/c p^T t)`.
pub fn far_response(
    positions: &[[f64; 3]],
    phi: f64,
    theta: f64,
    f_c: f64,
    c: f64,
) -> ComplexVector {
    let t = direction(phi, theta);
    let k = 2.0 * PI * f_c / c;
    let v: Vec<Complex64> = positions
        .iter()
        .map(|p| phase_entry(k, p[0] * t[0] + p[1] * t[1] + p[2] * t[2]))
        .collect();
    ComplexVector::from_complex(&v)
}

/// Spherical-wavefront response, entry `exp(-j 2 pi f_c/c ||p - r t||)`.
pub fn near_response(
    positions: &[[f64; 3]],
    phi: f64,
    theta: f64,
    r: f64,
    f_c: f64,
    c: f64,
) -> ComplexVector {
    let t = direction(phi, theta);
    let src = [r * t[0], r * t[1], r * t[2]];
    let k = 2.0 * PI * f_c / c;
    let v: Vec<Complex64> = positions
        .iter()
        .map(|p| phase_entry(k, dist(p, &src)))
        .collect();
    ComplexVector::from_complex(&v)
}
