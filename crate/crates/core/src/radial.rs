//! Radially symmetric profiles on a uniform node grid r_i = i dr, with
//! finite-volume cells around each node and an optional analytic exterior
//! beyond the last node.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{integrate_to_infinity, CompensatedSum};

/// Area of the unit sphere in R^n.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 2.0 * std::f64::consts::PI / (n as f64 - 2.0) * sphere_area(n - 2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    dim: usize,
    points: usize,
    r_max: f64,
}

impl RadialGrid {
    pub fn new(dim: usize, points: usize, r_max: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::BadInput("radial grids need n >= 2".into()));
        }
        if points < 3 || !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::BadInput("need at least three nodes and R_max > 0".into()));
        }
        Ok(Self { dim, points, r_max })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn dr(&self) -> f64 {
        self.r_max / (self.points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dr()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    /// Cell faces: 0, midpoints between nodes, and R_max + dr/2.
    pub fn faces(&self) -> Vec<f64> {
        let dr = self.dr();
        let mut f = Vec::with_capacity(self.points + 1);
        f.push(0.0);
        for i in 1..self.points {
            f.push((i as f64 - 0.5) * dr);
        }
        f.push(self.r_max + 0.5 * dr);
        f
    }

    /// Exact volumes of the spherical shells between consecutive faces.
    pub fn volumes(&self) -> Vec<f64> {
        let omega = sphere_area(self.dim);
        let n = self.dim as i32;
        self.faces()
            .windows(2)
            .map(|w| omega / self.dim as f64 * (w[1].powi(n) - w[0].powi(n)))
            .collect()
    }

    pub fn face_areas(&self) -> Vec<f64> {
        let omega = sphere_area(self.dim);
        self.faces()
            .iter()
            .map(|r| omega * r.powi(self.dim as i32 - 1))
            .collect()
    }

    /// First node outside the grid, where an exterior value pins the flux.
    pub fn ghost(&self) -> f64 {
        self.r_max + self.dr()
    }
}

/// Exterior profile (d + c r^2)^(-e), used beyond the last node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTail {
    pub d: f64,
    pub c: f64,
    pub exponent: f64,
}

impl PowerTail {
    pub fn value(&self, r: f64) -> f64 {
        (self.d + self.c * r * r).powf(-self.exponent)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        -self.exponent * 2.0 * self.c * r * (self.d + self.c * r * r).powf(-self.exponent - 1.0)
    }

    pub fn pow(&self, q: f64) -> Self {
        Self {
            exponent: self.exponent * q,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    grid: RadialGrid,
    values: Vec<f64>,
    exterior: Option<PowerTail>,
}

impl RadialProfile {
    pub fn new(grid: RadialGrid, values: Vec<f64>, exterior: Option<PowerTail>) -> Result<Self> {
        if values.len() != grid.points {
            return Err(Error::BadInput("profile length differs from the grid".into()));
        }
        for &v in &values {
            ensure_finite("radial profile", v)?;
            if v < 0.0 {
                return Err(Error::BadInput(format!("negative density {v}")));
            }
        }
        Ok(Self {
            grid,
            values,
            exterior,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: RadialGrid, f: F, exterior: Option<PowerTail>) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, values, exterior)
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn exterior(&self) -> Option<PowerTail> {
        self.exterior
    }

    /// Integral of v over R^n: cell sums plus the exterior beyond the last face.
    pub fn mass(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for (v, vol) in self.values.iter().zip(self.grid.volumes()) {
            acc.add(v * vol);
        }
        acc.value() + self.exterior_mass()
    }

    /// Mass of the exterior beyond the outer face (zero without exterior).
    pub fn exterior_mass(&self) -> f64 {
        match self.exterior {
            Some(t) => {
                let omega = sphere_area(self.grid.dim);
                let n = self.grid.dim as i32;
                integrate_to_infinity(
                    |r| omega * r.powi(n - 1) * t.value(r),
                    self.grid.r_max + 0.5 * self.grid.dr(),
                    64,
                )
            }
            None => 0.0,
        }
    }

    /// Weighted L^1 distance over the grid cells.
    pub fn l1_distance(&self, other: &RadialProfile) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::SpecMismatch("radial grids differ".into()));
        }
        let mut acc = CompensatedSum::new();
        for ((a, b), vol) in self.values.iter().zip(&other.values).zip(self.grid.volumes()) {
            acc.add((a - b).abs() * vol);
        }
        Ok(acc.value())
    }

    /// Pointwise power v^q, exterior included.
    pub fn pow(&self, q: f64) -> Result<Self> {
        Self::new(
            self.grid,
            self.values.iter().map(|v| v.powf(q)).collect(),
            self.exterior.map(|t| t.pow(q)),
        )
    }
}

/// v^((n-2)/2n): maps a Barenblatt density to a Sobolev optimizer profile.
pub fn lift(v: &RadialProfile) -> Result<RadialProfile> {
    let n = v.grid.dim as f64;
    v.pow((n - 2.0) / (2.0 * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialDeficit {
    /// S ||grad f||_2^2.
    pub sobolev_term: f64,
    /// ||f||_{2n/(n-2)}^2.
    pub lebesgue_term: f64,
    pub deficit: f64,
}

/// ||grad f||_2^2 and int f^p over R^n for a radial profile: one-sided
/// differences across cell faces, cell volumes for the power integral, and
/// analytic exterior integrals when an exterior is attached.
pub fn radial_integrals(f: &RadialProfile, p: f64) -> (f64, f64) {
    let g = &f.grid;
    let dr = g.dr();
    let areas = g.face_areas();
    let omega = sphere_area(g.dim);
    let n = g.dim as i32;
    let mut grad = CompensatedSum::new();
    for i in 0..g.points - 1 {
        let d = (f.values[i + 1] - f.values[i]) / dr;
        grad.add(areas[i + 1] * dr * d * d);
    }
    let mut power = CompensatedSum::new();
    for (v, vol) in f.values.iter().zip(g.volumes()) {
        power.add(v.powf(p) * vol);
    }
    if let Some(t) = f.exterior {
        let ghost = g.ghost();
        let d = (t.value(ghost) - f.values[g.points - 1]) / dr;
        grad.add(areas[g.points] * dr * d * d);
        grad.add(integrate_to_infinity(
            |r| {
                let dv = t.derivative(r);
                omega * r.powi(n - 1) * dv * dv
            },
            ghost,
            64,
        ));
        power.add(integrate_to_infinity(
            |r| omega * r.powi(n - 1) * t.value(r).powf(p),
            g.r_max + 0.5 * dr,
            64,
        ));
    }
    (grad.value(), power.value())
}

/// S ||grad f||^2 - ||f||_{2n/(n-2)}^2 for a radial profile in R^n, n >= 3.
pub fn radial_sobolev_deficit(f: &RadialProfile, s: f64) -> Result<RadialDeficit> {
    let n = f.grid.dim as f64;
    if f.grid.dim < 3 {
        return Err(Error::BadInput("radial Sobolev deficit needs n >= 3".into()));
    }
    let p = 2.0 * n / (n - 2.0);
    let (grad, power) = radial_integrals(f, p);
    let sobolev_term = s * grad;
    let lebesgue_term = power.powf(2.0 / p);
    Ok(RadialDeficit {
        sobolev_term,
        lebesgue_term,
        deficit: ensure_finite("radial deficit", sobolev_term - lebesgue_term)?,
    })
}

/// Rayleigh quotient ||h||_p^2 / ||grad h||^2 of h = (1 + r^2)^(-(n-2)/2)
/// on the radial grid, exterior integrals included.
pub fn sobolev_constant_radial(grid: RadialGrid) -> Result<f64> {
    let n = grid.dim as f64;
    if grid.dim < 3 {
        return Err(Error::BadInput("radial Sobolev constant needs n >= 3".into()));
    }
    let tail = PowerTail {
        d: 1.0,
        c: 1.0,
        exponent: 0.5 * (n - 2.0),
    };
    let h = RadialProfile::from_fn(grid, |r| tail.value(r), Some(tail))?;
    let p = 2.0 * n / (n - 2.0);
    let (grad, power) = radial_integrals(&h, p);
    ensure_finite("radial Sobolev constant", power.powf(2.0 / p) / grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-13);
    }

    #[test]
    fn shell_volumes_add_up_to_the_ball() {
        let g = RadialGrid::new(3, 101, 5.0).unwrap();
        let total: f64 = g.volumes().iter().sum();
        let outer = 5.0 + 0.5 * g.dr();
        assert!((total - 4.0 / 3.0 * std::f64::consts::PI * outer.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn lift_and_raise_round_trip() {
        let g = RadialGrid::new(3, 50, 4.0).unwrap();
        let v = RadialProfile::from_fn(g, |r| (1.0 + r * r).powi(-3), None).unwrap();
        let back = lift(&v).unwrap().pow(6.0).unwrap();
        for (a, b) in v.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }

    #[test]
    fn zero_profile_has_zero_deficit() {
        let g = RadialGrid::new(3, 50, 4.0).unwrap();
        let z = RadialProfile::new(g, vec![0.0; 50], None).unwrap();
        assert_eq!(radial_sobolev_deficit(&z, 1.0).unwrap().deficit, 0.0);
        assert_eq!(lift(&z).unwrap().values(), z.values());
    }

    #[test]
    fn negative_densities_are_rejected() {
        let g = RadialGrid::new(3, 3, 1.0).unwrap();
        assert!(RadialProfile::new(g, vec![1.0, -1.0, 0.0], None).is_err());
    }
}
