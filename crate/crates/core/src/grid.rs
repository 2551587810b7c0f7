//! Periodic tensor grids on the box [-L, L)^n, complex-valued grid functions,
//! discrete Lebesgue norms, the real pairing and spectral Fourier multipliers.
//!
//! Grid functions stand in for functions on R^n whose essential support lies
//! inside the box. Integrals are Riemann sums with the cell volume h^n, and
//! Fourier multipliers act through the discrete transform with angular
//! frequencies xi = pi k / L.

use std::cell::RefCell;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{gauss_legendre, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    points: usize,
    half_width: f64,
}

impl GridSpec {
    /// `points` per axis must be even and at least 2; `dim` is 1, 2 or 3.
    pub fn new(dim: usize, points: usize, half_width: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::BadInput(format!("dimension {dim} not in 1..=3")));
        }
        if points < 2 || !points.is_multiple_of(2) {
            return Err(Error::BadInput(format!("points per axis {points} must be even")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::BadInput(format!("half width {half_width} must be positive")));
        }
        Ok(Self {
            dim,
            points,
            half_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing of the angular frequency lattice, pi / L.
    pub fn frequency_step(&self) -> f64 {
        std::f64::consts::PI / self.half_width
    }

    /// Row-major multi-index of a flat index (unused axes are zero).
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % self.points;
            rest /= self.points;
        }
        idx
    }

    pub fn node(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = -self.half_width + idx[axis] as f64 * h;
        }
        x
    }

    /// Signed mode number of an FFT bin: 0, 1, .., N/2 - 1, -N/2, .., -1.
    pub fn signed_mode(&self, k: usize) -> i64 {
        let n = self.points as i64;
        let k = k as i64;
        if k < n / 2 {
            k
        } else {
            k - n
        }
    }

    /// |xi|^2 at a flat spectral index.
    pub fn frequency_sq(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        let step = self.frequency_step();
        (0..self.dim)
            .map(|a| {
                let xi = self.signed_mode(idx[a]) as f64 * step;
                xi * xi
            })
            .sum()
    }

    /// Minimal-image displacement x - c along each axis of the periodic box.
    pub fn periodic_offset(&self, x: &[f64; 3], center: &[f64]) -> [f64; 3] {
        let period = 2.0 * self.half_width;
        let mut d = [0.0; 3];
        for axis in 0..self.dim {
            let mut v = x[axis] - center[axis];
            v -= period * (v / period).round();
            d[axis] = v;
        }
        d
    }

    fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SpecMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                spec.len()
            )));
        }
        for v in &values {
            ensure_finite("grid value", v.re)?;
            ensure_finite("grid value", v.im)?;
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![Complex64::new(0.0, 0.0); spec.len()],
        }
    }

    /// Samples `f` at the nodes; `f` receives the node coordinates.
    pub fn from_fn<F: Fn(&[f64]) -> Complex64>(spec: GridSpec, f: F) -> Result<Self> {
        let values = (0..spec.len())
            .map(|i| {
                let x = spec.node(i);
                f(&x[..spec.dim])
            })
            .collect();
        Self::new(spec, values)
    }

    pub fn from_real_fn<F: Fn(&[f64]) -> f64>(spec: GridSpec, f: F) -> Result<Self> {
        Self::from_fn(spec, |x| Complex64::new(f(x), 0.0))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    /// self + c * other.
    pub fn add_scaled(&self, c: Complex64, other: &GridFunction) -> Result<Self> {
        self.spec.check_same(&other.spec)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Self::new(self.spec, values)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.add_scaled(Complex64::new(-1.0, 0.0), other)
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.add_scaled(Complex64::new(1.0, 0.0), other)
    }

    pub fn map<F: Fn(Complex64) -> Complex64>(&self, f: F) -> Result<Self> {
        Self::new(self.spec, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Discrete L^p norm (h^n sum |f|^p)^(1/p); p = infinity gives the max.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_norm_of(&self.values, self.spec.cell_volume(), p)
    }

    /// Real pairing <f, g> = 2 Re integral of conj(f) g.
    pub fn pairing(&self, other: &GridFunction) -> Result<f64> {
        self.spec.check_same(&other.spec)?;
        let mut acc = CompensatedSum::new();
        for (a, b) in self.values.iter().zip(&other.values) {
            acc.add(a.re * b.re + a.im * b.im);
        }
        Ok(2.0 * self.spec.cell_volume() * acc.value())
    }

    /// Integral of |f|^2 times the real weight w (pointwise).
    pub fn weighted_sq_integral(&self, w: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (v, wi) in self.values.iter().zip(w) {
            acc.add(v.norm_sqr() * wi);
        }
        acc.value() * self.spec.cell_volume()
    }

    /// Unnormalized forward DFT over all axes.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut data = self.values.clone();
        fft_nd(&mut data, self.spec.points, self.spec.dim, false);
        data
    }

    /// Inverse of [`GridFunction::spectrum`].
    pub fn from_spectrum(spec: GridSpec, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != spec.len() {
            return Err(Error::SpecMismatch("spectrum length".into()));
        }
        fft_nd(&mut coeffs, spec.points, spec.dim, true);
        let inv = 1.0 / spec.len() as f64;
        for c in coeffs.iter_mut() {
            *c *= inv;
        }
        Self::new(spec, coeffs)
    }

    /// ||M f||_2^2 for the multiplier M, evaluated on the spectral side.
    pub fn multiplier_norm_sq(&self, m: &FreqMultiplier) -> Result<f64> {
        let weights = m.weights(&self.spec)?;
        let spec = self.spectrum();
        let mut acc = CompensatedSum::new();
        for (c, w) in spec.iter().zip(&weights) {
            acc.add(c.norm_sqr() * w * w);
        }
        let scale = self.spec.cell_volume() / self.spec.len() as f64;
        ensure_finite("multiplier norm", acc.value() * scale)
    }

    /// Applies |xi|^s spectrally.
    pub fn frac_laplacian(&self, s: f64, policy: ZeroModePolicy) -> Result<Self> {
        FreqMultiplier::new(s, policy).apply(self)
    }

    /// Spectral zero-padding or truncation to `points` per axis. The Nyquist
    /// bin is split evenly on refinement and recombined on coarsening.
    pub fn resample(&self, points: usize) -> Result<Self> {
        let target = GridSpec::new(self.spec.dim, points, self.spec.half_width)?;
        let src = self.spectrum();
        let mut dst = vec![Complex64::new(0.0, 0.0); target.len()];
        let n_src = self.spec.points as i64;
        let n_dst = points as i64;
        for (flat, c) in src.iter().enumerate() {
            let idx = self.spec.multi_index(flat);
            // Each source mode is split into its images among the destination
            // bins; only the Nyquist mode of the finer grid has two images.
            let mut images: Vec<(usize, f64)> = vec![(0, 1.0)];
            for &i in &idx[..self.spec.dim] {
                let k = self.spec.signed_mode(i);
                let targets: Vec<(i64, f64)> = if n_dst > n_src && k == -n_src / 2 {
                    vec![(-n_src / 2, 0.5), (n_src / 2, 0.5)]
                } else if n_dst < n_src && k.abs() > n_dst / 2 {
                    Vec::new()
                } else if n_dst < n_src && k.abs() == n_dst / 2 {
                    vec![(-n_dst / 2, 1.0)]
                } else {
                    vec![(k, 1.0)]
                };
                let mut next = Vec::new();
                for &(base, w) in &images {
                    for &(t, tw) in &targets {
                        let bin = t.rem_euclid(n_dst) as usize;
                        next.push((base * points + bin, w * tw));
                    }
                }
                images = next;
            }
            for (bin, w) in images {
                dst[bin] += c * w;
            }
        }
        let ratio = (points as f64 / self.spec.points as f64).powi(self.spec.dim as i32);
        for c in dst.iter_mut() {
            *c *= ratio;
        }
        Self::from_spectrum(target, dst)
    }

    /// Binary layout: dim u32, N u32, L f64, then (re, im) f64 pairs, all
    /// little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.spec.dim as u32).to_le_bytes())?;
        w.write_all(&(self.spec.points as u32).to_le_bytes())?;
        w.write_all(&self.spec.half_width.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let points = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let half_width = f64::from_le_bytes(b8);
        let spec = GridSpec::new(dim, points, half_width)?;
        let mut values = Vec::with_capacity(spec.len());
        for _ in 0..spec.len() {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            values.push(Complex64::new(re, im));
        }
        Self::new(spec, values)
    }

    /// CSV with one row per node: index tuple, re, im.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.spec.dim).map(|a| format!("i{a}")).collect();
        header.push("re".into());
        header.push("im".into());
        w.write_record(&header)?;
        for (flat, v) in self.values.iter().enumerate() {
            let idx = self.spec.multi_index(flat);
            let mut row: Vec<String> = idx[..self.spec.dim].iter().map(|i| i.to_string()).collect();
            row.push(format!("{:e}", v.re));
            row.push(format!("{:e}", v.im));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn lp_norm_of(values: &[Complex64], cell: f64, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::BadExponent {
            value: p,
            reason: "Lebesgue exponent must be at least 1".into(),
        });
    }
    let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    ensure_finite("sup norm", peak)?;
    if p.is_infinite() || peak == 0.0 {
        return Ok(peak);
    }
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add((v.norm() / peak).powf(p));
    }
    ensure_finite("Lp norm", peak * (cell * acc.value()).powf(1.0 / p))
}

/// How the zero frequency is weighted by a homogeneous multiplier |xi|^s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroModePolicy {
    SetZero,
    /// Cell average of |xi|^s over the frequency cell around the origin for
    /// s < 0; for 0 < s < n the reciprocal of the average of |xi|^-s, so that
    /// the multipliers for s and -s stay exact inverses.
    CellAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqMultiplier {
    pub exponent: f64,
    pub policy: ZeroModePolicy,
}

impl FreqMultiplier {
    pub fn new(exponent: f64, policy: ZeroModePolicy) -> Self {
        Self { exponent, policy }
    }

    pub fn zero_mode_weight(&self, spec: &GridSpec) -> Result<f64> {
        let s = self.exponent;
        let n = spec.dim as f64;
        if s == 0.0 {
            return Ok(1.0);
        }
        match self.policy {
            ZeroModePolicy::SetZero => Ok(0.0),
            ZeroModePolicy::CellAverage => {
                let half_cell = 0.5 * spec.frequency_step();
                if s < 0.0 {
                    if s <= -n {
                        return Err(Error::BadExponent {
                            value: s,
                            reason: "cell average of |xi|^s diverges for s <= -n".into(),
                        });
                    }
                    Ok(cell_average_power(s, spec.dim, half_cell))
                } else if s < n {
                    Ok(1.0 / cell_average_power(-s, spec.dim, half_cell))
                } else {
                    Ok(cell_average_power(s, spec.dim, half_cell))
                }
            }
        }
    }

    pub fn weights(&self, spec: &GridSpec) -> Result<Vec<f64>> {
        if !self.exponent.is_finite() {
            return Err(Error::BadExponent {
                value: self.exponent,
                reason: "multiplier exponent must be finite".into(),
            });
        }
        let zero = self.zero_mode_weight(spec)?;
        let half = 0.5 * self.exponent;
        Ok((0..spec.len())
            .map(|i| {
                if i == 0 {
                    zero
                } else {
                    spec.frequency_sq(i).powf(half)
                }
            })
            .collect())
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        let weights = self.weights(&f.spec)?;
        let mut coeffs = f.spectrum();
        for (c, w) in coeffs.iter_mut().zip(&weights) {
            *c *= *w;
        }
        GridFunction::from_spectrum(f.spec, coeffs)
    }
}

/// Average of |xi|^s over the cube [-c, c]^dim, for s > -dim.
///
/// The unit cube minus its lower corner [0, 1/2]^dim is integrated with a
/// five-point Gauss rule per axis on each of its 2^dim - 1 subcubes (each
/// split once more); self-similarity of |xi|^s then sums the dyadic shells
/// in closed form.
pub fn cell_average_power(s: f64, dim: usize, c: f64) -> f64 {
    let (x, w) = gauss_legendre(5);
    let shells = 1usize << dim;
    let pieces = 2usize;
    let side = 0.5 / pieces as f64;
    let mut shell = 0.0;
    for corner in 1..shells {
        let lower: Vec<f64> = (0..dim)
            .map(|a| if corner >> a & 1 == 1 { 0.5 } else { 0.0 })
            .collect();
        for sub in 0..pieces.pow(dim as u32) {
            let mut origin = lower.clone();
            let mut rest = sub;
            for o in origin.iter_mut() {
                *o += (rest % pieces) as f64 * side;
                rest /= pieces;
            }
            let nodes = x.len().pow(dim as u32);
            for q in 0..nodes {
                let mut r2 = 0.0;
                let mut weight = 1.0;
                let mut rest = q;
                for o in &origin {
                    let j = rest % x.len();
                    rest /= x.len();
                    let u = o + 0.5 * side * (1.0 + x[j]);
                    r2 += u * u;
                    weight *= 0.5 * side * w[j];
                }
                shell += weight * r2.powf(0.5 * s);
            }
        }
    }
    let ratio = 0.5f64.powf(dim as f64 + s);
    c.powf(s) * shell / (1.0 - ratio)
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    let fft = plan(n, inverse);
    if dim == 1 {
        fft.process(data);
        return;
    }
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let len = data.len();
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            fft.process(data);
            continue;
        }
        let block = stride * n;
        for start in (0..len).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[base + j * stride] = *l;
                }
            }
        }
    }
}
