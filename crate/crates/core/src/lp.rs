//! Squared Lebesgue norms E(f) = ||f||_p^2 on grid functions, their
//! gradients for the real pairing, and the quantitative convexity and
//! smoothness estimates they satisfy.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{GridFunction, GridSpec};

/// Conjugate exponents p and p' = p / (p - 1), with 1 < p < inf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentPair {
    p: f64,
    dual: f64,
}

impl ExponentPair {
    pub fn new(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::BadExponent {
                value: p,
                reason: "need 1 < p < inf".into(),
            });
        }
        Ok(Self { p, dual: p / (p - 1.0) })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dual(&self) -> f64 {
        self.dual
    }

    pub fn swap(&self) -> Self {
        Self {
            p: self.dual,
            dual: self.p,
        }
    }
}

pub fn energy(f: &GridFunction, p: f64) -> Result<f64> {
    ExponentPair::new(p)?;
    let n = f.lp_norm(p)?;
    ensure_finite("energy", n * n)
}

/// ||f||_p^(2-p) |f|^(p-1) sgn f, with sgn w = w / |w| and sgn 0 = 0.
pub fn grad_energy(f: &GridFunction, p: f64) -> Result<GridFunction> {
    ExponentPair::new(p)?;
    if p == 2.0 {
        return Ok(f.clone());
    }
    let norm = f.lp_norm(p)?;
    if norm == 0.0 {
        return Ok(GridFunction::zeros(*f.spec()));
    }
    // Written as norm * (|v| / norm)^(p-1) sgn v to stay in range for large p.
    f.map(|v| {
        let a = v.norm();
        if a == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            v * (norm * (a / norm).powf(p - 1.0) / a)
        }
    })
}

/// Gradient of E*(g) = ||g||_{p'}^2, mapping L^{p'} back to L^p.
pub fn grad_energy_dual(g: &GridFunction, p: f64) -> Result<GridFunction> {
    let pair = ExponentPair::new(p)?;
    grad_energy(g, pair.dual())
}

/// One sampled instance of the strong convexity inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityWitness {
    pub p: f64,
    pub norm_f1: f64,
    pub norm_f2: f64,
    pub norm_diff: f64,
    pub gap: f64,
    pub bound: f64,
    pub margin: f64,
}

impl ConvexityWitness {
    /// Magnitude against which rounding in `margin` is judged.
    pub fn scale(&self) -> f64 {
        self.norm_f1 * self.norm_f1 + self.norm_f2 * self.norm_f2 + self.norm_diff * self.norm_diff
    }
}

/// Lower bound on the Bregman gap of E at distance `diff`:
/// (p - 1) diff^2 for p <= 2, and
/// (1 / 4p) (2/3)^(p-1) (n1 + n2)^(2-p) diff^p for p > 2.
pub fn convexity_bound(p: f64, n1: f64, n2: f64, diff: f64) -> f64 {
    if p <= 2.0 {
        (p - 1.0) * diff * diff
    } else if n1 + n2 == 0.0 {
        0.0
    } else {
        (1.0 / (4.0 * p)) * (2.0f64 / 3.0).powf(p - 1.0) * (n1 + n2).powf(2.0 - p) * diff.powf(p)
    }
}

/// E(f2) - E(f1) - <f2 - f1, grad E(f1)> against the convexity bound.
pub fn strong_convexity_gap(f1: &GridFunction, f2: &GridFunction, p: f64) -> Result<ConvexityWitness> {
    ExponentPair::new(p)?;
    let diff = f2.sub(f1)?;
    let n1 = f1.lp_norm(p)?;
    let n2 = f2.lp_norm(p)?;
    let nd = diff.lp_norm(p)?;
    let g1 = grad_energy(f1, p)?;
    let gap = n2 * n2 - n1 * n1 - diff.pairing(&g1)?;
    let bound = convexity_bound(p, n1, n2, nd);
    Ok(ConvexityWitness {
        p,
        norm_f1: n1,
        norm_f2: n2,
        norm_diff: nd,
        gap,
        bound,
        margin: gap - bound,
    })
}

pub fn write_witnesses<P: AsRef<Path>>(path: P, rows: &[ConvexityWitness]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["p", "norm_f1", "norm_f2", "norm_diff", "gap", "bound", "margin"])?;
    for r in rows {
        w.write_record(
            [r.p, r.norm_f1, r.norm_f2, r.norm_diff, r.gap, r.bound, r.margin].map(|v| format!("{v:e}")),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Right-hand sides for the modulus of continuity of grad E* when p > 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HolderBracket {
    /// (2/3)(1/4p)^(1/(p-1)) R^((2-p)/(p-1)), the bracket as printed.
    /// Kept for comparison only: it is violated (see the tests).
    AsPrinted { radius: f64 },
    /// (3/2)(4p)^(1/(p-1)) R^((p-2)/(p-1)), valid when both norms are <= R/2.
    Radius { radius: f64 },
    /// The same constant with R replaced by ||g1|| + ||g2||.
    Local,
}

impl HolderBracket {
    fn constant(&self, p: f64, n1: f64, n2: f64) -> f64 {
        let e = 1.0 / (p - 1.0);
        match *self {
            HolderBracket::AsPrinted { radius } => {
                (2.0 / 3.0) * (1.0 / (4.0 * p)).powf(e) * radius.powf((2.0 - p) * e)
            }
            HolderBracket::Radius { radius } => 1.5 * (4.0 * p).powf(e) * radius.powf((p - 2.0) * e),
            HolderBracket::Local => 1.5 * (4.0 * p).powf(e) * (n1 + n2).powf((p - 2.0) * e),
        }
    }
}

/// ||grad E*(g1) - grad E*(g2)||_p divided by its modulus-of-continuity
/// bound: ||g1 - g2||_{p'} / (p - 1) for p <= 2 (the bracket is ignored),
/// the chosen Holder bracket times ||g1 - g2||^(1/(p-1)) for p > 2.
pub fn grad_continuity_ratio(
    g1: &GridFunction,
    g2: &GridFunction,
    p: f64,
    bracket: HolderBracket,
) -> Result<f64> {
    let pair = ExponentPair::new(p)?;
    let q = pair.dual();
    let n1 = g1.lp_norm(q)?;
    let n2 = g2.lp_norm(q)?;
    let dg = g1.sub(g2)?.lp_norm(q)?;
    if dg == 0.0 {
        return Err(Error::DegenerateInput("identical dual points".into()));
    }
    let lhs = grad_energy_dual(g1, p)?.sub(&grad_energy_dual(g2, p)?)?.lp_norm(p)?;
    let rhs = if p <= 2.0 {
        dg / (p - 1.0)
    } else {
        if let HolderBracket::Radius { radius } | HolderBracket::AsPrinted { radius } = bracket {
            let worst = n1.max(n2);
            if worst > 0.5 * radius * (1.0 + 1e-12) {
                return Err(Error::PreconditionViolated {
                    what: "dual norms must not exceed R / 2".into(),
                    distance: worst - 0.5 * radius,
                });
            }
        }
        bracket.constant(p, n1, n2) * dg.powf(1.0 / (p - 1.0))
    };
    Ok(lhs / rhs)
}

/// For unit vectors ||u||_p = 1 = ||v||_{p'} with p > 2:
/// (1 - Re int u conj(v)) - ||u - grad E*(v)||_p^p / (p 2^(p-1)).
pub fn clarkson_unit_gap(u: &GridFunction, v: &GridFunction, p: f64) -> Result<f64> {
    let pair = ExponentPair::new(p)?;
    if p <= 2.0 {
        return Err(Error::BadExponent {
            value: p,
            reason: "unit-vector estimate is stated for p > 2".into(),
        });
    }
    for norm in [u.lp_norm(p)?, v.lp_norm(pair.dual())?] {
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::NotUnit { norm });
        }
    }
    let re = 0.5 * u.pairing(v)?;
    let w = grad_energy_dual(v, p)?;
    let d = u.sub(&w)?.lp_norm(p)?;
    Ok((1.0 - re) - d.powf(p) / (p * 2f64.powf(p - 1.0)))
}

/// Centered second difference of t -> E(f + t g) at t = 0.
pub fn second_variation(f: &GridFunction, g: &GridFunction, p: f64, step: f64) -> Result<f64> {
    let c = Complex64::new(step, 0.0);
    let plus = energy(&f.add_scaled(c, g)?, p)?;
    let minus = energy(&f.add_scaled(-c, g)?, p)?;
    let mid = energy(f, p)?;
    Ok((plus - 2.0 * mid + minus) / (step * step))
}

/// Families of sample pairs used by the convexity and continuity sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFamily {
    /// Independent smooth fields of random amplitude.
    Smooth,
    /// f1 supported on the left half, f2 = f1 plus a right-half bump.
    DisjointSupport,
    /// f2 a small perturbation of a multiple of f1.
    NearParallel,
    /// f2 equal to f1 with the sign flipped on part of the box.
    SignFlip,
}

impl PairFamily {
    pub const ALL: [PairFamily; 4] = [
        PairFamily::Smooth,
        PairFamily::DisjointSupport,
        PairFamily::NearParallel,
        PairFamily::SignFlip,
    ];
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// Complex band-limited field: Gaussian Fourier coefficients on the modes
/// |k| <= `band` along each axis, normalised to unit sup norm.
pub fn random_field<R: Rng>(spec: GridSpec, band: usize, rng: &mut R) -> Result<GridFunction> {
    let mut coeffs = vec![Complex64::new(0.0, 0.0); spec.len()];
    for (flat, c) in coeffs.iter_mut().enumerate() {
        let idx = spec.multi_index(flat);
        let inside = (0..spec.dim()).all(|a| spec.signed_mode(idx[a]).unsigned_abs() as usize <= band);
        if inside {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *c = Complex64::new(re, im);
        }
    }
    let f = GridFunction::from_spectrum(spec, coeffs)?;
    let peak = f.lp_norm(f64::INFINITY)?;
    if peak == 0.0 {
        return Ok(f);
    }
    Ok(f.scale_real(1.0 / peak))
}

fn half_mask(spec: &GridSpec, f: &GridFunction, left: bool) -> Result<GridFunction> {
    let values = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x0 = spec.node(i)[0];
            if (x0 < 0.0) == left {
                *v
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    GridFunction::new(*spec, values)
}

/// Draws one pair from the given family.
pub fn sample_pair<R: Rng>(
    spec: GridSpec,
    family: PairFamily,
    rng: &mut R,
) -> Result<(GridFunction, GridFunction)> {
    let band = 1 + rng.random_range(0..spec.points().min(64) / 4);
    let base = random_field(spec, band, rng)?.scale_real(log_uniform(rng, 0.1, 10.0));
    match family {
        PairFamily::Smooth => {
            let other = random_field(spec, band, rng)?.scale_real(log_uniform(rng, 0.1, 10.0));
            Ok((base, other))
        }
        PairFamily::DisjointSupport => {
            let f1 = half_mask(&spec, &base, true)?;
            let bump = random_field(spec, band, rng)?;
            let t = log_uniform(rng, 1e-4, 10.0);
            let f2 = f1.add_scaled(Complex64::new(t, 0.0), &half_mask(&spec, &bump, false)?)?;
            Ok((f1, f2))
        }
        PairFamily::NearParallel => {
            let c = Complex64::from_polar(log_uniform(rng, 0.5, 2.0), rng.random_range(-0.1..0.1));
            let eps = log_uniform(rng, 1e-4, 1e-1);
            let w = random_field(spec, band, rng)?;
            let f2 = base.scale(c).add_scaled(Complex64::new(eps * base.lp_norm(f64::INFINITY)?, 0.0), &w)?;
            Ok((base, f2))
        }
        PairFamily::SignFlip => {
            let cut = -spec.half_width() + 2.0 * spec.half_width() * rng.random::<f64>();
            let values = base
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| if spec.node(i)[0] < cut { -v } else { *v })
                .collect();
            let f2 = GridFunction::new(spec, values)?;
            Ok((base, f2))
        }
    }
}

/// Pair (u, u + t w) with u and w of disjoint support, for which the
/// convexity modulus in p > 2 degenerates as t -> 0: the Bregman gap is
/// then (||u||^p + t^p ||w||^p)^(2/p) - ||u||^2.
pub fn degenerate_pair(spec: GridSpec, t: f64) -> Result<(GridFunction, GridFunction)> {
    let l = spec.half_width();
    let bump = |x: f64, c: f64| {
        let s = (x - c) / (0.15 * l);
        (-s * s).exp()
    };
    let u = GridFunction::from_real_fn(spec, |x| if x[0] < 0.0 { bump(x[0], -0.5 * l) } else { 0.0 })?;
    let w = GridFunction::from_real_fn(spec, |x| if x[0] >= 0.0 { bump(x[0], 0.5 * l) } else { 0.0 })?;
    let f2 = u.add_scaled(Complex64::new(t, 0.0), &w)?;
    Ok((u, f2))
}

/// Witness for the pair of `degenerate_pair` with the gap in closed form:
/// the supports are disjoint, so the pairing term vanishes and
/// gap = ||u||^2 ((1 + t^p ||w||^p / ||u||^p)^(2/p) - 1), evaluated without
/// cancellation for tiny t.
pub fn degenerate_witness(spec: GridSpec, t: f64, p: f64) -> Result<ConvexityWitness> {
    ExponentPair::new(p)?;
    let (u, f2) = degenerate_pair(spec, t)?;
    let nu = u.lp_norm(p)?;
    let nw = f2.sub(&u)?.lp_norm(p)? / t;
    let x = (t * nw / nu).powf(p);
    let gap = nu * nu * ((2.0 / p) * x.ln_1p()).exp_m1();
    let nd = t * nw;
    let n2 = nu * (1.0 + x).powf(1.0 / p);
    let bound = convexity_bound(p, nu, n2, nd);
    Ok(ConvexityWitness {
        p,
        norm_f1: nu,
        norm_f2: n2,
        norm_diff: nd,
        gap,
        bound,
        margin: gap - bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom() -> GridSpec {
        // Two-point space with unit cell volume: counting measure.
        GridSpec::new(1, 2, 1.0).unwrap()
    }

    fn vec_fn(spec: GridSpec, v: &[f64]) -> GridFunction {
        GridFunction::new(spec, v.iter().map(|&x| Complex64::new(x, 0.0)).collect()).unwrap()
    }

    #[test]
    fn gradient_of_unit_vector_for_p4() {
        let spec = atom();
        // ||v||_{4/3} = 1 for v = (a, a) with 2 a^(4/3) = 1.
        let a = 0.5f64.powf(0.75);
        let v = vec_fn(spec, &[a, -a]);
        let g = grad_energy_dual(&v, 4.0).unwrap();
        for (gi, vi) in g.values().iter().zip(v.values()) {
            let expect = vi.re.abs().powf(1.0 / 3.0) * vi.re.signum();
            assert!((gi.re - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn p_two_gap_is_the_squared_distance() {
        let spec = GridSpec::new(1, 16, 1.0).unwrap();
        let f1 = GridFunction::from_real_fn(spec, |x| x[0].sin()).unwrap();
        let f2 = GridFunction::from_fn(spec, |x| Complex64::new(x[0], 0.3)).unwrap();
        let w = strong_convexity_gap(&f1, &f2, 2.0).unwrap();
        assert!((w.gap - w.norm_diff * w.norm_diff).abs() < 1e-12 * w.scale());
    }

    #[test]
    fn printed_holder_bracket_fails_on_an_antipodal_pair() {
        // On one atom of mass 1, g1 = 1 and g2 = -1 give ||grad E* diff||
        // = 2 while the printed bracket with R = 2 gives about 0.19.
        let spec = atom();
        let g1 = vec_fn(spec, &[1.0, 0.0]);
        let g2 = vec_fn(spec, &[-1.0, 0.0]);
        let printed = grad_continuity_ratio(&g1, &g2, 3.0, HolderBracket::AsPrinted { radius: 2.0 }).unwrap();
        assert!(printed > 6.0, "{printed}");
        let fixed = grad_continuity_ratio(&g1, &g2, 3.0, HolderBracket::Radius { radius: 2.0 }).unwrap();
        assert!(fixed <= 1.0, "{fixed}");
    }

    #[test]
    fn radius_precondition_is_enforced() {
        let spec = atom();
        let g1 = vec_fn(spec, &[3.0, 0.0]);
        let g2 = vec_fn(spec, &[0.0, 0.0]);
        assert!(matches!(
            grad_continuity_ratio(&g1, &g2, 4.0, HolderBracket::Radius { radius: 2.0 }),
            Err(Error::PreconditionViolated { .. })
        ));
    }

    #[test]
    fn clarkson_gap_vanishes_on_dual_pairs() {
        let spec = GridSpec::new(1, 32, 2.0).unwrap();
        let u0 = GridFunction::from_real_fn(spec, |x| (x[0] * 1.3).cos() + 0.2).unwrap();
        let u = u0.scale_real(1.0 / u0.lp_norm(3.0).unwrap());
        let v = grad_energy(&u, 3.0).unwrap();
        assert!(clarkson_unit_gap(&u, &v, 3.0).unwrap().abs() < 1e-13);
        let not_unit = u.scale_real(2.0);
        assert!(matches!(clarkson_unit_gap(&not_unit, &v, 3.0), Err(Error::NotUnit { .. })));
    }

    #[test]
    fn bad_exponents_are_rejected() {
        let f = GridFunction::zeros(atom());
        for p in [1.0, 0.5, f64::INFINITY, f64::NAN] {
            assert!(matches!(energy(&f, p), Err(Error::BadExponent { .. })));
        }
        assert_eq!(grad_energy(&f, 3.0).unwrap(), f);
    }
}
