//! Fractional Sobolev and Hardy-Littlewood-Sobolev functionals on periodic
//! grids, the bubble manifold h(a(x - x0)) with h = (1 + |x|^2)^(-(n-2a)/2),
//! deficits, distances to the optimizer manifolds, the dual transfer
//! inequality and the derived stability constants.
//!
//! F(f) = S |||f|||^2 with |||f||| = ||(-Lap)^(alpha/2) f||_2 and
//! E(f) = ||f||_p^2, p = 2n/(n - 2 alpha). The conjugates under the real
//! pairing are F*(g) = |||g|||_*^2 / S with |||g|||_* = ||(-Lap)^(-alpha/2) g||_2
//! and E*(g) = ||g||_{p'}^2. All multipliers use the cell-average zero mode
//! so that the discrete F and F* stay exactly conjugate.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{FreqMultiplier, GridFunction, GridSpec, ZeroModePolicy};
use crate::lp::{grad_energy, random_field};
use crate::numeric::{nelder_mead, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevSystem {
    n: usize,
    alpha: f64,
    p: f64,
    p_dual: f64,
    constant: f64,
}

impl SobolevSystem {
    pub fn new(n: usize, alpha: f64, constant: f64) -> Result<Self> {
        let nf = n as f64;
        if n == 0 || !(alpha > 0.0 && alpha < 0.5 * nf) {
            return Err(Error::BadExponent {
                value: alpha,
                reason: format!("need 0 < alpha < n/2 = {}", 0.5 * nf),
            });
        }
        if !(constant.is_finite() && constant > 0.0) {
            return Err(Error::BadInput(format!("Sobolev constant {constant} must be positive")));
        }
        Ok(Self {
            n,
            alpha,
            p: 2.0 * nf / (nf - 2.0 * alpha),
            p_dual: 2.0 * nf / (nf + 2.0 * alpha),
            constant,
        })
    }

    /// System whose constant is the grid Rayleigh quotient of h.
    pub fn on_grid(n: usize, alpha: f64, spec: GridSpec) -> Result<Self> {
        Self::new(n, alpha, 1.0)?;
        Self::new(n, alpha, sobolev_constant(n, alpha, spec)?)
    }

    pub fn with_constant(&self, constant: f64) -> Result<Self> {
        Self::new(self.n, self.alpha, constant)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p_dual(&self) -> f64 {
        self.p_dual
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// (n - 2 alpha) / (n + 2 alpha) = p' - 1.
    pub fn rho(&self) -> f64 {
        let n = self.n as f64;
        (n - 2.0 * self.alpha) / (n + 2.0 * self.alpha)
    }

    fn check(&self, spec: &GridSpec) -> Result<()> {
        if spec.dim() != self.n {
            return Err(Error::SpecMismatch(format!(
                "grid of dimension {} for a system in dimension {}",
                spec.dim(),
                self.n
            )));
        }
        Ok(())
    }

    fn multiplier(&self, exponent: f64) -> FreqMultiplier {
        FreqMultiplier::new(exponent, ZeroModePolicy::CellAverage)
    }

    /// |||f|||^2 = ||(-Lap)^(alpha/2) f||_2^2.
    pub fn seminorm_sq(&self, f: &GridFunction) -> Result<f64> {
        self.check(f.spec())?;
        f.multiplier_norm_sq(&self.multiplier(self.alpha))
    }

    /// |||g|||_*^2 = ||(-Lap)^(-alpha/2) g||_2^2.
    pub fn dual_seminorm_sq(&self, g: &GridFunction) -> Result<f64> {
        self.check(g.spec())?;
        g.multiplier_norm_sq(&self.multiplier(-self.alpha))
    }

    /// F(f) = S |||f|||^2.
    pub fn sobolev_form(&self, f: &GridFunction) -> Result<f64> {
        Ok(self.constant * self.seminorm_sq(f)?)
    }

    /// F*(g) = |||g|||_*^2 / S.
    pub fn hls_form(&self, g: &GridFunction) -> Result<f64> {
        Ok(self.dual_seminorm_sq(g)? / self.constant)
    }

    /// E(f) = ||f||_p^2.
    pub fn energy(&self, f: &GridFunction) -> Result<f64> {
        let v = f.lp_norm(self.p)?;
        Ok(v * v)
    }

    /// E*(g) = ||g||_{p'}^2.
    pub fn dual_energy(&self, g: &GridFunction) -> Result<f64> {
        let v = g.lp_norm(self.p_dual)?;
        Ok(v * v)
    }

    fn apply_squared(&self, f: &GridFunction, exponent: f64, scale: f64) -> Result<GridFunction> {
        self.check(f.spec())?;
        let w = self.multiplier(exponent).weights(f.spec())?;
        let mut coeffs = f.spectrum();
        for (c, wi) in coeffs.iter_mut().zip(&w) {
            *c *= scale * wi * wi;
        }
        GridFunction::from_spectrum(*f.spec(), coeffs)
    }

    /// grad F*(g) = S^-1 (-Lap)^(-alpha/2) (-Lap)^(-alpha/2) g.
    pub fn grad_hls_form(&self, g: &GridFunction) -> Result<GridFunction> {
        self.apply_squared(g, -self.alpha, 1.0 / self.constant)
    }

    /// grad F(f) = S (-Lap)^(alpha/2) (-Lap)^(alpha/2) f.
    pub fn grad_sobolev_form(&self, f: &GridFunction) -> Result<GridFunction> {
        self.apply_squared(f, self.alpha, self.constant)
    }

    /// h(r) = (1 + r^2)^(-(n - 2 alpha)/2).
    pub fn profile(&self, r2: f64) -> f64 {
        (1.0 + r2).powf(-0.5 * (self.n as f64 - 2.0 * self.alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleParams {
    #[serde(serialize_with = "serialize_complex")]
    pub z: Complex64,
    pub a: f64,
    pub center: Vec<f64>,
}

fn serialize_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

impl BubbleParams {
    pub fn new(z: Complex64, a: f64, center: Vec<f64>) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::BadInput("bubble needs finite z and a > 0".into()));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::BadInput("bubble center must be finite".into()));
        }
        Ok(Self { z, a, center })
    }

    pub fn unit(n: usize) -> Self {
        Self {
            z: Complex64::new(1.0, 0.0),
            a: 1.0,
            center: vec![0.0; n],
        }
    }

    /// Scale, center and amplitude drawn for test corpora: a log-uniform in
    /// [1/2, 2], centers uniform in the middle half of the box, |z| log-uniform
    /// in [1/2, 2] with a uniform phase.
    pub fn random<R: Rng>(n: usize, half_width: f64, rng: &mut R) -> Self {
        let a = (rng.random_range(-1.0..1.0) * std::f64::consts::LN_2).exp();
        let center = (0..n).map(|_| rng.random_range(-0.25..0.25) * 2.0 * half_width).collect();
        let modulus = (rng.random_range(-1.0..1.0) * std::f64::consts::LN_2).exp();
        let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        Self {
            z: Complex64::from_polar(modulus, phase),
            a,
            center,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bubble {
    pub function: GridFunction,
    /// The profile exceeds 1e-6 of its peak at the box edge.
    pub truncated: bool,
}

/// Samples z h(a(x - x0)) with periodic minimal-image distances.
pub fn bubble(params: &BubbleParams, sys: &SobolevSystem, spec: GridSpec) -> Result<Bubble> {
    sys.check(&spec)?;
    if params.center.len() != spec.dim() {
        return Err(Error::SpecMismatch("bubble center has the wrong dimension".into()));
    }
    let a2 = params.a * params.a;
    let values = (0..spec.len())
        .map(|i| {
            let d = spec.periodic_offset(&spec.node(i), &params.center);
            let r2: f64 = d[..spec.dim()].iter().map(|x| x * x).sum();
            params.z * sys.profile(a2 * r2)
        })
        .collect();
    let edge = sys.profile(a2 * spec.half_width() * spec.half_width());
    Ok(Bubble {
        function: GridFunction::new(spec, values)?,
        truncated: edge > 1e-6,
    })
}

/// Grid Rayleigh quotient ||h||_p^2 / |||h|||^2, accepted only when the
/// value on the grid refined to 2N per axis agrees within 0.1 %.
pub fn sobolev_constant(n: usize, alpha: f64, spec: GridSpec) -> Result<f64> {
    let probe = SobolevSystem::new(n, alpha, 1.0)?;
    let quotient = |s: GridSpec| -> Result<f64> {
        let h = bubble(&BubbleParams::unit(n), &probe, s)?.function;
        ensure_finite("Rayleigh quotient", probe.energy(&h)? / probe.seminorm_sq(&h)?)
    };
    let coarse = quotient(spec)?;
    let fine = quotient(GridSpec::new(spec.dim(), 2 * spec.points(), spec.half_width())?)?;
    let rel = (coarse - fine).abs() / fine;
    if rel > 1e-3 {
        return Err(Error::NotConverged {
            what: "Sobolev constant".into(),
            detail: format!("N and 2N quotients differ by {rel:e}"),
        });
    }
    Ok(coarse)
}

/// S |||f|||^2 - ||f||_p^2.
pub fn sobolev_deficit(f: &GridFunction, sys: &SobolevSystem) -> Result<f64> {
    ensure_finite("Sobolev deficit", sys.sobolev_form(f)? - sys.energy(f)?)
}

/// S ||g||_{p'}^2 - |||g|||_*^2.
pub fn hls_deficit(g: &GridFunction, sys: &SobolevSystem) -> Result<f64> {
    ensure_finite(
        "HLS deficit",
        sys.constant * sys.dual_energy(g)? - sys.dual_seminorm_sq(g)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormChoice {
    /// |||f - z b||| over primal bubbles.
    GradNorm,
    /// ||f - z b||_p over primal bubbles.
    LpNorm,
    /// ||g - z grad E(b)||_{p'} over dual bubbles.
    DualLpNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleFit {
    pub params: BubbleParams,
    pub distance: f64,
    /// Relative improvement achieved by the last restart from the optimum.
    pub certificate_gain: f64,
    pub converged: bool,
}

struct Fitter<'a> {
    f: &'a GridFunction,
    sys: &'a SobolevSystem,
    norm: NormChoice,
    spec: GridSpec,
}

impl Fitter<'_> {
    fn element(&self, a: f64, center: &[f64]) -> Result<GridFunction> {
        let params = BubbleParams {
            z: Complex64::new(1.0, 0.0),
            a,
            center: center.to_vec(),
        };
        let b = bubble(&params, self.sys, self.spec)?.function;
        match self.norm {
            NormChoice::DualLpNorm => grad_energy(&b, self.sys.p),
            _ => Ok(b),
        }
    }

    fn residual(&self, z: Complex64, e: &GridFunction) -> Result<f64> {
        let r = self.f.add_scaled(-z, e)?;
        match self.norm {
            NormChoice::GradNorm => Ok(self.sys.seminorm_sq(&r)?.max(0.0).sqrt()),
            NormChoice::LpNorm => r.lp_norm(self.sys.p),
            NormChoice::DualLpNorm => r.lp_norm(self.sys.p_dual),
        }
    }

    /// Least-squares amplitude: in the |||.||| inner product for GradNorm,
    /// in L^2 otherwise.
    fn amplitude(&self, e: &GridFunction) -> Result<Complex64> {
        let (num, den) = match self.norm {
            NormChoice::GradNorm => {
                let w = FreqMultiplier::new(self.sys.alpha, ZeroModePolicy::CellAverage).weights(&self.spec)?;
                let (fe, ee) = (self.f.spectrum(), e.spectrum());
                let mut num = Complex64::new(0.0, 0.0);
                let mut den = CompensatedSum::new();
                for ((a, b), wi) in fe.iter().zip(&ee).zip(&w) {
                    num += b.conj() * a * wi * wi;
                    den.add(b.norm_sqr() * wi * wi);
                }
                (num, den.value())
            }
            _ => {
                let mut num = Complex64::new(0.0, 0.0);
                let mut den = CompensatedSum::new();
                for (a, b) in self.f.values().iter().zip(e.values()) {
                    num += b.conj() * a;
                    den.add(b.norm_sqr());
                }
                (num, den.value())
            }
        };
        Ok(if den > 0.0 { num / den } else { Complex64::new(0.0, 0.0) })
    }

    /// For one scale, correlation of f with the element centred at every
    /// grid node, through one forward and one inverse transform.
    fn best_centers(&self, a: f64, keep: usize) -> Result<Vec<Vec<f64>>> {
        let zero = vec![0.0; self.spec.dim()];
        let e0 = self.element(a, &zero)?;
        let w: Vec<f64> = match self.norm {
            NormChoice::GradNorm => FreqMultiplier::new(self.sys.alpha, ZeroModePolicy::CellAverage)
                .weights(&self.spec)?
                .iter()
                .map(|w| w * w)
                .collect(),
            _ => vec![1.0; self.spec.len()],
        };
        let fe = self.f.spectrum();
        let ee = e0.spectrum();
        let cross: Vec<Complex64> = fe
            .iter()
            .zip(&ee)
            .zip(&w)
            .map(|((a, b), wi)| b.conj() * a * wi)
            .collect();
        let corr = GridFunction::from_spectrum(self.spec, cross)?;
        let mut order: Vec<usize> = (0..self.spec.len()).collect();
        order.sort_by(|&i, &j| corr.values()[j].norm().total_cmp(&corr.values()[i].norm()));
        let h = self.spec.spacing();
        let l = self.spec.half_width();
        Ok(order
            .into_iter()
            .take(keep)
            .map(|flat| {
                let idx = self.spec.multi_index(flat);
                (0..self.spec.dim())
                    .map(|d| {
                        let x = idx[d] as f64 * h;
                        if x >= l {
                            x - 2.0 * l
                        } else {
                            x
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Objective over the packed parameter vector
    /// [ln a, center..., (re z, im z) for the non-Hilbert norms].
    fn objective(&self, x: &[f64]) -> (f64, Complex64) {
        let n = self.spec.dim();
        let a = x[0].exp();
        if !(a.is_finite() && a > 1e-6 && a < 1e6) {
            return (f64::INFINITY, Complex64::new(0.0, 0.0));
        }
        let Ok(e) = self.element(a, &x[1..=n]) else {
            return (f64::INFINITY, Complex64::new(0.0, 0.0));
        };
        let z = match self.norm {
            NormChoice::GradNorm => match self.amplitude(&e) {
                Ok(z) => z,
                Err(_) => return (f64::INFINITY, Complex64::new(0.0, 0.0)),
            },
            _ => Complex64::new(x[n + 1], x[n + 2]),
        };
        (self.residual(z, &e).unwrap_or(f64::INFINITY), z)
    }

    fn refine(&self, x0: &[f64]) -> (Vec<f64>, f64) {
        let n = self.spec.dim();
        let a = x0[0].exp();
        let mut steps = vec![0.15];
        steps.extend(std::iter::repeat_n(0.5 / a, n));
        if x0.len() > n + 1 {
            let zmag = (x0[n + 1].hypot(x0[n + 2])).max(1e-3);
            steps.push(0.05 * zmag);
            steps.push(0.05 * zmag);
        }
        let r = nelder_mead(|x| self.objective(x).0, x0, &steps, 1e-13, 1e-9, 4000);
        (r.x, r.value)
    }
}

/// Distance from f to the bubble manifold (primal bubbles for GradNorm and
/// LpNorm, dual bubbles grad E(b) for DualLpNorm).
///
/// Coarse stage: 17 log-spaced scales over a in [1/8, 8] (about nine per
/// decade), every grid node as a candidate center through FFT correlation,
/// amplitude by least squares. The best candidates are refined with a
/// simplex search, then restarted from the optimum until a restart gains
/// less than 1e-6 relative.
pub fn dist_to_bubbles(f: &GridFunction, sys: &SobolevSystem, norm: NormChoice) -> Result<BubbleFit> {
    sys.check(f.spec())?;
    if f.lp_norm(f64::INFINITY)? == 0.0 {
        return Err(Error::DegenerateInput("distance of the zero function".into()));
    }
    let fitter = Fitter {
        f,
        sys,
        norm,
        spec: *f.spec(),
    };
    let n = f.spec().dim();
    let hilbert = norm == NormChoice::GradNorm;
    let scales = 17;
    let per_scale = if hilbert { 1 } else { 3 };
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for k in 0..scales {
        let a = (-(8f64.ln()) + 2.0 * 8f64.ln() * k as f64 / (scales - 1) as f64).exp();
        for center in fitter.best_centers(a, per_scale)? {
            let e = fitter.element(a, &center)?;
            let z = fitter.amplitude(&e)?;
            let d = fitter.residual(z, &e)?;
            let mut x = vec![a.ln()];
            x.extend(&center);
            if !hilbert {
                x.push(z.re);
                x.push(z.im);
            }
            candidates.push((d, x));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (_, x0) in candidates.iter().take(3) {
        let (x, v) = fitter.refine(x0);
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((x, v));
        }
    }
    let (mut x, mut value) = best.expect("at least one candidate");
    let mut gain = f64::INFINITY;
    let mut converged = false;
    for _ in 0..6 {
        let (x2, v2) = fitter.refine(&x);
        gain = if value > 0.0 { (value - v2).max(0.0) / value } else { 0.0 };
        if v2 < value {
            x = x2;
            value = v2;
        }
        if gain <= 1e-6 {
            converged = true;
            break;
        }
    }
    let (distance, z) = fitter.objective(&x);
    let mut center: Vec<f64> = x[1..=n].to_vec();
    let period = 2.0 * f.spec().half_width();
    for c in center.iter_mut() {
        *c -= period * (*c / period).round();
    }
    Ok(BubbleFit {
        params: BubbleParams {
            z,
            a: x[0].exp(),
            center,
        },
        distance,
        certificate_gain: gain,
        converged,
    })
}

/// Terms of the transfer inequality
/// E*(g) - F*(g) >= F(f) - E(f) + rho ||g - grad E(f)||_{p'}^2, f = grad F*(g).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferCheck {
    pub dual_deficit: f64,
    pub primal_deficit: f64,
    pub remainder: f64,
    /// dual_deficit - primal_deficit - remainder.
    pub slack: f64,
    /// F(f) + F*(g) - <f, g>, zero up to rounding.
    pub young_defect: f64,
    /// Magnitude for relative tolerances: E*(g) + F*(g).
    pub scale: f64,
}

pub fn transfer_inequality_check(g: &GridFunction, sys: &SobolevSystem) -> Result<TransferCheck> {
    if g.lp_norm(f64::INFINITY)? == 0.0 {
        return Err(Error::DegenerateInput("transfer check of the zero function".into()));
    }
    let f = sys.grad_hls_form(g)?;
    let e_star = sys.dual_energy(g)?;
    let f_star = sys.hls_form(g)?;
    let f_val = sys.sobolev_form(&f)?;
    let e_val = sys.energy(&f)?;
    let grad_e = grad_energy(&f, sys.p)?;
    let dist = g.sub(&grad_e)?.lp_norm(sys.p_dual)?;
    let remainder = sys.rho() * dist * dist;
    let dual_deficit = e_star - f_star;
    let primal_deficit = f_val - e_val;
    Ok(TransferCheck {
        dual_deficit,
        primal_deficit,
        remainder,
        slack: dual_deficit - primal_deficit - remainder,
        young_defect: f_val + f_star - f.pairing(g)?,
        scale: e_star + f_star,
    })
}

/// kappa* = (rho / 2) min(rho kappa / S, 1), conditional on the supplied kappa.
pub fn kappa_star(kappa_be: f64, sys: &SobolevSystem) -> Result<f64> {
    if !(kappa_be.is_finite() && kappa_be > 0.0) {
        return Err(Error::BadInput(format!("kappa_BE = {kappa_be} must be positive")));
    }
    let rho = sys.rho();
    Ok(0.5 * rho * (rho * kappa_be / sys.constant).min(1.0))
}

/// Constant in the local dual stability bound built from a local primal
/// constant lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalConstantForm {
    /// (rho / 2) min(4 lambda rho / S, 1), the stated form.
    AsStated,
    /// (rho / 2) min(lambda rho / S, 1): the same chain with Lipschitz
    /// constant 1/rho for grad E, which is what the L^{p'} smoothness gives.
    Lipschitz,
}

pub fn local_hls_constant(sys: &SobolevSystem, lambda: f64, form: LocalConstantForm) -> f64 {
    let rho = sys.rho();
    let factor = match form {
        LocalConstantForm::AsStated => 4.0,
        LocalConstantForm::Lipschitz => 1.0,
    };
    0.5 * rho * (factor * lambda * rho / sys.constant).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityConstants {
    /// Supplied hypothesis, not a computed value.
    pub kappa_be: f64,
    pub kappa_be_star: f64,
    pub local_r: f64,
    pub local_lambda: f64,
    pub local_hls: f64,
}

impl StabilityConstants {
    pub fn new(sys: &SobolevSystem, kappa_be: f64, local_r: f64, local_lambda: f64) -> Result<Self> {
        if !(local_r > 0.0 && local_lambda > 0.0) {
            return Err(Error::BadInput("local r and lambda must be positive".into()));
        }
        Ok(Self {
            kappa_be,
            kappa_be_star: kappa_star(kappa_be, sys)?,
            local_r,
            local_lambda,
            local_hls: local_hls_constant(sys, local_lambda, LocalConstantForm::AsStated),
        })
    }
}

/// Test-function families for deficit sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleFamily {
    /// Bubble plus a localized smooth perturbation of random relative size.
    PerturbedBubble,
    /// Random band-limited field under a Gaussian window.
    WindowedField,
    /// Two bubbles with independent parameters.
    BubblePair,
    /// Bubble times a random smooth modulation.
    ModulatedBubble,
}

impl SampleFamily {
    pub const ALL: [SampleFamily; 4] = [
        SampleFamily::PerturbedBubble,
        SampleFamily::WindowedField,
        SampleFamily::BubblePair,
        SampleFamily::ModulatedBubble,
    ];
}

fn windowed_field<R: Rng>(spec: GridSpec, rng: &mut R) -> Result<GridFunction> {
    let band = 1 + rng.random_range(0..(spec.points() / 64).clamp(4, 32));
    let field = random_field(spec, band, rng)?;
    let width = spec.half_width() * rng.random_range(0.05..0.3);
    let center: Vec<f64> = (0..spec.dim())
        .map(|_| rng.random_range(-0.3..0.3) * spec.half_width())
        .collect();
    let values = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = spec.periodic_offset(&spec.node(i), &center);
            let r2: f64 = d[..spec.dim()].iter().map(|x| x * x).sum();
            v * (-r2 / (2.0 * width * width)).exp()
        })
        .collect();
    GridFunction::new(spec, values)
}

/// Draws one test function from a family.
pub fn random_test_function<R: Rng>(
    family: SampleFamily,
    sys: &SobolevSystem,
    spec: GridSpec,
    rng: &mut R,
) -> Result<GridFunction> {
    let n = spec.dim();
    let l = spec.half_width();
    match family {
        SampleFamily::PerturbedBubble => {
            let b = bubble(&BubbleParams::random(n, l, rng), sys, spec)?.function;
            let w = windowed_field(spec, rng)?;
            let eps = (rng.random_range(-3.0..0.0) * std::f64::consts::LN_10).exp();
            let scale = eps * b.lp_norm(f64::INFINITY)? / w.lp_norm(f64::INFINITY)?.max(1e-300);
            b.add_scaled(Complex64::new(scale, 0.0), &w)
        }
        SampleFamily::WindowedField => windowed_field(spec, rng),
        SampleFamily::BubblePair => {
            let b1 = bubble(&BubbleParams::random(n, l, rng), sys, spec)?.function;
            let b2 = bubble(&BubbleParams::random(n, l, rng), sys, spec)?.function;
            b1.add(&b2)
        }
        SampleFamily::ModulatedBubble => {
            let b = bubble(&BubbleParams::random(n, l, rng), sys, spec)?.function;
            let m = random_field(spec, 1 + rng.random_range(0..8), rng)?;
            let amp = rng.random_range(0.05..0.9);
            let values = b
                .values()
                .iter()
                .zip(m.values())
                .map(|(bv, mv)| bv * (Complex64::new(1.0, 0.0) + mv * amp))
                .collect();
            GridFunction::new(spec, values)
        }
    }
}

/// Which side of the duality a local-stability sample probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalSide {
    Primal,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalSample {
    pub side: LocalSide,
    /// Relative perturbation size used to build the sample.
    pub epsilon: f64,
    pub distance: f64,
    /// |||f||| (primal) or ||g||_{p'} (dual).
    pub norm: f64,
    pub deficit: f64,
    /// Inside the statement gate (r for primal, r/2 and 2F* >= E* for dual).
    pub gated_in: bool,
    /// Inside the alternate dual gate r / sqrt 2 (equal to `gated_in` for primal).
    pub alt_gated_in: bool,
    /// deficit - c dist^2 with the stated constant (lambda for primal).
    pub margin: f64,
    /// The same with the Lipschitz form of the dual constant.
    pub margin_lipschitz: f64,
    /// Primal side of the proof chain at f = grad F*(g), S-scaled:
    /// F(f) - E(f) - lambda dist_grad(f)^2, divided by F(f).
    pub chain_margin_scaled: f64,
    /// Same with f = (-Lap)^-alpha g (no 1/S).
    pub chain_margin_unscaled: f64,
    /// Discretization floor |D(b)| + |D'(b)[f - b]| of the deficit D at the
    /// unperturbed bubble b (both terms vanish in the continuum).
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalReport {
    pub samples: Vec<LocalSample>,
    pub excluded_primal: usize,
    pub excluded_dual: usize,
    pub constant_as_stated: f64,
    pub constant_lipschitz: f64,
    /// True unless the system is alpha = 1 with n >= 3.
    pub extrapolated: bool,
}

fn perturbation<R: Rng>(spec: GridSpec, center: &[f64], a: f64, rng: &mut R) -> Result<GridFunction> {
    let band = 2 + rng.random_range(0..(spec.points() / 64).clamp(4, 24));
    let field = random_field(spec, band, rng)?;
    let width = 2.0 / a;
    let values = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = spec.periodic_offset(&spec.node(i), center);
            let r2: f64 = d[..spec.dim()].iter().map(|x| x * x).sum();
            v * (-r2 / (2.0 * width * width)).exp()
        })
        .collect();
    GridFunction::new(spec, values)
}

fn chain_margin(sys: &SobolevSystem, f: &GridFunction, lambda: f64) -> Result<f64> {
    let fv = sys.sobolev_form(f)?;
    let deficit = fv - sys.energy(f)?;
    let fit = dist_to_bubbles(f, sys, NormChoice::GradNorm)?;
    Ok((deficit - lambda * fit.distance * fit.distance) / fv)
}

/// Samples bubbles perturbed by eps in (1e-3 r, r) relative size on both
/// sides of the duality and evaluates the local stability inequalities.
/// The hypotheses (r, lambda) come from the caller; budgets are applied by
/// the caller as well.
pub fn local_stability_suite<R: Rng>(
    sys: &SobolevSystem,
    spec: GridSpec,
    r: f64,
    lambda: f64,
    samples: usize,
    rng: &mut R,
) -> Result<LocalReport> {
    let stated = local_hls_constant(sys, lambda, LocalConstantForm::AsStated);
    let lipschitz = local_hls_constant(sys, lambda, LocalConstantForm::Lipschitz);
    let mut out = Vec::new();
    let (mut excluded_primal, mut excluded_dual) = (0, 0);
    let n = spec.dim();
    for k in 0..2 * samples {
        let side = if k % 2 == 0 { LocalSide::Primal } else { LocalSide::Dual };
        // Unit scale: the grid constant is calibrated on a = 1, so the
        // bubble itself carries no dilation floor.
        let params = BubbleParams {
            a: 1.0,
            ..BubbleParams::random(n, spec.half_width(), rng)
        };
        let eps = r * (rng.random_range(-3.0..0.0) * std::f64::consts::LN_10).exp();
        let b = bubble(&params, sys, spec)?.function;
        let w = perturbation(spec, &params.center, params.a, rng)?;
        match side {
            LocalSide::Primal => {
                let scale = eps * sys.seminorm_sq(&b)?.sqrt() / sys.seminorm_sq(&w)?.sqrt();
                let dw = w.scale_real(scale);
                let f = b.add(&dw)?;
                let slope = sys.grad_sobolev_form(&b)?.sub(&grad_energy(&b, sys.p)?)?.pairing(&dw)?;
                let floor = sobolev_deficit(&b, sys)?.abs() + slope.abs();
                let norm = sys.seminorm_sq(&f)?.sqrt();
                let fit = dist_to_bubbles(&f, sys, NormChoice::GradNorm)?;
                let deficit = sobolev_deficit(&f, sys)?;
                let gated_in = fit.distance <= r * norm;
                if !gated_in {
                    excluded_primal += 1;
                }
                let margin = deficit - lambda * fit.distance * fit.distance;
                out.push(LocalSample {
                    side,
                    epsilon: eps,
                    distance: fit.distance,
                    norm,
                    deficit,
                    gated_in,
                    alt_gated_in: gated_in,
                    margin,
                    margin_lipschitz: margin,
                    chain_margin_scaled: f64::NAN,
                    chain_margin_unscaled: f64::NAN,
                    floor,
                });
            }
            LocalSide::Dual => {
                let g0 = grad_energy(&b, sys.p)?;
                let scale = eps * g0.lp_norm(sys.p_dual)? / w.lp_norm(sys.p_dual)?;
                let dw = w.scale_real(scale);
                let g = g0.add(&dw)?;
                let grad_dual_deficit = grad_energy(&g0, sys.p_dual)?.sub(&sys.grad_hls_form(&g0)?)?;
                let base = sys.dual_energy(&g0)? - sys.hls_form(&g0)?;
                let floor = base.abs() + grad_dual_deficit.pairing(&dw)?.abs();
                let norm = g.lp_norm(sys.p_dual)?;
                let e_star = norm * norm;
                let f_star = sys.hls_form(&g)?;
                let fit = dist_to_bubbles(&g, sys, NormChoice::DualLpNorm)?;
                let deficit = e_star - f_star;
                let energy_gate = 2.0 * f_star >= e_star;
                let gated_in = energy_gate && fit.distance <= 0.5 * r * norm;
                let alt_gated_in = energy_gate && fit.distance <= r * norm / 2f64.sqrt();
                if !gated_in {
                    excluded_dual += 1;
                }
                let d2 = fit.distance * fit.distance;
                let f_scaled = sys.grad_hls_form(&g)?;
                let f_unscaled = f_scaled.scale_real(sys.constant);
                out.push(LocalSample {
                    side,
                    epsilon: eps,
                    distance: fit.distance,
                    norm,
                    deficit,
                    gated_in,
                    alt_gated_in,
                    margin: deficit - stated * d2,
                    margin_lipschitz: deficit - lipschitz * d2,
                    chain_margin_scaled: chain_margin(sys, &f_scaled, lambda)?,
                    chain_margin_unscaled: chain_margin(sys, &f_unscaled, lambda)?,
                    floor,
                });
            }
        }
    }
    Ok(LocalReport {
        samples: out,
        excluded_primal,
        excluded_dual,
        constant_as_stated: stated,
        constant_lipschitz: lipschitz,
        extrapolated: !(sys.alpha == 1.0 && sys.n >= 3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys_1d() -> SobolevSystem {
        SobolevSystem::new(1, 0.25, 1.0).unwrap()
    }

    #[test]
    fn exponents_are_conjugate() {
        let s = sys_1d();
        assert_eq!(s.p(), 4.0);
        assert!((1.0 / s.p() + 1.0 / s.p_dual() - 1.0).abs() < 1e-15);
        assert!(SobolevSystem::new(1, 0.5, 1.0).is_err());
        assert!(SobolevSystem::new(3, 0.0, 1.0).is_err());
    }

    #[test]
    fn unit_bubble_peaks_at_one() {
        let spec = GridSpec::new(1, 64, 8.0).unwrap();
        let b = bubble(&BubbleParams::unit(1), &sys_1d(), spec).unwrap();
        assert_eq!(b.function.values()[32].re, 1.0);
        assert!(b.truncated);
        let zero = BubbleParams::new(Complex64::new(0.0, 0.0), 1.0, vec![0.0]).unwrap();
        let b0 = bubble(&zero, &sys_1d(), spec).unwrap();
        assert!(b0.function.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn bubble_matches_closed_form() {
        let spec = GridSpec::new(1, 256, 20.0).unwrap();
        let params = BubbleParams::new(Complex64::new(2.0, 0.0), 3.0, vec![1.0]).unwrap();
        let b = bubble(&params, &sys_1d(), spec).unwrap();
        for (i, v) in b.function.values().iter().enumerate() {
            let mut d = spec.node(i)[0] - 1.0;
            if d < -20.0 {
                d += 40.0;
            }
            let exact = 2.0 * (1.0 + 9.0 * d * d).powf(-0.25);
            assert!((v.re - exact).abs() <= 1e-14 * exact.max(1.0));
        }
    }

    #[test]
    fn kappa_star_branches() {
        let sys = SobolevSystem::new(1, 0.25, 1.18).unwrap();
        let rho = sys.rho();
        let clamp = sys.constant() / rho;
        let lin = 0.5 * rho * rho * clamp / sys.constant();
        assert!((kappa_star(clamp, &sys).unwrap() - lin).abs() < 1e-14);
        assert_eq!(kappa_star(1e12, &sys).unwrap(), 0.5 * rho);
        let small = 1e-3;
        let expect = 0.5 * rho * rho * small / sys.constant();
        assert!((kappa_star(small, &sys).unwrap() - expect).abs() < 1e-18);
        assert!(matches!(kappa_star(0.0, &sys), Err(Error::BadInput(_))));
        assert_eq!(
            kappa_star(0.1, &sys).unwrap().to_bits(),
            kappa_star(0.1, &sys).unwrap().to_bits()
        );
    }

    #[test]
    fn zero_has_zero_deficits() {
        let spec = GridSpec::new(1, 64, 8.0).unwrap();
        let z = GridFunction::zeros(spec);
        assert_eq!(sobolev_deficit(&z, &sys_1d()).unwrap(), 0.0);
        assert_eq!(hls_deficit(&z, &sys_1d()).unwrap(), 0.0);
        assert!(matches!(
            dist_to_bubbles(&z, &sys_1d(), NormChoice::GradNorm),
            Err(Error::DegenerateInput(_))
        ));
    }
}
