//! Rescaled fast diffusion v_t = beta Lap v^m + div(x v) for radial
//! densities, written as v_t = div(v grad P) with pressure
//! P = beta m/(m-1) v^(m-1) + r^2/2. The Barenblatt profile makes P
//! constant, so it is an exact fixed point of the discrete scheme.
//!
//! Time stepping linearizes P implicitly around the current state
//! (dP/dv = beta m v^(m-2)) with upwinded face densities, which gives one
//! tridiagonal solve per step. The node beyond R_max is pinned to the
//! Barenblatt tail of the same mass.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, solve_tridiagonal, CompensatedSum};
use crate::radial::{lift, radial_sobolev_deficit, PowerTail, RadialGrid, RadialProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub n: usize,
    pub m: f64,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: f64,
    pub mass: f64,
    pub points: usize,
    pub r_max: f64,
    /// Start of the window on which the sandwich constant is measured.
    pub sandwich_from: f64,
    /// Per-step clipped mass allowed, relative to the total mass.
    pub clip_limit: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 2.0 / 3.0,
            dt: 5e-4,
            t_end: 5.0,
            sample_every: 0.1,
            mass: 2.0 * std::f64::consts::PI * std::f64::consts::PI,
            points: 2048,
            r_max: 45.0,
            sandwich_from: 2.5,
            clip_limit: 1e-8,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let nf = self.n as f64;
        if self.n < 3 {
            return Err(Error::BadInput("fast diffusion needs n >= 3".into()));
        }
        if !(self.m > 1.0 - 2.0 / nf && self.m < 1.0) {
            return Err(Error::BadExponent {
                value: self.m,
                reason: format!("need 1 - 2/n < m < 1 for n = {}", self.n),
            });
        }
        let positive = [self.dt, self.t_end, self.sample_every, self.mass, self.r_max];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::BadInput("dt, t_end, sample_every, mass and R_max must be positive".into()));
        }
        if self.sample_every < self.dt {
            return Err(Error::BadInput("sampling interval shorter than dt".into()));
        }
        RadialGrid::new(self.n, self.points, self.r_max)?;
        Ok(())
    }

    /// beta = 2 - n(1 - m).
    pub fn beta(&self) -> f64 {
        2.0 - self.n as f64 * (1.0 - self.m)
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.n, self.points, self.r_max)
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarenblattParams {
    pub mass: f64,
    pub d: f64,
    pub n: usize,
    pub m: f64,
}

impl BarenblattParams {
    /// (1 - m) / (2 beta m).
    pub fn c(&self) -> f64 {
        let beta = 2.0 - self.n as f64 * (1.0 - self.m);
        (1.0 - self.m) / (2.0 * beta * self.m)
    }

    pub fn tail(&self) -> PowerTail {
        PowerTail {
            d: self.d,
            c: self.c(),
            exponent: 1.0 / (1.0 - self.m),
        }
    }

    /// D(M) by geometric bisection on the total mass (grid cells plus the
    /// analytic exterior), to 1e-12 relative in D.
    pub fn fit(cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let mass_of = |d: f64| -> f64 {
            let p = Self {
                mass: cfg.mass,
                d,
                n: cfg.n,
                m: cfg.m,
            };
            barenblatt(&p, grid).map(|v| v.mass()).unwrap_or(f64::NAN)
        };
        let d = bisect(|d| mass_of(d) - cfg.mass, 1e-8, 1e8, true, 200)?;
        Ok(Self {
            mass: cfg.mass,
            d,
            n: cfg.n,
            m: cfg.m,
        })
    }
}

pub fn barenblatt(params: &BarenblattParams, grid: RadialGrid) -> Result<RadialProfile> {
    let tail = params.tail();
    RadialProfile::from_fn(grid, |r| tail.value(r), Some(tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub clipped: f64,
    /// Explicit diffusive limit 0.25 dr^2 / (beta max m v^(m-1)) at this state.
    pub diffusive_dt: f64,
}

/// One linearly implicit step. Without an exterior the outer face is no-flux.
pub fn step(v: &RadialProfile, cfg: &FlowConfig, t: f64) -> Result<(RadialProfile, StepStats)> {
    let grid = *v.grid();
    let k = grid.points();
    let dr = grid.dr();
    let r = grid.nodes();
    let vol = grid.volumes();
    let area = grid.face_areas();
    let beta = cfg.beta();
    let m = cfg.m;
    let vmax = v.values().iter().cloned().fold(0.0, f64::max);
    let floor = 1e-12 * vmax.max(f64::MIN_POSITIVE);
    let vv: Vec<f64> = v.values().iter().map(|x| x.max(floor)).collect();
    let pressure = |x: f64, rr: f64| beta * m / (m - 1.0) * x.powf(m - 1.0) + 0.5 * rr * rr;
    let p: Vec<f64> = vv.iter().zip(&r).map(|(x, rr)| pressure(*x, *rr)).collect();
    let dpdv: Vec<f64> = vv.iter().map(|x| beta * m * x.powf(m - 2.0)).collect();
    let ghost = v.exterior().map(|tail| {
        let g = tail.value(grid.ghost());
        (g, pressure(g, grid.ghost()))
    });

    // Conductance at the face right of node i (the last one leads to the ghost).
    let mut right = vec![0.0; k];
    let mut pjump = vec![0.0; k];
    for i in 0..k {
        let (vn, pn) = if i + 1 < k {
            (vv[i + 1], p[i + 1])
        } else if let Some(g) = ghost {
            g
        } else {
            continue;
        };
        let jump = pn - p[i];
        let upwind = if jump < 0.0 { vv[i] } else { vn };
        right[i] = area[i + 1] * upwind / dr;
        pjump[i] = jump;
    }
    let mut lower = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        let left = if i > 0 { right[i - 1] } else { 0.0 };
        let left_jump = if i > 0 { pjump[i - 1] } else { 0.0 };
        rhs[i] = right[i] * pjump[i] - left * left_jump;
        diag[i] = vol[i] / cfg.dt + (right[i] + left) * dpdv[i];
        if i + 1 < k {
            upper[i] = -right[i] * dpdv[i + 1];
        }
        if i > 0 {
            lower[i] = -left * dpdv[i - 1];
        }
    }
    let dv = solve_tridiagonal(&lower, &diag, &upper, &rhs);
    let mut clipped = CompensatedSum::new();
    let mut next = Vec::with_capacity(k);
    for i in 0..k {
        let x = v.values()[i] + dv[i];
        if !x.is_finite() {
            return Err(Error::StabilityViolation {
                t,
                detail: format!("non-finite density at node {i}"),
            });
        }
        if x < 0.0 {
            clipped.add(-x * vol[i]);
        }
        next.push(x.max(0.0));
    }
    let clipped = clipped.value();
    let limit = cfg.clip_limit * cfg.mass;
    if clipped > limit {
        return Err(Error::NegativityClipExceeded { clipped, limit });
    }
    let stiff = vv.iter().map(|x| m * x.powf(m - 1.0)).fold(0.0, f64::max);
    Ok((
        RadialProfile::new(grid, next, v.exterior())?,
        StepStats {
            clipped,
            diffusive_dt: 0.25 * dr * dr / (beta * stiff),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSample {
    pub t: f64,
    pub mass: f64,
    pub deficit: f64,
    pub l1_dist_to_barenblatt: f64,
    pub min_v: f64,
    pub clipped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<FlowSample>,
    /// max over t >= sandwich_from of max(v / v_inf, v_inf / v) on the grid.
    pub sandwich: f64,
    pub total_clipped: f64,
    pub min_diffusive_dt: f64,
    /// The Sobolev constant used for the deficit.
    pub constant: f64,
}

impl Trajectory {
    /// Largest rise of the deficit between consecutive samples, with its times.
    pub fn max_increase(&self) -> (f64, f64, f64) {
        let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
        for w in self.samples.windows(2) {
            let rise = w[1].deficit - w[0].deficit;
            if rise > worst.0 {
                worst = (rise, w[0].t, w[1].t);
            }
        }
        worst
    }

    pub fn check_monotone(&self, budget: f64) -> Result<()> {
        let (increase, t0, t1) = self.max_increase();
        if increase > budget {
            return Err(Error::MonotonicityViolation {
                t0,
                t1,
                increase,
                budget,
            });
        }
        Ok(())
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.samples[0].mass;
        self.samples
            .iter()
            .map(|s| (s.mass - m0).abs() / m0)
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::fs::File::create(path)?;
        writeln!(w, "t,mass,deficit,l1_dist_to_barenblatt,min_v,clipped_mass")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e}",
                s.t, s.mass, s.deficit, s.l1_dist_to_barenblatt, s.min_v, s.clipped_mass
            )?;
        }
        Ok(())
    }
}

/// Integrates from v0 to t_end against the Barenblatt profile of the
/// configured mass, sampling the lifted deficit with Sobolev constant s.
pub fn run_flow(v0: &RadialProfile, cfg: &FlowConfig, s: f64) -> Result<Trajectory> {
    cfg.validate()?;
    let params = BarenblattParams::fit(cfg)?;
    let steady = barenblatt(&params, *v0.grid())?;
    let per_sample = (cfg.sample_every / cfg.dt).round() as usize;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut v = v0.clone();
    let mut samples = Vec::new();
    let mut sandwich: f64 = 1.0;
    let mut total_clipped = 0.0;
    let mut window_clipped = 0.0;
    let mut min_dt = f64::INFINITY;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if k % per_sample == 0 {
            samples.push(FlowSample {
                t,
                mass: v.mass(),
                deficit: radial_sobolev_deficit(&lift(&v)?, s)?.deficit,
                l1_dist_to_barenblatt: v.l1_distance(&steady)?,
                min_v: v.values().iter().cloned().fold(f64::INFINITY, f64::min),
                clipped_mass: window_clipped,
            });
            window_clipped = 0.0;
        }
        if t >= cfg.sandwich_from - 0.5 * cfg.dt {
            for (a, b) in v.values().iter().zip(steady.values()) {
                let ratio = a / b;
                sandwich = sandwich.max(ratio).max(1.0 / ratio);
            }
        }
        if k < steps {
            let (next, stats) = step(&v, cfg, t)?;
            total_clipped += stats.clipped;
            window_clipped += stats.clipped;
            min_dt = min_dt.min(stats.diffusive_dt);
            v = next;
        }
    }
    Ok(Trajectory {
        samples,
        sandwich,
        total_clipped,
        min_diffusive_dt: min_dt,
        constant: s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMember {
    Steady,
    PerturbedD,
    Dilated,
    Bump,
    Shell,
}

impl CorpusMember {
    pub const ALL: [CorpusMember; 5] = [
        CorpusMember::Steady,
        CorpusMember::PerturbedD,
        CorpusMember::Dilated,
        CorpusMember::Bump,
        CorpusMember::Shell,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorpusMember::Steady => "steady",
            CorpusMember::PerturbedD => "perturbed_d",
            CorpusMember::Dilated => "dilated",
            CorpusMember::Bump => "bump",
            CorpusMember::Shell => "shell",
        }
    }
}

/// Smooth cutoff: 1 below r0, 0 above r1, cosine blend in between.
fn blend(r: f64, r0: f64, r1: f64) -> f64 {
    if r <= r0 {
        1.0
    } else if r >= r1 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (r - r0) / (r1 - r0)).cos())
    }
}

/// Initial datum for a corpus member. Non-steady members are a core shape
/// blended into the Barenblatt tail over r in [10, 15], with a floor of
/// 1e-3 times the Barenblatt profile, and the core amplitude solved so that
/// the total mass equals the configured mass.
pub fn corpus_member(member: CorpusMember, cfg: &FlowConfig) -> Result<RadialProfile> {
    let params = BarenblattParams::fit(cfg)?;
    let grid = cfg.grid()?;
    let steady = barenblatt(&params, grid)?;
    let tail = params.tail();
    let core: Box<dyn Fn(f64) -> f64> = match member {
        CorpusMember::Steady => return Ok(steady),
        CorpusMember::PerturbedD => {
            let t = PowerTail { d: 0.6 * params.d, ..tail };
            Box::new(move |r| t.value(r))
        }
        CorpusMember::Dilated => Box::new(move |r| tail.value(r / 1.5)),
        CorpusMember::Bump => Box::new(|r: f64| {
            let s = 1.0 - r * r / 16.0;
            if s > 0.0 {
                s * s * s
            } else {
                0.0
            }
        }),
        CorpusMember::Shell => Box::new(|r: f64| (-(r - 2.5) * (r - 2.5) / 0.5).exp()),
    };
    let floor = 1e-3;
    let nodes = grid.nodes();
    let chi: Vec<f64> = nodes.iter().map(|r| blend(*r, 10.0, 15.0)).collect();
    let shaped: Vec<f64> = nodes.iter().zip(&chi).map(|(r, c)| c * core(*r)).collect();
    let base: Vec<f64> = nodes
        .iter()
        .zip(&chi)
        .map(|(r, c)| ((1.0 - c) + c * floor) * tail.value(*r))
        .collect();
    let shaped_mass = RadialProfile::new(grid, shaped.clone(), None)?.mass();
    let base_mass = RadialProfile::new(grid, base.clone(), Some(tail))?.mass();
    let lambda = (cfg.mass - base_mass) / shaped_mass;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::BadInput(format!("{} cannot carry mass {}", member.name(), cfg.mass)));
    }
    let values = shaped.iter().zip(&base).map(|(s, b)| lambda * s + b).collect();
    RadialProfile::new(grid, values, Some(tail))
}
