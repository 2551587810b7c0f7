//! Convex duality on the real line with tabulated convex functions.
//!
//! A [`TabulatedConvexFn`] is the piecewise-linear interpolant of its finite
//! knot values. Outside the finite block it is either +inf (a wall) or
//! continues affinely with a prescribed slope. Conjugates are evaluated
//! exactly for that piecewise-linear model, which keeps Young's inequality
//! free of interpolation error: the supremum of x y - f(x) over a
//! piecewise-linear f is attained at a knot.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Behaviour beyond the outermost finite knot on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Tail {
    Wall,
    Slope(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedConvexFn {
    knots: Vec<f64>,
    values: Vec<Option<f64>>,
    left: Tail,
    right: Tail,
    first: usize,
    last: usize,
}

/// Closed interval [lo, hi] of slopes; infinite ends mark walls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientSet {
    pub lo: f64,
    pub hi: f64,
}

impl SubgradientSet {
    pub fn point(s: f64) -> Self {
        Self { lo: s, hi: s }
    }

    pub fn distance(&self, y: f64) -> f64 {
        if y < self.lo {
            self.lo - y
        } else if y > self.hi {
            y - self.hi
        } else {
            0.0
        }
    }

    pub fn contains(&self, y: f64, tol: f64) -> bool {
        self.distance(y) <= tol
    }

    /// Point of the set closest to y.
    pub fn nearest(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }

    pub fn is_subset_of(&self, other: &SubgradientSet, tol: f64) -> bool {
        self.lo >= other.lo - tol && self.hi <= other.hi + tol
    }
}

fn slope_tol(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

impl TabulatedConvexFn {
    /// `values[i] = None` encodes +inf. Finite values must form one
    /// contiguous block, slopes must be non-decreasing, and a slope tail
    /// requires the adjacent end knot to be finite.
    pub fn new(knots: Vec<f64>, values: Vec<Option<f64>>, left: Tail, right: Tail) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidTable("knots and values must be non-empty and of equal length".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTable("knots must be finite and strictly increasing".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTable("finite values must not be NaN".into()));
        }
        let first = values.iter().position(|v| v.is_some()).ok_or(Error::EmptyDomain)?;
        let last = values.iter().rposition(|v| v.is_some()).ok_or(Error::EmptyDomain)?;
        if values[first..=last].iter().any(|v| v.is_none()) {
            return Err(Error::InvalidTable("effective domain must be an interval".into()));
        }
        if matches!(left, Tail::Slope(_)) && first != 0 {
            return Err(Error::InvalidTable("slope tail attached to an infinite end knot".into()));
        }
        if matches!(right, Tail::Slope(_)) && last != knots.len() - 1 {
            return Err(Error::InvalidTable("slope tail attached to an infinite end knot".into()));
        }
        let f = Self {
            knots,
            values,
            left,
            right,
            first,
            last,
        };
        let slopes = f.segment_slopes();
        let scale = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let mut chain = Vec::with_capacity(slopes.len() + 2);
        if let Tail::Slope(s) = left {
            chain.push(s);
        }
        chain.extend_from_slice(&slopes);
        if let Tail::Slope(s) = right {
            chain.push(s);
        }
        for w in chain.windows(2) {
            if w[1] < w[0] - slope_tol(scale.max(w[0].abs())) {
                return Err(Error::InvalidTable(format!(
                    "slopes decrease from {} to {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(f)
    }

    /// Function equal to +inf outside the knot range; `f64::INFINITY`
    /// entries become +inf knots.
    pub fn closed(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let vals = values
            .into_iter()
            .map(|v| if v == f64::INFINITY { None } else { Some(v) })
            .collect();
        Self::new(knots, vals, Tail::Wall, Tail::Wall)
    }

    /// Samples `f` and walls off the outside of the knot range.
    pub fn sample<F: Fn(f64) -> f64>(knots: Vec<f64>, f: F) -> Result<Self> {
        let values = knots.iter().map(|&x| f(x)).collect();
        Self::closed(knots, values)
    }

    /// Samples `f` and continues it affinely with the end-segment slopes.
    pub fn sample_with_affine_tails<F: Fn(f64) -> f64>(knots: Vec<f64>, f: F) -> Result<Self> {
        let values: Vec<f64> = knots.iter().map(|&x| f(x)).collect();
        let m = knots.len();
        if m < 2 {
            return Err(Error::InvalidTable("affine tails need two knots".into()));
        }
        let left = (values[1] - values[0]) / (knots[1] - knots[0]);
        let right = (values[m - 1] - values[m - 2]) / (knots[m - 1] - knots[m - 2]);
        Self::new(
            knots,
            values.into_iter().map(Some).collect(),
            Tail::Slope(left),
            Tail::Slope(right),
        )
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn tails(&self) -> (Tail, Tail) {
        (self.left, self.right)
    }

    /// Knots with finite values.
    pub fn finite_knots(&self) -> &[f64] {
        &self.knots[self.first..=self.last]
    }

    fn finite_value(&self, i: usize) -> f64 {
        self.values[i].expect("index inside the finite block")
    }

    /// Slopes of the segments between consecutive finite knots.
    pub fn segment_slopes(&self) -> Vec<f64> {
        (self.first..self.last)
            .map(|i| {
                (self.finite_value(i + 1) - self.finite_value(i)) / (self.knots[i + 1] - self.knots[i])
            })
            .collect()
    }

    /// Effective domain as a closed interval (infinite ends for slope tails).
    pub fn domain(&self) -> (f64, f64) {
        let lo = match self.left {
            Tail::Wall => self.knots[self.first],
            Tail::Slope(_) => f64::NEG_INFINITY,
        };
        let hi = match self.right {
            Tail::Wall => self.knots[self.last],
            Tail::Slope(_) => f64::INFINITY,
        };
        (lo, hi)
    }

    /// Largest knot spacing inside the finite block.
    pub fn max_spacing(&self) -> f64 {
        self.finite_knots()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Value at x; `None` is +inf.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let a = self.knots[self.first];
        let b = self.knots[self.last];
        if x < a {
            return match self.left {
                Tail::Wall => None,
                Tail::Slope(s) => Some(self.finite_value(self.first) + s * (x - a)),
            };
        }
        if x > b {
            return match self.right {
                Tail::Wall => None,
                Tail::Slope(s) => Some(self.finite_value(self.last) + s * (x - b)),
            };
        }
        let k = &self.knots[self.first..=self.last];
        let j = k.partition_point(|&t| t <= x);
        if j == 0 {
            return Some(self.finite_value(self.first));
        }
        let i = self.first + j - 1;
        if i == self.last || self.knots[i] == x {
            return Some(self.finite_value(i));
        }
        let t = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        Some(self.finite_value(i) * (1.0 - t) + self.finite_value(i + 1) * t)
    }

    /// Exact conjugate sup_x (x y - f(x)) of the piecewise-linear model.
    pub fn conjugate_at(&self, y: f64) -> Option<f64> {
        if let Tail::Slope(s) = self.left {
            if y < s {
                return None;
            }
        }
        if let Tail::Slope(s) = self.right {
            if y > s {
                return None;
            }
        }
        let best = (self.first..=self.last)
            .map(|i| self.knots[i] * y - self.finite_value(i))
            .fold(f64::NEG_INFINITY, f64::max);
        Some(best)
    }

    /// The subdifferential of the conjugate at y, i.e. the closed hull of
    /// maximizers of x y - f(x). `None` when the conjugate is +inf at y.
    pub fn conjugate_subgradient(&self, y: f64) -> Option<SubgradientSet> {
        let best = self.conjugate_at(y)?;
        let scale = (self.first..=self.last)
            .map(|i| (self.knots[i] * y).abs() + self.finite_value(i).abs())
            .fold(1.0, f64::max);
        let tol = 1e-12 * scale;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in self.first..=self.last {
            if self.knots[i] * y - self.finite_value(i) >= best - tol {
                lo = lo.min(self.knots[i]);
                hi = hi.max(self.knots[i]);
            }
        }
        if let Tail::Slope(s) = self.left {
            if y == s {
                lo = f64::NEG_INFINITY;
            }
        }
        if let Tail::Slope(s) = self.right {
            if y == s {
                hi = f64::INFINITY;
            }
        }
        Some(SubgradientSet { lo, hi })
    }

    /// Subdifferential at x. Errors with `OutOfDomain` when f(x) = +inf.
    pub fn subgradient(&self, x: f64) -> Result<SubgradientSet> {
        if self.eval(x).is_none() {
            return Err(Error::OutOfDomain { x });
        }
        let a = self.knots[self.first];
        let b = self.knots[self.last];
        let tail_slope = |t: Tail, wall: f64| match t {
            Tail::Wall => wall,
            Tail::Slope(s) => s,
        };
        if x < a {
            return Ok(SubgradientSet::point(tail_slope(self.left, f64::NAN)));
        }
        if x > b {
            return Ok(SubgradientSet::point(tail_slope(self.right, f64::NAN)));
        }
        let slopes = self.segment_slopes();
        let k = &self.knots[self.first..=self.last];
        let pos = k.partition_point(|&t| t < x);
        if pos < k.len() && k[pos] == x {
            let lo = if pos == 0 {
                tail_slope(self.left, f64::NEG_INFINITY)
            } else {
                slopes[pos - 1]
            };
            let hi = if pos == k.len() - 1 {
                tail_slope(self.right, f64::INFINITY)
            } else {
                slopes[pos]
            };
            return Ok(SubgradientSet { lo, hi });
        }
        Ok(SubgradientSet::point(slopes[pos - 1]))
    }

    /// Range of slopes realised by the function, tails included.
    pub fn slope_range(&self) -> (f64, f64) {
        let slopes = self.segment_slopes();
        let mut lo = slopes.first().copied().unwrap_or(0.0);
        let mut hi = slopes.last().copied().unwrap_or(0.0);
        if let Tail::Slope(s) = self.left {
            lo = lo.min(s);
        }
        if let Tail::Slope(s) = self.right {
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// Uniform dual knots spanning the slope range, as many as primal knots.
    pub fn default_dual_knots(&self) -> Vec<f64> {
        let (mut lo, mut hi) = self.slope_range();
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let m = self.knots.len().max(3);
        (0..m)
            .map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64)
            .collect()
    }

    /// Conjugate tabulated on `dual_knots`. A wall on one side of f becomes
    /// an affine tail of the conjugate with slope equal to the end of the
    /// domain, and an affine tail of f becomes a wall.
    pub fn legendre(&self, dual_knots: &[f64]) -> Result<TabulatedConvexFn> {
        let values: Vec<Option<f64>> = dual_knots.iter().map(|&y| self.conjugate_at(y)).collect();
        if values.iter().all(|v| v.is_none()) {
            return Err(Error::EmptyDomain);
        }
        let end = values.len() - 1;
        let left = match self.left {
            Tail::Wall if values[0].is_some() => Tail::Slope(self.knots[self.first]),
            _ => Tail::Wall,
        };
        let right = match self.right {
            Tail::Wall if values[end].is_some() => Tail::Slope(self.knots[self.last]),
            _ => Tail::Wall,
        };
        TabulatedConvexFn::new(dual_knots.to_vec(), values, left, right)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["knot", "value"])?;
        if let Tail::Slope(s) = self.left {
            w.write_record(["-inf", &format!("{s:e}")])?;
        }
        for (k, v) in self.knots.iter().zip(&self.values) {
            let val = v.map_or_else(|| "inf".to_string(), |v| format!("{v:e}"));
            w.write_record([format!("{k:e}"), val])?;
        }
        if let Tail::Slope(s) = self.right {
            w.write_record(["inf", &format!("{s:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`TabulatedConvexFn::write_csv`]: rows of
    /// (knot, value) with `inf` for +inf, plus optional `-inf` / `inf` knot
    /// rows carrying tail slopes.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidTable(format!("{s}: {e}")))
        };
        let (mut knots, mut values) = (Vec::new(), Vec::new());
        let (mut left, mut right) = (Tail::Wall, Tail::Wall);
        for rec in r.records() {
            let rec = rec?;
            let (k, v) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            match k.trim() {
                "-inf" => left = Tail::Slope(parse(v)?),
                "inf" => right = Tail::Slope(parse(v)?),
                _ => {
                    knots.push(parse(k)?);
                    values.push(if v.trim() == "inf" { None } else { Some(parse(v)?) });
                }
            }
        }
        Self::new(knots, values, left, right)
    }
}

/// Sup-distance between f and its biconjugate over the interior finite
/// knots of f, using the default dual knots.
pub fn biconjugate_check(f: &TabulatedConvexFn) -> Result<f64> {
    let dual = f.legendre(&f.default_dual_knots())?;
    let finite = f.finite_knots();
    let interior: &[f64] = if finite.len() > 2 {
        &finite[1..finite.len() - 1]
    } else {
        finite
    };
    let mut worst = 0.0f64;
    for &x in interior {
        let fx = f.eval(x).expect("finite knot");
        match dual.conjugate_at(x) {
            Some(v) => worst = worst.max((v - fx).abs()),
            None => return Ok(f64::INFINITY),
        }
    }
    Ok(worst)
}

/// f(x) + f*(y) - x y; +inf when f*(y) = +inf.
pub fn young_gap(f: &TabulatedConvexFn, x: f64, y: f64) -> Result<f64> {
    let fx = f.eval(x).ok_or(Error::OutOfDomain { x })?;
    Ok(match f.conjugate_at(y) {
        Some(c) => fx + c - x * y,
        None => f64::INFINITY,
    })
}

/// Candidate lower bounds for the Young gap of a doubly convex function:
/// phi_dual(|y - nearest subgradient of f at x|) and
/// phi_primal(|x - nearest subgradient of f* at y|).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoungRemainders {
    pub gap: f64,
    pub dual_side: f64,
    pub primal_side: f64,
}

pub fn young_remainders(
    f: &TabulatedConvexFn,
    x: f64,
    y: f64,
    phi_primal: &RateFn,
    phi_dual: &RateFn,
) -> Result<YoungRemainders> {
    let gap = young_gap(f, x, y)?;
    let dy = f.subgradient(x)?.distance(y);
    let dx = f
        .conjugate_subgradient(y)
        .map(|s| s.distance(x))
        .unwrap_or(f64::INFINITY);
    let eval = |phi: &RateFn, d: f64| -> f64 {
        if d.is_finite() {
            phi.eval_extended(d)
        } else {
            f64::INFINITY
        }
    };
    Ok(YoungRemainders {
        gap,
        dual_side: eval(phi_dual, dy),
        primal_side: eval(phi_primal, dx),
    })
}

/// Smallest knot-triple ratio for the strong convexity inequality
/// a f(x2) + (1 - a) f(x1) - f(a x2 + (1 - a) x1) >= lambda a (1 - a) (x2 - x1)^2,
/// taken over midpoint triples of finite knots.
pub fn lambda_on_knots(f: &TabulatedConvexFn) -> f64 {
    let k = f.finite_knots();
    let mut best = f64::INFINITY;
    for i in 0..k.len() {
        for j in (i + 2..k.len()).step_by(2) {
            let mid = 0.5 * (k[i] + k[j]);
            let (fi, fj, fm) = (
                f.eval(k[i]).unwrap_or(0.0),
                f.eval(k[j]).unwrap_or(0.0),
                f.eval(mid).unwrap_or(0.0),
            );
            let d = k[j] - k[i];
            best = best.min((0.5 * fi + 0.5 * fj - fm) / (0.25 * d * d));
        }
    }
    best
}

/// Worst margin of <x2 - x1, y2 - y1> - 2 lambda (x2 - x1)^2 over finite knot
/// pairs and extreme subgradient selections, after a one-cell allowance of
/// 2 lambda |x2 - x1| h for the piecewise-linear model.
pub fn monotonicity_margin(f: &TabulatedConvexFn, lambda: f64) -> f64 {
    let k = f.finite_knots();
    let h = f.max_spacing();
    let subs: Vec<SubgradientSet> = k.iter().map(|&x| f.subgradient(x).expect("finite knot")).collect();
    let mut worst = f64::INFINITY;
    for i in 0..k.len() {
        for j in i + 1..k.len() {
            let dx = k[j] - k[i];
            let dy = subs[j].lo - subs[i].hi;
            if !dy.is_finite() {
                continue;
            }
            let margin = dx * dy - 2.0 * lambda * dx * dx + 2.0 * lambda * dx * h;
            worst = worst.min(margin);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerDuality {
    /// Knots where F - E vanishes.
    pub primal_optimizers: Vec<f64>,
    /// Dual knots where E* - F* vanishes.
    pub dual_optimizers: Vec<f64>,
    /// dE(x0) inside dF(x0) for every primal optimizer.
    pub subgradients_nested: bool,
    /// Every dual knot in dE(X0) lies within one cell of Y0.
    pub primal_maps_into_dual: bool,
    /// Every knot in dF*(Y0) lies within one cell of X0.
    pub dual_maps_into_primal: bool,
}

impl OptimizerDuality {
    pub fn holds(&self) -> bool {
        self.subgradients_nested && self.primal_maps_into_dual && self.dual_maps_into_primal
    }
}

fn value_tol(scale: f64) -> f64 {
    1e-9 * (1.0 + scale)
}

fn within_cells(points: &[f64], target: &[f64], cell: f64) -> bool {
    points
        .iter()
        .all(|p| target.iter().any(|t| (t - p).abs() <= cell * (1.0 + 1e-9)))
}

/// Compares the optimizer sets of F - E and E* - F* for tabulated E <= F
/// sharing knots. Set containments are checked up to one grid cell.
pub fn optimizer_duality_check(
    e: &TabulatedConvexFn,
    f: &TabulatedConvexFn,
    dual_knots: &[f64],
) -> Result<OptimizerDuality> {
    if e.knots != f.knots {
        return Err(Error::DomainMismatch("E and F must share knots".into()));
    }
    let knots = &e.knots;
    let scale = knots
        .iter()
        .filter_map(|&x| f.eval(x))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = value_tol(scale);
    let mut x0 = Vec::new();
    for &x in knots {
        if let Some(fx) = f.eval(x) {
            let ex = e.eval(x).ok_or_else(|| Error::NotDominated(format!("E = +inf < F at {x}")))?;
            if fx - ex < -tol {
                return Err(Error::NotDominated(format!("E exceeds F at {x}")));
            }
            if fx - ex <= tol {
                x0.push(x);
            }
        }
    }
    let mut y0 = Vec::new();
    let dual_scale = dual_knots
        .iter()
        .filter_map(|&y| e.conjugate_at(y))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for &y in dual_knots {
        if let (Some(es), Some(fs)) = (e.conjugate_at(y), f.conjugate_at(y)) {
            if es - fs <= value_tol(dual_scale) {
                y0.push(y);
            }
        }
    }

    let primal_cell = e.max_spacing();
    let dual_cell = dual_knots
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);

    let mut nested = true;
    let mut into_dual = true;
    for &x in &x0 {
        let de = e.subgradient(x)?;
        let df = f.subgradient(x)?;
        if !de.is_subset_of(&df, slope_tol(de.lo.abs().max(de.hi.abs()).min(1e12))) {
            nested = false;
        }
        let mut hits: Vec<f64> = dual_knots
            .iter()
            .copied()
            .filter(|&y| de.contains(y, 1e-12 * (1.0 + y.abs())))
            .collect();
        if hits.is_empty() {
            // A singleton subgradient between two dual knots: use the nearest.
            let target = de.nearest(0.5 * (dual_knots[0] + dual_knots[dual_knots.len() - 1]));
            if let Some(&y) = dual_knots
                .iter()
                .min_by(|a, b| (*a - target).abs().total_cmp(&(*b - target).abs()))
            {
                if (y - target).abs() <= dual_cell {
                    hits.push(y);
                }
            }
        }
        if !within_cells(&hits, &y0, dual_cell) {
            into_dual = false;
        }
    }

    let mut into_primal = true;
    for &y in &y0 {
        if let Some(hull) = f.conjugate_subgradient(y) {
            let hits: Vec<f64> = knots
                .iter()
                .copied()
                .filter(|&x| hull.contains(x, primal_cell))
                .filter(|&x| f.eval(x).is_some())
                .collect();
            if !within_cells(&hits, &x0, primal_cell) {
                into_primal = false;
            }
        }
    }

    Ok(OptimizerDuality {
        primal_optimizers: x0,
        dual_optimizers: y0,
        subgradients_nested: nested,
        primal_maps_into_dual: into_dual,
        dual_maps_into_primal: into_primal,
    })
}

/// Gaps of the two deficit-duality inequalities at (x, y).
/// `primal` is (E* - F*)(y) - (F - E)(x), defined when y lies in dF(x);
/// `dual` is (F - E)(x) - (E* - F*)(y), defined when x lies in dE*(y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeficitDualityGaps {
    pub primal: Option<f64>,
    pub dual: Option<f64>,
}

pub fn deficit_duality_gaps(
    e: &TabulatedConvexFn,
    f: &TabulatedConvexFn,
    x: f64,
    y: f64,
) -> Result<DeficitDualityGaps> {
    let fx = f.eval(x).ok_or(Error::OutOfDomain { x })?;
    let ex = e.eval(x).ok_or(Error::OutOfDomain { x })?;
    let df = f.subgradient(x)?;
    let tol = slope_tol(y);
    let d_primal = df.distance(y);
    let d_dual = e
        .conjugate_subgradient(y)
        .map(|s| s.distance(x))
        .unwrap_or(f64::INFINITY);
    if d_primal > tol && d_dual > 1e-9 * (1.0 + x.abs()) {
        return Err(Error::PreconditionViolated {
            what: "y outside dF(x) and x outside dE*(y)".into(),
            distance: d_primal.min(d_dual),
        });
    }
    let primal = (d_primal <= tol).then(|| {
        // y in dF(x): F*(y) = x y - F(x) is finite.
        let fs = x * y - fx;
        match e.conjugate_at(y) {
            Some(es) => (es - fs) - (fx - ex),
            None => f64::INFINITY,
        }
    });
    let dual = (d_dual <= 1e-9 * (1.0 + x.abs())).then(|| {
        let es = x * y - ex;
        match f.conjugate_at(y) {
            Some(fs) => (fx - ex) - (es - fs),
            None => f64::INFINITY,
        }
    });
    Ok(DeficitDualityGaps { primal, dual })
}

/// Convex tabulated rate function on [0, T] with value 0 at 0, positive
/// elsewhere. `strict` records whether the discrete slopes strictly
/// increase.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFn {
    knots: Vec<f64>,
    values: Vec<f64>,
    strict: bool,
}

impl RateFn {
    /// Strictly convex rate function.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let r = Self::new_convex(knots, values)?;
        if !r.strict {
            return Err(Error::InvalidTable("rate function slopes must strictly increase".into()));
        }
        Ok(r)
    }

    /// Convex, not necessarily strictly.
    pub fn new_convex(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidTable("rate function needs at least two knots".into()));
        }
        if knots[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::InvalidTable("rate function must start at (0, 0)".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTable("knots must increase and values be finite".into()));
        }
        if values[1..].iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidTable("rate function must be positive away from 0".into()));
        }
        let slopes: Vec<f64> = (0..knots.len() - 1)
            .map(|i| (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]))
            .collect();
        let scale = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let mut strict = true;
        for w in slopes.windows(2) {
            if w[1] < w[0] - slope_tol(scale) {
                return Err(Error::InvalidTable("rate function must be convex".into()));
            }
            if w[1] <= w[0] {
                strict = false;
            }
        }
        Ok(Self {
            knots,
            values,
            strict,
        })
    }

    pub fn sample<F: Fn(f64) -> f64>(knots: Vec<f64>, f: F) -> Result<Self> {
        let values = knots.iter().map(|&t| f(t)).collect();
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn slopes(&self) -> Vec<f64> {
        (0..self.knots.len() - 1)
            .map(|i| (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i]))
            .collect()
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let end = *self.knots.last().expect("non-empty");
        if !(0.0..=end).contains(&t) {
            return Err(Error::OutOfDomain { x: t });
        }
        Ok(self.eval_extended(t))
    }

    /// Linear interpolation, continued with the last slope beyond T.
    pub fn eval_extended(&self, t: f64) -> f64 {
        let m = self.knots.len();
        let j = self.knots.partition_point(|&k| k <= t).clamp(1, m - 1);
        let i = j - 1;
        let s = (self.values[j] - self.values[i]) / (self.knots[j] - self.knots[i]);
        self.values[i] + s * (t - self.knots[i])
    }
}

/// Pointwise-in-slope minimum: integrates min(phi1', phi2').
pub fn rate_min(phi1: &RateFn, phi2: &RateFn) -> Result<RateFn> {
    if phi1.knots != phi2.knots {
        return Err(Error::DomainMismatch("rate functions must share knots".into()));
    }
    let s1 = phi1.slopes();
    let s2 = phi2.slopes();
    let mut values = vec![0.0];
    for i in 0..s1.len() {
        let dt = phi1.knots[i + 1] - phi1.knots[i];
        values.push(values[i] + s1[i].min(s2[i]) * dt);
    }
    RateFn::new_convex(phi1.knots.clone(), values)
}

/// Strictly increasing tabulated function on [0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTable {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Whether the value at 0 was set by extending phi(t) / t to its limit 0.
    pub vanishes_at_zero: bool,
}

/// psi(t) = phi(t) / t on the positive knots. At 0 the table takes the
/// linear extrapolation of the first two positive knots, clamped to zero
/// when that extrapolation is non-positive (phi(t) = o(t)).
pub fn psi_from_phi(phi: &RateFn) -> Result<MonotoneTable> {
    let k = &phi.knots;
    if k.len() < 3 {
        return Err(Error::InvalidTable("need at least two positive knots".into()));
    }
    let mut values = vec![0.0; k.len()];
    for i in 1..k.len() {
        values[i] = phi.values[i] / k[i];
    }
    let extrap = values[1] - k[1] * (values[2] - values[1]) / (k[2] - k[1]);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let vanishes = extrap <= 1e-9 * scale;
    values[0] = if vanishes { 0.0 } else { extrap };
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTable("phi(t)/t must be strictly increasing".into()));
    }
    Ok(MonotoneTable {
        knots: k.clone(),
        values,
        vanishes_at_zero: vanishes,
    })
}

/// inf over s >= 0 of psi(t - s) + s, with psi = +inf on negative
/// arguments. On knots this is t + min over u <= t of (psi(u) - u), which
/// is exact for piecewise-linear psi.
pub fn inf_convolution_hat(psi: &MonotoneTable) -> Result<RateFn> {
    if psi.values.first() != Some(&0.0) {
        return Err(Error::PreconditionViolated {
            what: "psi(0) must vanish".into(),
            distance: psi.values.first().copied().unwrap_or(f64::NAN).abs(),
        });
    }
    let mut running = f64::INFINITY;
    let values: Vec<f64> = psi
        .knots
        .iter()
        .zip(&psi.values)
        .map(|(&t, &p)| {
            running = running.min(p - t);
            t + running
        })
        .collect();
    RateFn::new_convex(psi.knots.clone(), values)
}

/// Lower bound phi(psi_hat(d)) for the dual deficit at distance d.
pub fn composed_rate(phi: &RateFn, psi_hat: &RateFn, d: f64) -> f64 {
    phi.eval_extended(psi_hat.eval_extended(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn conjugate_of_abs_is_indicator_of_unit_interval() {
        let f = TabulatedConvexFn::sample_with_affine_tails(grid(-4.0, 4.0, 81), f64::abs).unwrap();
        let g = f.legendre(&grid(-2.0, 2.0, 41)).unwrap();
        for (y, v) in g.knots().iter().zip(g.values()) {
            if y.abs() <= 1.0 + 1e-12 {
                assert!(v.unwrap().abs() < 1e-12, "y={y}");
            } else {
                assert!(v.is_none(), "y={y}");
            }
        }
    }

    #[test]
    fn conjugate_of_square_is_quarter_square_at_knot_slopes() {
        // On the segment slopes of the tabulated x^2 the conjugate is exact
        // up to the interpolation error h^2 / 4.
        let h = 0.05;
        let f = TabulatedConvexFn::sample(grid(-4.0, 4.0, 161), |x| x * x).unwrap();
        for y in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let c = f.conjugate_at(y).unwrap();
            assert!((c - y * y / 4.0).abs() <= h * h / 4.0 + 1e-12, "y={y}");
        }
    }

    #[test]
    fn linear_function_conjugates_to_a_point_indicator() {
        let f = TabulatedConvexFn::sample_with_affine_tails(grid(-4.0, 4.0, 9), |x| 1.5 * x).unwrap();
        assert_eq!(f.conjugate_at(1.5), Some(0.0));
        assert_eq!(f.conjugate_at(1.49), None);
        assert_eq!(f.conjugate_at(2.0), None);
    }

    #[test]
    fn subgradient_of_abs_at_kink() {
        let f = TabulatedConvexFn::sample_with_affine_tails(grid(-2.0, 2.0, 5), f64::abs).unwrap();
        assert_eq!(f.subgradient(0.0).unwrap(), SubgradientSet { lo: -1.0, hi: 1.0 });
        assert_eq!(f.subgradient(1.0).unwrap(), SubgradientSet::point(1.0));
        assert_eq!(f.subgradient(0.5).unwrap(), SubgradientSet::point(1.0));
    }

    #[test]
    fn quarter_square_subgradient_is_exact_at_knots_of_slope() {
        let f = TabulatedConvexFn::sample(grid(-4.0, 4.0, 81), |x| x * x / 4.0).unwrap();
        let s = f.subgradient(1.0).unwrap();
        // Chord slopes on either side bracket 1/2.
        assert!(s.lo < 0.5 && s.hi > 0.5);
        assert!((s.lo - 0.475).abs() < 1e-12 && (s.hi - 0.525).abs() < 1e-12);
    }

    #[test]
    fn young_gap_is_infinite_outside_the_conjugate_domain() {
        let f = TabulatedConvexFn::sample_with_affine_tails(grid(-2.0, 2.0, 5), f64::abs).unwrap();
        assert_eq!(young_gap(&f, 0.5, 3.0).unwrap(), f64::INFINITY);
        assert!(matches!(
            young_gap(&TabulatedConvexFn::sample(grid(-1.0, 1.0, 3), f64::abs).unwrap(), 5.0, 0.0),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn non_convex_tables_are_rejected() {
        let e = TabulatedConvexFn::sample(grid(-1.0, 1.0, 5), |x| -x * x);
        assert!(matches!(e, Err(Error::InvalidTable(_))));
        let empty = TabulatedConvexFn::closed(vec![0.0, 1.0], vec![f64::INFINITY, f64::INFINITY]);
        assert!(matches!(empty, Err(Error::EmptyDomain)));
    }

    #[test]
    fn inf_convolution_of_square() {
        let psi = MonotoneTable {
            knots: grid(0.0, 2.0, 201),
            values: grid(0.0, 2.0, 201).iter().map(|t| t * t).collect(),
            vanishes_at_zero: true,
        };
        let hat = inf_convolution_hat(&psi).unwrap();
        for (t, v) in hat.knots().iter().zip(hat.values()) {
            let exact = if *t <= 0.5 { t * t } else { t - 0.25 };
            assert!((v - exact).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn psi_of_quadratic_rate() {
        let phi = RateFn::sample(grid(0.0, 1.0, 11), |t| 3.0 * t * t).unwrap();
        let psi = psi_from_phi(&phi).unwrap();
        assert!(psi.vanishes_at_zero);
        for (t, v) in psi.knots.iter().zip(&psi.values) {
            assert!((v - 3.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_min_takes_smaller_slopes() {
        let k = grid(0.0, 1.0, 11);
        let a = RateFn::sample(k.clone(), |t| t * t).unwrap();
        let b = RateFn::sample(k, |t| 0.5 * t * t + 0.05 * t).unwrap();
        let m = rate_min(&a, &b).unwrap();
        for i in 0..m.knots().len() {
            assert!(m.values()[i] <= a.values()[i].min(b.values()[i]) + 1e-15);
        }
        assert!(matches!(
            rate_min(&a, &RateFn::sample(grid(0.0, 2.0, 11), |t| t * t).unwrap()),
            Err(Error::DomainMismatch(_))
        ));
    }
}
