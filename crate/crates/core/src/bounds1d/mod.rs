//! Optimally tight piecewise-linear upper and lower bounds of univariate
//! functions.
//!
//! The domain is split at inflection points. On a convex region the upper
//! bound is a chain of secants and the lower bound a chain of tangents; on a
//! concave region the roles swap. Breakpoints are placed to minimise the
//! area between bound and function.

mod solve;

use serde::{Deserialize, Serialize};

use crate::expr::{Curvature, Elementary, Expr, ExprError, Interval};

pub use solve::{
    optimize_secant_breakpoints, optimize_tangent_breakpoints, secant_residuals,
    tangent_intersection, tangent_points, tangent_residuals,
};

/// Default vertical gap between a bound and the function.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Default relative error target.
pub const DEFAULT_ERROR_TARGET: f64 = 0.02;
/// Largest segment count tried in error-target mode.
pub const MAX_SEGMENTS: usize = 64;
const ERROR_GRID: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

/// How finely each region of constant curvature is split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Fixed number of segments per region.
    Segments(usize),
    /// Smallest power-of-two segment count whose maximum gap, relative to
    /// the largest `|f|` on the domain, is at most this value.
    ErrorTarget(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    pub resolution: Resolution,
    pub epsilon: f64,
    pub xi: f64,
}

impl Default for ApproxParams {
    fn default() -> Self {
        ApproxParams {
            resolution: Resolution::ErrorTarget(DEFAULT_ERROR_TARGET),
            epsilon: DEFAULT_EPSILON,
            xi: crate::expr::DEFAULT_XI,
        }
    }
}

impl ApproxParams {
    pub fn with_segments(n: usize) -> Self {
        ApproxParams {
            resolution: Resolution::Segments(n),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExprError> {
        let ok = match self.resolution {
            Resolution::Segments(n) => n >= 1,
            Resolution::ErrorTarget(t) => t > 0.0 && t.is_finite(),
        };
        if !ok || !(self.epsilon >= 0.0 && self.epsilon.is_finite()) || !(self.xi > 0.0) {
            return Err(ExprError::Domain(format!("invalid approximation parameters {self:?}")));
        }
        Ok(())
    }
}

/// A line through `(x0, y0)` with the given slope. Anchoring at a point keeps
/// the value at the anchor exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub x0: f64,
    pub y0: f64,
    pub slope: f64,
}

impl Line {
    pub fn new(x0: f64, y0: f64, slope: f64) -> Line {
        Line { x0, y0, slope }
    }

    pub fn at(&self, x: f64) -> f64 {
        self.y0 + self.slope * (x - self.x0)
    }
}

/// Continuous piecewise-linear function given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlBound {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub side: Side,
    /// Shift already applied to `ys`.
    pub epsilon: f64,
}

impl PwlBound {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, side: Side, epsilon: f64) -> PwlBound {
        debug_assert_eq!(xs.len(), ys.len());
        debug_assert!(xs.windows(2).all(|w| w[0] < w[1]), "breakpoints not increasing: {xs:?}");
        PwlBound { xs, ys, side, epsilon }
    }

    pub fn segments(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn domain(&self) -> Interval {
        Interval::new(self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Value of the interpolant. Outside the domain the end segments are
    /// extended.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.segments();
        let i = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i.clamp(1, n),
        };
        let (x0, x1, y0, y1) = (self.xs[i - 1], self.xs[i], self.ys[i - 1], self.ys[i]);
        y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
    }

    /// Slope and anchor of every segment.
    pub fn lines(&self) -> Vec<Line> {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| Line::new(x[0], y[0], (y[1] - y[0]) / (x[1] - x[0])))
            .collect()
    }

    /// Exact integral of the interpolant over its domain.
    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
            .sum()
    }

    /// Reflect through the x axis, flipping the side.
    pub fn negated(&self) -> PwlBound {
        PwlBound {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| -y).collect(),
            side: match self.side {
                Side::Upper => Side::Lower,
                Side::Lower => Side::Upper,
            },
            epsilon: self.epsilon,
        }
    }

    /// Move every breakpoint away from the function by `eps`.
    pub fn shifted(&self, eps: f64) -> PwlBound {
        let s = match self.side {
            Side::Upper => eps,
            Side::Lower => -eps,
        };
        PwlBound {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y + s).collect(),
            side: self.side,
            epsilon: self.epsilon + eps,
        }
    }

    /// Closed form `Σ y_i · β_i(x)` with hat functions
    /// `β_i = max(0, min(L_l, L_r))`, where `L_l` rises from 0 at `x_{i-1}`
    /// to 1 at `x_i` and `L_r` falls from 1 at `x_i` to 0 at `x_{i+1}`.
    ///
    /// Each `L` is written as `(x - x_j) / (x_i - x_j)` so the value at every
    /// breakpoint is reproduced exactly.
    pub fn to_closed_form(&self, x: &Expr) -> Result<Expr, ExprError> {
        let n = self.xs.len();
        if n < 2 {
            return Err(ExprError::Domain("closed form needs at least two breakpoints".into()));
        }
        if let Some(w) = self.xs.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(ExprError::Domain(format!("duplicate or unordered breakpoints {} and {}", w[0], w[1])));
        }
        let ramp = |from: f64, to: f64| {
            Expr::div(Expr::sub(x.clone(), Expr::Const(from)), Expr::Const(to - from))
        };
        if n == 2 {
            // a single segment is affine
            let (x0, x1) = (self.xs[0], self.xs[1]);
            return Ok(Expr::add(
                Expr::mul(Expr::Const(self.ys[0]), ramp(x1, x0)),
                Expr::mul(Expr::Const(self.ys[1]), ramp(x0, x1)),
            ));
        }
        let zero = Expr::Const(0.0);
        let mut terms = Vec::with_capacity(n);
        for i in 0..n {
            let beta = if i == 0 {
                Expr::max(zero.clone(), ramp(self.xs[1], self.xs[0]))
            } else if i == n - 1 {
                Expr::max(zero.clone(), ramp(self.xs[i - 1], self.xs[i]))
            } else {
                let l = ramp(self.xs[i - 1], self.xs[i]);
                let r = ramp(self.xs[i + 1], self.xs[i]);
                Expr::max(zero.clone(), Expr::min(l, r))
            };
            terms.push(Expr::mul(Expr::Const(self.ys[i]), beta));
        }
        let mut it = terms.into_iter();
        let first = it.next().unwrap();
        Ok(it.fold(first, Expr::add))
    }
}

/// Join segment lines into a continuous bound: each interior `y_i` is the
/// larger (upper) or smaller (lower) of the two adjacent lines at `x_i`, so
/// no segment moves towards the function.
pub fn repair_continuity(xs: &[f64], lines: &[Line], side: Side) -> PwlBound {
    let n = xs.len() - 1;
    assert_eq!(lines.len(), n, "one line per segment");
    let pick = |a: f64, b: f64| match side {
        Side::Upper => a.max(b),
        Side::Lower => a.min(b),
    };
    let mut ys = Vec::with_capacity(n + 1);
    ys.push(lines[0].at(xs[0]));
    for i in 1..n {
        ys.push(pick(lines[i - 1].at(xs[i]), lines[i].at(xs[i])));
    }
    ys.push(lines[n - 1].at(xs[n]));
    PwlBound::new(xs.to_vec(), ys, side, 0.0)
}

/// Bound of `f` on one region of constant curvature, before any shift.
fn region_bound(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    d: Interval,
    curvature: Curvature,
    side: Side,
    n: usize,
) -> PwlBound {
    match (curvature, side) {
        (Curvature::Linear, _) => {
            PwlBound::new(vec![d.lo, d.hi], vec![f(d.lo), f(d.hi)], side, 0.0)
        }
        (Curvature::Convex, Side::Upper) => optimize_secant_breakpoints(f, df, d, n),
        (Curvature::Concave, Side::Upper) => optimize_tangent_breakpoints(f, df, d, n),
        // lower bounds are upper bounds of -f, reflected back
        (Curvature::Convex, Side::Lower) => {
            optimize_tangent_breakpoints(&|x| -f(x), &|x| -df(x), d, n).negated()
        }
        (Curvature::Concave, Side::Lower) => {
            optimize_secant_breakpoints(&|x| -f(x), &|x| -df(x), d, n).negated()
        }
    }
}

/// Largest `|g - f|` over a uniform grid of the bound's domain.
fn max_gap(b: &PwlBound, f: &dyn Fn(f64) -> f64) -> f64 {
    let d = b.domain();
    (0..=ERROR_GRID)
        .map(|k| {
            let x = d.lo + d.width() * k as f64 / ERROR_GRID as f64;
            (b.eval(x) - f(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Concatenate region bounds that share endpoints, taking the outer value
/// at every join.
fn glue(parts: Vec<PwlBound>, side: Side) -> PwlBound {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for p in parts {
        let skip = if xs.is_empty() {
            0
        } else {
            let last = ys.len() - 1;
            ys[last] = match side {
                Side::Upper => ys[last].max(p.ys[0]),
                Side::Lower => ys[last].min(p.ys[0]),
            };
            1
        };
        xs.extend_from_slice(&p.xs[skip..]);
        ys.extend_from_slice(&p.ys[skip..]);
    }
    PwlBound::new(xs, ys, side, 0.0)
}

/// Upper and lower piecewise-linear bounds of `op` over `d`, each shifted
/// away from the function by `p.epsilon`.
pub fn overapprox_unary(
    op: Elementary,
    d: Interval,
    p: &ApproxParams,
) -> Result<(PwlBound, PwlBound), ExprError> {
    p.validate()?;
    op.check_domain(d)?;
    let f = |x: f64| op.eval(x);
    let df = |x: f64| op.deriv(x);
    if d.width() == 0.0 {
        // A point domain: both bounds are the single value.
        let y = f(d.lo);
        let up = PwlBound::new(vec![d.lo, d.lo + f64::EPSILON * d.lo.abs().max(1.0)], vec![y, y], Side::Upper, 0.0);
        let lo = PwlBound { side: Side::Lower, ..up.clone() };
        return Ok((up.shifted(p.epsilon), lo.shifted(p.epsilon)));
    }
    let mut cuts = vec![d.lo];
    cuts.extend(op.inflections(d));
    cuts.push(d.hi);
    let scale = (0..=ERROR_GRID)
        .map(|k| f(d.lo + d.width() * k as f64 / ERROR_GRID as f64).abs())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut uppers = Vec::new();
    let mut lowers = Vec::new();
    for w in cuts.windows(2) {
        let region = Interval::new(w[0], w[1]);
        let curvature = op.curvature(region);
        for (side, out) in [(Side::Upper, &mut uppers), (Side::Lower, &mut lowers)] {
            let b = match p.resolution {
                Resolution::Segments(n) => region_bound(&f, &df, region, curvature, side, n),
                Resolution::ErrorTarget(target) => {
                    let mut n = 1;
                    loop {
                        let b = region_bound(&f, &df, region, curvature, side, n);
                        if n >= MAX_SEGMENTS || max_gap(&b, &f) / scale <= target {
                            break b;
                        }
                        n *= 2;
                    }
                }
            };
            out.push(b);
        }
    }
    let upper = glue(uppers, Side::Upper).shifted(p.epsilon);
    let lower = glue(lowers, Side::Lower).shifted(p.epsilon);
    Ok((upper, lower))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn single_secant_of_square() {
        let b = optimize_secant_breakpoints(&|x| x * x, &|x| 2.0 * x, Interval::new(0.0, 2.0), 1);
        assert_eq!(b.xs, vec![0.0, 2.0]);
        assert_eq!(b.ys, vec![0.0, 4.0]);
    }

    #[test]
    fn two_secants_of_square() {
        let b = optimize_secant_breakpoints(&|x| x * x, &|x| 2.0 * x, Interval::new(-1.0, 2.0), 2);
        assert!((b.xs[1] - 0.5).abs() < 1e-10, "{:?}", b.xs);
    }

    #[test]
    fn tanh_regions_reproduce_reference_breakpoints() {
        let p = ApproxParams {
            resolution: Resolution::Segments(2),
            epsilon: 0.0,
            ..Default::default()
        };
        let (up, lo) = overapprox_unary(Elementary::Tanh, Interval::new(-FRAC_PI_2, FRAC_PI_2), &p).unwrap();
        let want_x = [-FRAC_PI_2, -0.7668186154783817, 0.0, 0.7937295874538862, FRAC_PI_2];
        let want_y = [-0.9171523356672744, -0.6450757227359059, 0.0, 0.7937295874441845, 0.9171523356672744];
        for i in 0..5 {
            assert!((up.xs[i] - want_x[i]).abs() < 1e-6, "{:?}", up.xs);
            assert!((up.ys[i] - want_y[i]).abs() < 1e-6, "{:?}", up.ys);
            assert!((lo.xs[i] + want_x[4 - i]).abs() < 1e-6, "{:?}", lo.xs);
            assert!((lo.ys[i] + want_y[4 - i]).abs() < 1e-6, "{:?}", lo.ys);
        }
    }

    #[test]
    fn repair_takes_outer_value() {
        let lines = [Line::new(0.0, 1.0, 1.0), Line::new(1.0, 2.1, 0.0)];
        let b = repair_continuity(&[0.0, 1.0, 2.0], &lines, Side::Upper);
        assert_eq!(b.ys, vec![1.0, 2.1, 2.1]);
        let cont = [Line::new(0.0, 1.0, 1.0), Line::new(1.0, 2.0, 0.0)];
        assert_eq!(repair_continuity(&[0.0, 1.0, 2.0], &cont, Side::Upper).ys, vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn closed_form_interpolates_exactly() {
        let b = PwlBound::new(vec![-1.0, 0.3, 0.7, 2.0], vec![1.0, -0.2, 0.4, 3.0], Side::Upper, 0.0);
        let g = b.to_closed_form(&Expr::var("x")).unwrap();
        for (x, y) in b.xs.iter().zip(&b.ys) {
            let v = crate::expr::evaluate(&g, &[("x".to_string(), *x)].into()).unwrap();
            assert_eq!(v, *y);
        }
        let single = PwlBound::new(vec![0.0, 2.0], vec![1.0, 5.0], Side::Upper, 0.0);
        let g = single.to_closed_form(&Expr::var("x")).unwrap();
        assert!(g.is_affine());
    }

    #[test]
    fn point_domain() {
        let (u, l) = overapprox_unary(Elementary::Sin, Interval::point(0.5), &ApproxParams::default()).unwrap();
        assert!(u.eval(0.5) > 0.5f64.sin() && l.eval(0.5) < 0.5f64.sin());
    }
}
