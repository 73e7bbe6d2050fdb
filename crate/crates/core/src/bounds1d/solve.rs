//! Breakpoint placement for a single region of constant curvature.

use nalgebra::{DMatrix, DVector};

use crate::expr::Interval;

use super::{Line, PwlBound, Side};

const MAX_ITERS: usize = 100;

/// Damped Newton iteration with a forward-difference Jacobian.
///
/// `feasible` guards every accepted step; the iterate never leaves the set it
/// describes. Returns `None` when the residual cannot be driven below `tol`.
fn newton(
    mut x: Vec<f64>,
    residual: &dyn Fn(&[f64]) -> Vec<f64>,
    feasible: &dyn Fn(&[f64]) -> bool,
    step: f64,
    tol: f64,
) -> Option<Vec<f64>> {
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m = x.len();
    let mut r = residual(&x);
    for _ in 0..MAX_ITERS {
        let rn = norm(&r);
        if !rn.is_finite() {
            return None;
        }
        if rn <= tol {
            return Some(x);
        }
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut xp = x.clone();
            xp[j] = x[j] + step;
            // step towards the roomier side so the ordering is kept
            if !feasible(&xp) {
                xp[j] = x[j] - step;
            }
            let h = xp[j] - x[j];
            let rp = residual(&xp);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let dx = jac.lu().solve(&-DVector::from_column_slice(&r))?;
        let mut lambda = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + lambda * d).collect();
            if feasible(&cand) {
                let rc = residual(&cand);
                if norm(&rc) < (1.0 - 1e-4 * lambda) * rn {
                    x = cand;
                    r = rc;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return (rn <= tol.sqrt()).then_some(x);
            }
        }
    }
    (norm(&r) <= tol.sqrt()).then_some(x)
}

fn strictly_inside(a: f64, b: f64) -> impl Fn(&[f64]) -> bool {
    move |x: &[f64]| {
        let mut prev = a;
        for &v in x {
            if !(v > prev) {
                return false;
            }
            prev = v;
        }
        prev < b
    }
}

fn uniform(d: Interval, n: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..=n)
        .map(|i| d.lo + d.width() * i as f64 / n as f64)
        .collect();
    xs[n] = d.hi;
    xs
}

/// Breakpoints equidistributing `sqrt(|f''|)`, with `f''` taken by central
/// differences of `df` on a fine grid.
fn equidistributed(df: &dyn Fn(f64) -> f64, d: Interval, n: usize) -> Vec<f64> {
    const GRID: usize = 2048;
    let h = d.width() / GRID as f64;
    let dens: Vec<f64> = (0..GRID)
        .map(|k| {
            let x = d.lo + (k as f64 + 0.5) * h;
            ((df(x + 0.5 * h) - df(x - 0.5 * h)) / h).abs().sqrt()
        })
        .collect();
    let total: f64 = dens.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return uniform(d, n);
    }
    let mut xs = vec![d.lo];
    let (mut acc, mut k) = (0.0, 0);
    for i in 1..n {
        let target = total * i as f64 / n as f64;
        while k < GRID && acc + dens[k] < target {
            acc += dens[k];
            k += 1;
        }
        let frac = if k < GRID && dens[k] > 0.0 { (target - acc) / dens[k] } else { 0.0 };
        let x = d.lo + (k as f64 + frac) * h;
        xs.push(x.max(*xs.last().unwrap()));
    }
    xs.push(d.hi);
    xs
}

/// Residuals of the secant-slope optimality condition at interior points.
pub fn secant_residuals(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, xs: &[f64]) -> Vec<f64> {
    (1..xs.len().saturating_sub(1))
        .map(|i| df(xs[i]) - (f(xs[i + 1]) - f(xs[i - 1])) / (xs[i + 1] - xs[i - 1]))
        .collect()
}

/// Intersection abscissa of the tangents to `f` at `alpha` and `beta`.
pub fn tangent_intersection(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    let (da, db) = (df(alpha), df(beta));
    (beta * db - alpha * da - (f(beta) - f(alpha))) / (db - da)
}

/// Tangency points of the segments: the region ends for the first and last
/// segment, the segment midpoint otherwise.
pub fn tangent_points(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() - 1;
    if n == 1 {
        return vec![0.5 * (xs[0] + xs[1])];
    }
    (1..=n)
        .map(|i| {
            if i == 1 {
                xs[0]
            } else if i == n {
                xs[n]
            } else {
                0.5 * (xs[i - 1] + xs[i])
            }
        })
        .collect()
}

/// Residuals `x_i - h(t_i, t_{i+1})` of the tangent breakpoint system.
pub fn tangent_residuals(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len() - 1;
    if n < 2 {
        return vec![];
    }
    let t = tangent_points(xs);
    (1..n)
        .map(|i| xs[i] - tangent_intersection(f, df, t[i - 1], t[i]))
        .collect()
}

/// Upper bound of a convex function by `n` secants with optimally placed
/// breakpoints. Falls back to uniform spacing if the solve fails.
pub fn optimize_secant_breakpoints(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    d: Interval,
    n: usize,
) -> PwlBound {
    let n = n.max(1);
    let mut xs = uniform(d, n);
    if n >= 2 {
        let slope_scale = df(d.lo).abs().max(df(d.hi).abs()).max(1.0);
        let residual = |inner: &[f64]| {
            let mut all = Vec::with_capacity(n + 1);
            all.push(d.lo);
            all.extend_from_slice(inner);
            all.push(d.hi);
            secant_residuals(f, df, &all)
        };
        let step = 1e-7 * d.width() / n as f64;
        let inside = strictly_inside(d.lo, d.hi);
        let tol = 1e-12 * slope_scale;
        let solved = newton(xs[1..n].to_vec(), &residual, &inside, step, tol).or_else(|| {
            let guess = equidistributed(df, d, n);
            inside(&guess[1..n])
                .then(|| newton(guess[1..n].to_vec(), &residual, &inside, step, tol))
                .flatten()
        });
        if let Some(inner) = solved {
            xs[1..n].copy_from_slice(&inner);
        }
    }
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    PwlBound::new(xs, ys, Side::Upper, 0.0)
}

/// Upper bound of a concave function by `n` tangent segments, tangent at
/// both region ends and at the midpoints of the inner segments.
///
/// With `n == 1` the single segment is tangent at the midpoint of `d`.
pub fn optimize_tangent_breakpoints(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    d: Interval,
    n: usize,
) -> PwlBound {
    let n = n.max(1);
    let mut xs = uniform(d, n);
    if n >= 2 {
        let residual = |inner: &[f64]| {
            let mut all = Vec::with_capacity(n + 1);
            all.push(d.lo);
            all.extend_from_slice(inner);
            all.push(d.hi);
            tangent_residuals(f, df, &all)
        };
        let inside = strictly_inside(d.lo, d.hi);
        let step = 1e-7 * d.width() / n as f64;
        let tol = 1e-12 * d.lo.abs().max(d.hi.abs()).max(1.0);
        let solved = if n == 2 {
            let x1 = tangent_intersection(f, df, d.lo, d.hi);
            inside(&[x1]).then(|| vec![x1])
        } else {
            newton(xs[1..n].to_vec(), &residual, &inside, step, tol)
        };
        if let Some(inner) = solved {
            xs[1..n].copy_from_slice(&inner);
        }
    }
    let lines: Vec<Line> = tangent_points(&xs)
        .into_iter()
        .map(|t| Line::new(t, f(t), df(t)))
        .collect();
    super::repair_continuity(&xs, &lines, Side::Upper)
}
