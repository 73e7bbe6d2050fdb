//! Bounded-variable dual simplex over a dense basis inverse.
//!
//! Every row is written as `a·x - s = 0` with a boxed slack `s`, so the
//! matrix is `[A | -I]`, the right-hand side is zero and every variable has
//! finite bounds. Any basis is then dual feasible once each nonbasic variable
//! sits at the bound matching the sign of its reduced cost, which makes the
//! slack basis a valid start and lets branch-and-bound children restart from
//! their parent's basis.

use std::sync::Arc;

use nalgebra::DMatrix;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REINVERT_EVERY: usize = 64;
const CUTOFF_CHECK_EVERY: usize = 8;
const REPAIR_TOL: f64 = 1e-11;
const PERTURBATION: f64 = 1e-7;
/// Perturbation strengths tried in turn; the last is the true problem.
const SHRINK: [f64; 4] = [1.0, 1e-3, 1e-6, 0.0];

/// Column-wise structural matrix. Slack column `n + i` is `-e_i`.
#[derive(Debug, Clone)]
pub(crate) struct LpMatrix {
    pub m: usize,
    pub n: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl LpMatrix {
    pub fn total(&self) -> usize {
        self.n + self.m
    }

    fn dot(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|(i, a)| a * v[*i]).sum()
        } else {
            -v[j - self.n]
        }
    }

    /// `Σ |M_ij v_i|`, the magnitude that bounds rounding in `dot`.
    fn abs_dot(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|(i, a)| (a * v[*i]).abs()).sum()
        } else {
            v[j - self.n].abs()
        }
    }

    fn nnz(&self, j: usize) -> usize {
        if j < self.n {
            self.cols[j].len()
        } else {
            1
        }
    }

    fn axpy(&self, j: usize, t: f64, out: &mut [f64]) {
        if j < self.n {
            for (i, a) in &self.cols[j] {
                out[*i] += t * a;
            }
        } else {
            out[j - self.n] -= t;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarStatus {
    Basic,
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Basis {
    pub head: Vec<usize>,
    pub status: Vec<VarStatus>,
    /// Inverse of the basis matrix and the number of updates since it was
    /// last refactored, reusable by a child with the same matrix.
    pub inverse: Option<(Arc<Vec<f64>>, usize)>,
}

impl Basis {
    pub fn slack(a: &LpMatrix) -> Basis {
        let mut status = vec![VarStatus::Lower; a.total()];
        for s in &mut status[a.n..] {
            *s = VarStatus::Basic;
        }
        Basis {
            head: (a.n..a.total()).collect(),
            status,
            inverse: None,
        }
    }
}

#[derive(Debug)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, y: Vec<f64> },
    /// `ray·M·z` cannot vanish over the box.
    Infeasible { ray: Vec<f64> },
    /// Certified objective bound at or above the cutoff.
    Cutoff { y: Vec<f64> },
    Failed,
}

/// Lower bound on `cost·z` over `{z in box : M z = 0}` from any multipliers
/// `y`, padded for floating-point rounding.
pub(crate) fn lagrangian_bound(a: &LpMatrix, cost: &[f64], lo: &[f64], hi: &[f64], y: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut magnitude = 0.0;
    let mut longest = 0;
    for j in 0..a.total() {
        let g = cost[j] - a.dot(j, y);
        let z = if g >= 0.0 { lo[j] } else { hi[j] };
        total += g * z;
        magnitude += (cost[j].abs() + a.abs_dot(j, y)) * lo[j].abs().max(hi[j].abs());
        longest = longest.max(a.nnz(j));
    }
    let gamma = 2.0 * (a.total() + longest + 4) as f64 * f64::EPSILON;
    let bound = total - gamma * magnitude;
    if bound.is_finite() {
        bound
    } else {
        f64::NEG_INFINITY
    }
}

/// True when `ray·M·z` is bounded away from zero over the box, which proves
/// that no `z` in the box satisfies `M z = 0`.
pub(crate) fn farkas_certifies(a: &LpMatrix, lo: &[f64], hi: &[f64], ray: &[f64]) -> bool {
    let (mut min, mut max, mut magnitude) = (0.0, 0.0, 0.0);
    let mut longest = 0;
    for j in 0..a.total() {
        let g = a.dot(j, ray);
        min += (g * lo[j]).min(g * hi[j]);
        max += (g * lo[j]).max(g * hi[j]);
        magnitude += a.abs_dot(j, ray) * lo[j].abs().max(hi[j].abs());
        longest = longest.max(a.nnz(j));
    }
    let pad = 2.0 * (a.total() + longest + 4) as f64 * f64::EPSILON * magnitude;
    min.is_finite() && max.is_finite() && (min > pad || max < -pad)
}

pub(crate) struct DualSimplex<'a> {
    a: &'a LpMatrix,
    cost: &'a [f64],
    /// Costs driving the pivots: `cost` plus a small perturbation until the
    /// perturbed problem is solved.
    work: Vec<f64>,
    /// `work - cost` at full strength.
    nudge: Vec<f64>,
    lo: &'a [f64],
    hi: &'a [f64],
    /// Row-major `m × m`.
    binv: Vec<f64>,
    basis: Basis,
    x: Vec<f64>,
    d: Vec<f64>,
    since_reinvert: usize,
}

impl<'a> DualSimplex<'a> {
    /// Start from `warm` when given and nonsingular, else from the slack basis.
    pub fn new(a: &'a LpMatrix, cost: &'a [f64], lo: &'a [f64], hi: &'a [f64], warm: Option<&Basis>) -> Option<Self> {
        let mut s = DualSimplex {
            a,
            cost,
            work: Vec::new(),
            nudge: perturbation(cost, warm),
            lo,
            hi,
            binv: Vec::new(),
            basis: warm.cloned().unwrap_or_else(|| Basis::slack(a)),
            x: vec![0.0; a.total()],
            d: vec![0.0; a.total()],
            since_reinvert: 0,
        };
        s.work = s.cost.iter().zip(&s.nudge).map(|(c, e)| c + e).collect();
        if let Some((inv, age)) = s.basis.inverse.take() {
            if inv.len() == a.m * a.m && age < REINVERT_EVERY {
                s.binv = inv.as_ref().clone();
                s.since_reinvert = age;
                s.recompute_dual();
                s.recompute_primal();
                return Some(s);
            }
        }
        if s.reinvert() {
            return Some(s);
        }
        if warm.is_some() {
            s.basis = Basis::slack(a);
            if s.reinvert() {
                return Some(s);
            }
        }
        None
    }

    /// Current basis with its inverse.
    pub fn basis(&self) -> Basis {
        Basis {
            head: self.basis.head.clone(),
            status: self.basis.status.clone(),
            inverse: Some((Arc::new(self.binv.clone()), self.since_reinvert)),
        }
    }

    fn m(&self) -> usize {
        self.a.m
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let m = self.m();
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (r, &j) in self.basis.head.iter().enumerate() {
            if j < self.a.n {
                for (i, v) in &self.a.cols[j] {
                    b[(*i, r)] = *v;
                }
            } else {
                b[(j - self.a.n, r)] = -1.0;
            }
        }
        b
    }

    fn reinvert(&mut self) -> bool {
        let m = self.m();
        if m == 0 {
            self.binv.clear();
        } else {
            let inv = match self.basis_matrix().try_inverse() {
                Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
                _ => {
                    self.repair();
                    match self.basis_matrix().try_inverse() {
                        Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
                        _ => return false,
                    }
                }
            };
            self.binv = (0..m * m).map(|k| inv[(k / m, k % m)]).collect();
        }
        self.since_reinvert = 0;
        self.recompute_dual();
        self.recompute_primal();
        true
    }

    /// Swap basic columns that are numerically dependent on earlier ones
    /// for slacks of the rows left without a pivot.
    fn repair(&mut self) {
        let m = self.m();
        let mut b = self.basis_matrix();
        let mut pivoted = vec![false; m];
        let mut dependent = Vec::new();
        for r in 0..m {
            let norm = b.column(r).amax();
            let mut best = None;
            let mut big = REPAIR_TOL * norm.max(1.0);
            for i in 0..m {
                if !pivoted[i] && b[(i, r)].abs() > big {
                    big = b[(i, r)].abs();
                    best = Some(i);
                }
            }
            let Some(pr) = best else {
                dependent.push(r);
                continue;
            };
            pivoted[pr] = true;
            let pv = b[(pr, r)];
            for i in 0..m {
                let f = b[(i, r)] / pv;
                if pivoted[i] || f == 0.0 {
                    continue;
                }
                for c in r + 1..m {
                    let v = b[(pr, c)];
                    b[(i, c)] -= f * v;
                }
            }
        }
        let free_rows = (0..m).filter(|i| !pivoted[*i]);
        for (r, i) in dependent.into_iter().zip(free_rows) {
            let old = self.basis.head[r];
            let slack = self.a.n + i;
            self.basis.status[old] = if self.x[old] - self.lo[old] <= self.hi[old] - self.x[old] {
                VarStatus::Lower
            } else {
                VarStatus::Upper
            };
            self.basis.status[slack] = VarStatus::Basic;
            self.basis.head[r] = slack;
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m();
        let mut y = vec![0.0; m];
        for (r, &j) in self.basis.head.iter().enumerate() {
            let c = self.work[j];
            if c != 0.0 {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi += c * self.binv[r * m + i];
                }
            }
        }
        y
    }

    /// Reduced costs from scratch, moving each nonbasic variable to the
    /// bound that keeps the basis dual feasible.
    fn recompute_dual(&mut self) {
        let y = self.duals();
        for j in 0..self.a.total() {
            if self.basis.status[j] == VarStatus::Basic {
                self.d[j] = 0.0;
                continue;
            }
            self.d[j] = self.work[j] - self.a.dot(j, &y);
            if self.d[j] < -DUAL_TOL {
                self.basis.status[j] = VarStatus::Upper;
            } else if self.d[j] > DUAL_TOL {
                self.basis.status[j] = VarStatus::Lower;
            }
        }
    }

    fn recompute_primal(&mut self) {
        let m = self.m();
        let mut rhs = vec![0.0; m];
        for j in 0..self.a.total() {
            let v = match self.basis.status[j] {
                VarStatus::Basic => continue,
                VarStatus::Lower => self.lo[j],
                VarStatus::Upper => self.hi[j],
            };
            self.x[j] = v;
            if v != 0.0 {
                self.a.axpy(j, -v, &mut rhs);
            }
        }
        for (r, &j) in self.basis.head.iter().enumerate() {
            self.x[j] = (0..m).map(|i| self.binv[r * m + i] * rhs[i]).sum();
        }
    }

    fn objective(&self) -> f64 {
        self.work.iter().zip(&self.x).map(|(c, x)| c * x).sum()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let m = self.m();
        let mut out = vec![0.0; m];
        if j < self.a.n {
            for (i, v) in &self.a.cols[j] {
                for (r, o) in out.iter_mut().enumerate() {
                    *o += self.binv[r * m + i] * v;
                }
            }
        } else {
            let i = j - self.a.n;
            for (r, o) in out.iter_mut().enumerate() {
                *o = -self.binv[r * m + i];
            }
        }
        out
    }

    /// Basic row with the largest bound violation, if any.
    fn leaving(&self) -> Option<usize> {
        let mut best = None;
        let mut worst = 0.0;
        for (r, &j) in self.basis.head.iter().enumerate() {
            let (l, u, v) = (self.lo[j], self.hi[j], self.x[j]);
            let viol = if v < l - PRIMAL_TOL * (1.0 + l.abs()) {
                l - v
            } else if v > u + PRIMAL_TOL * (1.0 + u.abs()) {
                v - u
            } else {
                0.0
            };
            if viol > worst {
                worst = viol;
                best = Some(r);
            }
        }
        best
    }

    pub fn run(&mut self, cutoff: f64, max_iter: usize) -> LpOutcome {
        let m = self.m();
        let total = self.a.total();
        let mut alpha = vec![0.0; total];
        let mut fallback: Option<LpOutcome> = None;
        let mut level = 0;
        let mut budget = max_iter;
        for iter in 0..max_iter {
            if iter >= budget {
                break;
            }
            if self.since_reinvert >= REINVERT_EVERY && !self.reinvert() {
                return fallback.take().unwrap_or(LpOutcome::Failed);
            }
            if cutoff.is_finite() && iter % CUTOFF_CHECK_EVERY == 0 && self.objective() > cutoff {
                let y = self.duals();
                if lagrangian_bound(self.a, self.cost, self.lo, self.hi, &y) >= cutoff {
                    return LpOutcome::Cutoff { y };
                }
            }
            let Some(r) = self.leaving() else {
                let found = LpOutcome::Optimal {
                    x: self.x.clone(),
                    y: self.duals(),
                };
                level += 1;
                if level == SHRINK.len() {
                    return found;
                }
                // shrink the perturbation and clean up from the same basis
                // within a short budget, keeping this answer as a fallback
                fallback = Some(found);
                budget = iter + 4 * m + 100;
                let f = SHRINK[level];
                self.work = self.cost.iter().zip(&self.nudge).map(|(c, e)| c + f * e).collect();
                self.recompute_dual();
                self.recompute_primal();
                continue;
            };
            let p = self.basis.head[r];
            let to_lower = self.x[p] < self.lo[p];
            let target = if to_lower { self.lo[p] } else { self.hi[p] };
            let rho: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();

            // Harris two-pass ratio test
            let mut theta_max = f64::INFINITY;
            for j in 0..total {
                alpha[j] = 0.0;
                let st = self.basis.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let aj = self.a.dot(j, &rho);
                alpha[j] = aj;
                if !eligible(st, aj, to_lower) {
                    continue;
                }
                theta_max = theta_max.min((slack_of(st, self.d[j]) + DUAL_TOL) / aj.abs());
            }
            if theta_max == f64::INFINITY {
                return LpOutcome::Infeasible { ray: rho };
            }
            let mut q = usize::MAX;
            let mut best = 0.0;
            for j in 0..total {
                let st = self.basis.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] || !eligible(st, alpha[j], to_lower) {
                    continue;
                }
                if slack_of(st, self.d[j]) / alpha[j].abs() <= theta_max && alpha[j].abs() > best {
                    best = alpha[j].abs();
                    q = j;
                }
            }
            if q == usize::MAX {
                return fallback.take().unwrap_or(LpOutcome::Failed);
            }

            let col = self.column(q);
            let piv = col[r];
            if (piv - alpha[q]).abs() > 1e-7 * (1.0 + piv.abs()) || piv.abs() < PIVOT_TOL {
                // the row and column disagree: refactor and retry
                if self.since_reinvert == 0 || !self.reinvert() {
                    return fallback.take().unwrap_or(LpOutcome::Failed);
                }
                continue;
            }

            // primal step
            let t = (self.x[p] - target) / piv;
            for (i, &j) in self.basis.head.iter().enumerate() {
                self.x[j] -= t * col[i];
            }
            self.x[q] += t;
            self.x[p] = target;

            // dual step
            let theta = self.d[q] / alpha[q];
            for j in 0..total {
                if self.basis.status[j] != VarStatus::Basic && alpha[j] != 0.0 {
                    self.d[j] -= theta * alpha[j];
                }
            }
            self.d[q] = 0.0;
            self.d[p] = -theta;
            self.basis.status[p] = if to_lower { VarStatus::Lower } else { VarStatus::Upper };
            self.basis.status[q] = VarStatus::Basic;
            self.basis.head[r] = q;

            // basis inverse update
            let prow: Vec<f64> = self.binv[r * m..(r + 1) * m].iter().map(|v| v / piv).collect();
            for i in 0..m {
                let f = col[i];
                if i == r || f == 0.0 {
                    continue;
                }
                let row = &mut self.binv[i * m..(i + 1) * m];
                for (b, pv) in row.iter_mut().zip(&prow) {
                    *b -= f * pv;
                }
            }
            self.binv[r * m..(r + 1) * m].copy_from_slice(&prow);
            self.since_reinvert += 1;

            self.flip_bounds();
        }
        fallback.unwrap_or(LpOutcome::Failed)
    }

    /// Move nonbasic variables whose reduced cost changed sign to their other
    /// bound and update the basic values.
    fn flip_bounds(&mut self) {
        let m = self.m();
        let mut w = vec![0.0; m];
        let mut any = false;
        for j in 0..self.a.total() {
            let st = self.basis.status[j];
            let new = match st {
                VarStatus::Lower if self.d[j] < -DUAL_TOL => VarStatus::Upper,
                VarStatus::Upper if self.d[j] > DUAL_TOL => VarStatus::Lower,
                _ => continue,
            };
            if self.lo[j] == self.hi[j] {
                continue;
            }
            let v = if new == VarStatus::Upper { self.hi[j] } else { self.lo[j] };
            self.a.axpy(j, v - self.x[j], &mut w);
            self.x[j] = v;
            self.basis.status[j] = new;
            any = true;
        }
        if any {
            for (r, &j) in self.basis.head.iter().enumerate() {
                self.x[j] -= (0..m).map(|i| self.binv[r * m + i] * w[i]).sum::<f64>();
            }
        }
    }
}

/// Cost nudges toward the side each variable currently rests on, so that
/// no reduced cost starts at zero. The nudge is deterministic per column.
fn perturbation(cost: &[f64], warm: Option<&Basis>) -> Vec<f64> {
    cost.iter()
        .enumerate()
        .map(|(j, c)| {
            let h = (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
            let xi = PERTURBATION * (1.0 + c.abs()) * (1.0 + (h % 1024) as f64 / 1024.0);
            match warm.map(|b| b.status[j]) {
                Some(VarStatus::Upper) => -xi,
                _ => xi,
            }
        })
        .collect()
}

fn eligible(st: VarStatus, a: f64, to_lower: bool) -> bool {
    match (st, to_lower) {
        (VarStatus::Lower, true) | (VarStatus::Upper, false) => a < -PIVOT_TOL,
        (VarStatus::Upper, true) | (VarStatus::Lower, false) => a > PIVOT_TOL,
        _ => false,
    }
}

/// Distance of a reduced cost from changing sign, zero when already wrong.
fn slack_of(st: VarStatus, d: f64) -> f64 {
    match st {
        VarStatus::Lower => d.max(0.0),
        _ => (-d).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rows given densely; returns matrix and slack bounds appended to the
    /// structural ones.
    fn lp(rows: &[(&[f64], f64, f64)], lo: &[f64], hi: &[f64]) -> (LpMatrix, Vec<f64>, Vec<f64>) {
        let n = lo.len();
        let mut cols = vec![Vec::new(); n];
        let (mut l, mut u) = (lo.to_vec(), hi.to_vec());
        for (i, (row, rl, ru)) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    cols[j].push((i, *v));
                }
            }
            l.push(*rl);
            u.push(*ru);
        }
        (LpMatrix { m: rows.len(), n, cols }, l, u)
    }

    #[test]
    fn small_lp_optimum() {
        // min -x - y  s.t.  x + 2y <= 4, 3x + y <= 6, x, y in [0, 10]
        let (a, lo, hi) = lp(&[(&[1.0, 2.0], -100.0, 4.0), (&[3.0, 1.0], -100.0, 6.0)], &[0.0, 0.0], &[10.0, 10.0]);
        let cost = vec![-1.0, -1.0, 0.0, 0.0];
        let mut s = DualSimplex::new(&a, &cost, &lo, &hi, None).unwrap();
        let LpOutcome::Optimal { x, y } = s.run(f64::INFINITY, 1000) else {
            panic!("not optimal")
        };
        assert!((x[0] - 1.6).abs() < 1e-9 && (x[1] - 1.2).abs() < 1e-9, "{x:?}");
        let b = lagrangian_bound(&a, &cost, &lo, &hi, &y);
        assert!(b <= -2.8 + 1e-12 && b > -2.8 - 1e-9, "{b}");
    }

    #[test]
    fn infeasible_lp_has_certificate() {
        // x + y >= 5 with x, y in [0, 2]
        let (a, lo, hi) = lp(&[(&[1.0, 1.0], 5.0, 100.0)], &[0.0, 0.0], &[2.0, 2.0]);
        let cost = vec![1.0, 0.0, 0.0];
        let mut s = DualSimplex::new(&a, &cost, &lo, &hi, None).unwrap();
        let LpOutcome::Infeasible { ray } = s.run(f64::INFINITY, 1000) else {
            panic!("expected infeasible")
        };
        assert!(farkas_certifies(&a, &lo, &hi, &ray));
    }

    #[test]
    fn warm_start_after_bound_change() {
        let (a, lo, hi) = lp(&[(&[1.0, 2.0], -100.0, 4.0), (&[3.0, 1.0], -100.0, 6.0)], &[0.0, 0.0], &[10.0, 10.0]);
        let cost = vec![-1.0, -1.0, 0.0, 0.0];
        let mut s = DualSimplex::new(&a, &cost, &lo, &hi, None).unwrap();
        assert!(matches!(s.run(f64::INFINITY, 1000), LpOutcome::Optimal { .. }));
        let basis = s.basis();
        let mut hi2 = hi.clone();
        hi2[0] = 1.0;
        let mut s = DualSimplex::new(&a, &cost, &lo, &hi2, Some(&basis)).unwrap();
        let LpOutcome::Optimal { x, .. } = s.run(f64::INFINITY, 1000) else {
            panic!("not optimal")
        };
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.5).abs() < 1e-9, "{x:?}");
    }
}
