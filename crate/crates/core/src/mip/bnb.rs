//! Best-bound branch and bound over dual simplex relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::overapprox::Relation;

use super::lp::{farkas_certifies, lagrangian_bound, Basis, DualSimplex, LpMatrix, LpOutcome};
use super::problem::{MipProblem, Sense};

pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const WITNESS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveLimits {
    pub max_nodes: usize,
    pub time_limit: Option<Duration>,
    /// Stop when incumbent and bound are this close.
    pub gap_abs: f64,
    pub gap_rel: f64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            max_nodes: 1_000_000,
            time_limit: None,
            gap_abs: 1e-9,
            gap_rel: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Search closed with an incumbent (for feasibility checks: a witness).
    Optimal,
    /// Search closed with every leaf certified infeasible.
    Infeasible,
    /// A limit stopped the search; `bound` is still valid.
    BoundOnly,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective of the incumbent.
    pub primal: Option<f64>,
    /// Certified bound in the objective's sense: `≤` every feasible value
    /// when minimising, `≥` when maximising. Infinite when infeasible.
    pub bound: f64,
    pub witness: Option<Vec<f64>>,
    pub nodes: usize,
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    fixes: Vec<(usize, f64)>,
    basis: Option<Arc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    /// Max-heap order: lowest bound first, then deepest, then newest.
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&o.depth))
            .then(self.seq.cmp(&o.seq))
    }
}

/// Internal minimisation form.
struct Relaxation {
    a: LpMatrix,
    cost: Vec<f64>,
    constant: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Relaxation {
    fn new(p: &MipProblem) -> Relaxation {
        let n = p.vars.len();
        let m = p.rows.len();
        let mut cols = vec![Vec::new(); n];
        let mut lo: Vec<f64> = p.vars.iter().map(|v| v.lo).collect();
        let mut hi: Vec<f64> = p.vars.iter().map(|v| v.hi).collect();
        for (i, r) in p.rows.iter().enumerate() {
            let (mut al, mut ah, mut mag) = (0.0, 0.0, 0.0);
            for &(j, a) in &r.terms {
                cols[j].push((i, a));
                al += (a * lo[j]).min(a * hi[j]);
                ah += (a * lo[j]).max(a * hi[j]);
                mag += a.abs() * lo[j].abs().max(hi[j].abs());
            }
            let pad = 4.0 * (r.terms.len() + 2) as f64 * f64::EPSILON * mag;
            let (al, ah) = (al - pad, ah + pad);
            let (sl, sh) = match r.relation {
                Relation::Eq => (r.rhs, r.rhs),
                Relation::Le => (al, r.rhs.min(ah)),
                Relation::Ge => (r.rhs.max(al), ah),
            };
            lo.push(sl);
            hi.push(sh);
        }
        let mut cost = vec![0.0; n + m];
        let mut constant = 0.0;
        if let Some(o) = &p.objective {
            let s = if o.sense == Sense::Min { 1.0 } else { -1.0 };
            for &(j, a) in &o.terms {
                cost[j] += s * a;
            }
            constant = s * o.constant;
        }
        Relaxation {
            a: LpMatrix { m, n, cols },
            cost,
            constant,
            lo,
            hi,
        }
    }
}

enum NodeResult {
    Closed(f64),
    Incumbent(f64, Vec<f64>),
    Branch(f64, usize, f64, Arc<Basis>),
    Refix(f64, Vec<(usize, f64)>, Arc<Basis>),
    Unsolved,
}

struct Search<'p> {
    p: &'p MipProblem,
    r: Relaxation,
    binaries: Vec<usize>,
    limits: SolveLimits,
    stop_at_first: bool,
}

impl Search<'_> {
    fn gap(&self, incumbent: f64) -> f64 {
        self.limits.gap_abs.max(self.limits.gap_rel * incumbent.abs())
    }

    /// Solve from the parent's basis, and again from scratch if the warm
    /// solve fails or its certificate does not check.
    fn solve_node(&self, node: &Node, incumbent: f64) -> NodeResult {
        match self.solve_node_from(node, node.basis.as_deref(), incumbent) {
            NodeResult::Unsolved if node.basis.is_some() => self.solve_node_from(node, None, incumbent),
            r => r,
        }
    }

    fn solve_node_from(&self, node: &Node, warm: Option<&Basis>, incumbent: f64) -> NodeResult {
        let (mut lo, mut hi) = (self.r.lo.clone(), self.r.hi.clone());
        for &(j, v) in &node.fixes {
            lo[j] = v;
            hi[j] = v;
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return NodeResult::Closed(f64::INFINITY);
        }
        let n = self.r.a.n;
        let cutoff = if incumbent.is_finite() {
            incumbent - self.gap(incumbent) - self.r.constant
        } else {
            f64::INFINITY
        };
        let Some(mut lp) = DualSimplex::new(&self.r.a, &self.r.cost, &lo, &hi, warm) else {
            return NodeResult::Unsolved;
        };
        let max_iter = 50 * (self.r.a.total() + 10);
        match lp.run(cutoff, max_iter) {
            LpOutcome::Failed => NodeResult::Unsolved,
            LpOutcome::Infeasible { ray } => {
                if farkas_certifies(&self.r.a, &lo, &hi, &ray) {
                    NodeResult::Closed(f64::INFINITY)
                } else {
                    NodeResult::Unsolved
                }
            }
            LpOutcome::Cutoff { y } => {
                NodeResult::Closed(lagrangian_bound(&self.r.a, &self.r.cost, &lo, &hi, &y) + self.r.constant)
            }
            LpOutcome::Optimal { x, y } => {
                let bound = (lagrangian_bound(&self.r.a, &self.r.cost, &lo, &hi, &y) + self.r.constant).max(node.bound);
                let x = &x[..n];
                let basis = Arc::new(lp.basis());
                if bound >= incumbent - self.gap(incumbent) && !self.stop_at_first {
                    return NodeResult::Closed(bound);
                }
                let mut frac = None;
                let mut worst = INTEGRALITY_TOL;
                for &j in &self.binaries {
                    let f = (x[j] - x[j].round()).abs();
                    if f > worst {
                        worst = f;
                        frac = Some(j);
                    }
                }
                if let Some(j) = frac {
                    return NodeResult::Branch(bound, j, x[j], basis);
                }
                if self.binaries.iter().any(|&j| lo[j] != hi[j]) {
                    let fixes = self.binaries.iter().map(|&j| (j, x[j].round())).collect();
                    return NodeResult::Refix(bound, fixes, basis);
                }
                let mut w = x.to_vec();
                for &j in &self.binaries {
                    w[j] = w[j].round();
                }
                for (v, d) in w.iter_mut().zip(&self.p.vars) {
                    *v = v.clamp(d.lo, d.hi);
                }
                if self.p.check_witness(&w, WITNESS_TOL).is_err() {
                    return NodeResult::Unsolved;
                }
                let value = self.p.objective.as_ref().map_or(0.0, |o| {
                    let v = o.value(&w);
                    if o.sense == Sense::Min {
                        v
                    } else {
                        -v
                    }
                });
                NodeResult::Incumbent(bound.min(value), w)
            }
        }
    }

    fn run(&self) -> SolveResult {
        let start = Instant::now();
        let mut heap = BinaryHeap::new();
        let mut seq = 0;
        heap.push(Node {
            bound: f64::NEG_INFINITY,
            depth: 0,
            seq,
            fixes: Vec::new(),
            basis: None,
        });
        let mut incumbent = f64::INFINITY;
        let mut witness: Option<Vec<f64>> = None;
        let mut leaf_bound = f64::INFINITY;
        let mut exact = true;
        let mut nodes = 0;
        let mut stopped = false;
        while let Some(node) = heap.pop() {
            if self.stop_at_first && witness.is_some() {
                heap.push(node);
                break;
            }
            if node.bound >= incumbent - self.gap(incumbent) {
                leaf_bound = leaf_bound.min(node.bound);
                continue;
            }
            let over_time = self.limits.time_limit.is_some_and(|t| start.elapsed() > t);
            if nodes >= self.limits.max_nodes || over_time {
                heap.push(node);
                stopped = true;
                break;
            }
            nodes += 1;
            match self.solve_node(&node, incumbent) {
                NodeResult::Closed(b) => leaf_bound = leaf_bound.min(b),
                NodeResult::Unsolved => {
                    exact = false;
                    leaf_bound = leaf_bound.min(node.bound);
                }
                NodeResult::Incumbent(b, w) => {
                    leaf_bound = leaf_bound.min(b);
                    let value = self.p.objective.as_ref().map_or(0.0, |o| {
                        let v = o.value(&w);
                        if o.sense == Sense::Min {
                            v
                        } else {
                            -v
                        }
                    });
                    if value < incumbent || witness.is_none() {
                        incumbent = value;
                        witness = Some(w);
                    }
                }
                NodeResult::Refix(b, fixes, basis) => {
                    seq += 1;
                    heap.push(Node {
                        bound: b,
                        depth: node.depth + 1,
                        seq,
                        fixes,
                        basis: Some(basis),
                    });
                }
                NodeResult::Branch(b, j, v, basis) => {
                    // the child nearer the relaxation value is explored first
                    let first = v.round();
                    for val in [1.0 - first, first] {
                        seq += 1;
                        let mut fixes = node.fixes.clone();
                        fixes.push((j, val));
                        heap.push(Node {
                            bound: b,
                            depth: node.depth + 1,
                            seq,
                            fixes,
                            basis: Some(basis.clone()),
                        });
                    }
                }
            }
        }
        let open = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
        let bound = leaf_bound.min(open);
        let closed = heap.is_empty() && !stopped;
        let status = if self.stop_at_first {
            match (&witness, closed && exact) {
                (Some(_), _) => SolveStatus::Optimal,
                (None, true) => SolveStatus::Infeasible,
                (None, false) => SolveStatus::Error,
            }
        } else if !(closed && exact) {
            SolveStatus::BoundOnly
        } else if witness.is_some() {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        };
        let maximise = self.p.objective.as_ref().is_some_and(|o| o.sense == Sense::Max);
        let flip = |v: f64| if maximise { -v } else { v };
        let bound = if status == SolveStatus::Infeasible { f64::INFINITY } else { bound };
        SolveResult {
            status,
            primal: witness.as_ref().and(self.p.objective.as_ref()).map(|_| flip(incumbent)),
            bound: flip(bound),
            witness,
            nodes,
        }
    }
}

/// Optimise the objective; the certified bound is what downstream code uses.
pub fn optimize(p: &MipProblem, limits: &SolveLimits) -> SolveResult {
    search(p, limits, false)
}

/// Find any feasible assignment or prove there is none.
pub fn check_feasible(p: &MipProblem, limits: &SolveLimits) -> SolveResult {
    search(p, limits, true)
}

fn search(p: &MipProblem, limits: &SolveLimits, stop_at_first: bool) -> SolveResult {
    let s = Search {
        p,
        r: Relaxation::new(p),
        binaries: p.binaries(),
        limits: limits.clone(),
        stop_at_first,
    };
    s.run()
}
