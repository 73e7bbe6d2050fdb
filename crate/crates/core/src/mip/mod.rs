//! Mixed-integer encodings of abstractions and networks, with a bundled
//! reference solver that reports certified bounds.
//!
//! The reference solver is a dual simplex inside best-bound branch and
//! bound. Every bound it returns is re-derived from LP multipliers as a
//! Lagrangian bound over the variable box, and every infeasible leaf carries
//! a checked Farkas ray, so numerical trouble in the simplex can loosen
//! results but never make them unsound.

mod bnb;
mod encode;
mod lp;
mod problem;
mod query;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::Interval;
use crate::nn::Network;

pub use bnb::{check_feasible, optimize, SolveLimits, SolveResult, SolveStatus, INTEGRALITY_TOL, WITNESS_TOL};
pub use encode::{Encoded, Encoder, Lin, PwlEncoding, PwlKind};
pub use problem::{MipProblem, Objective, Row, Sense, VarDef};
pub use query::{build_query, LinearAtom, QueryMode, QueryOptions, QueryVars};

/// Slack applied toward conservatism when a property threshold is checked.
pub const PROPERTY_SLACK: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MipError {
    #[error("unbounded operand: {0}")]
    Unbounded(String),
    #[error("inconsistent problem: {0}")]
    Inconsistent(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("solver: {0}")]
    Solver(String),
}

/// Pluggable solver backend. Implementations must allow independent
/// problems to be solved concurrently.
pub trait Solver: Send + Sync {
    fn name(&self) -> &str;
    fn optimize(&self, p: &MipProblem) -> SolveResult;
    fn check_feasible(&self, p: &MipProblem) -> SolveResult;
}

/// The bundled branch-and-bound solver.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSolver {
    pub limits: SolveLimits,
}

impl Solver for ReferenceSolver {
    fn name(&self) -> &str {
        "reference"
    }

    fn optimize(&self, p: &MipProblem) -> SolveResult {
        optimize(p, &self.limits)
    }

    fn check_feasible(&self, p: &MipProblem) -> SolveResult {
        check_feasible(p, &self.limits)
    }
}

/// Select a backend by name; only `reference` is bundled.
pub fn solver_by_name(name: &str, limits: SolveLimits) -> Result<ReferenceSolver, MipError> {
    match name {
        "reference" => Ok(ReferenceSolver { limits }),
        other => Err(MipError::Solver(format!("unknown solver backend `{other}`"))),
    }
}

/// Certified `[min, max]` of each objective variable, solving the `2k`
/// problems in parallel. `problem` must have no objective.
pub fn certified_ranges(solver: &dyn Solver, problem: &MipProblem, targets: &[usize]) -> Result<Vec<Interval>, MipError> {
    let jobs: Vec<(usize, Sense)> = targets
        .iter()
        .flat_map(|&v| [(v, Sense::Min), (v, Sense::Max)])
        .collect();
    let bounds: Vec<f64> = jobs
        .par_iter()
        .map(|&(v, sense)| {
            let mut p = problem.clone();
            p.set_objective(&[(v, 1.0)], 0.0, sense);
            let r = solver.optimize(&p);
            match r.status {
                SolveStatus::Optimal | SolveStatus::BoundOnly if r.bound.is_finite() => Ok(r.bound),
                SolveStatus::Infeasible => Err(MipError::Solver("range query is infeasible".into())),
                _ => Err(MipError::Solver(format!("no certified bound for `{}`", p.vars[v].name))),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(bounds
        .chunks(2)
        .zip(targets)
        .map(|(b, &v)| {
            // never report more than the declared bounds
            let d = &problem.vars[v];
            Interval::new(b[0].max(d.lo), b[1].min(d.hi))
        })
        .collect())
}

/// Exact output range of a network over a box, one MIP per output bound.
pub fn network_output_range(net: &Network, input: &[Interval], limits: &SolveLimits) -> Result<Vec<Interval>, MipError> {
    if input.len() != net.input_dim() {
        return Err(MipError::Inconsistent(format!(
            "network expects {} inputs, got {}",
            net.input_dim(),
            input.len()
        )));
    }
    let mut p = MipProblem::new();
    let xs: Vec<usize> = input
        .iter()
        .enumerate()
        .map(|(k, d)| p.add_var(&format!("in{k}"), d.lo, d.hi))
        .collect::<Result<_, _>>()?;
    let outs = Encoder::new(&mut p, "nn_").encode_network(net, &xs, &Default::default())?;
    certified_ranges(&ReferenceSolver { limits: limits.clone() }, &p, &outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overapprox::Relation;

    #[test]
    fn box_minimum() {
        let mut p = MipProblem::new();
        let x = p.add_var("x", 2.0, 5.0).unwrap();
        p.set_objective(&[(x, 1.0)], 0.0, Sense::Min);
        let r = optimize(&p, &SolveLimits::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.primal.unwrap() - 2.0).abs() < 1e-12);
        assert!(r.bound <= 2.0 && r.bound > 2.0 - 1e-9);
    }

    #[test]
    fn feasibility_checks() {
        let mut p = MipProblem::new();
        let x = p.add_var("x", 0.0, 1.0).unwrap();
        p.add_row(&[(x, 1.0)], Relation::Ge, 2.0).unwrap();
        assert_eq!(check_feasible(&p, &SolveLimits::default()).status, SolveStatus::Infeasible);

        let mut p = MipProblem::new();
        let x = p.add_var("x", 0.0, 1.0).unwrap();
        p.add_row(&[(x, 1.0)], Relation::Ge, 0.5).unwrap();
        let r = check_feasible(&p, &SolveLimits::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let w = r.witness.unwrap();
        assert!(w[x] >= 0.5 - 1e-9);
        p.check_witness(&w, WITNESS_TOL).unwrap();
    }

    #[test]
    fn relu_range() {
        let mut p = MipProblem::new();
        let z = p.add_var("z", -1.0, 2.0).unwrap();
        let e = Encoder::new(&mut p, "").encode_pwl(PwlKind::Relu, &[Lin::var(z)]).unwrap();
        assert_eq!(e.binaries.len(), 1);
        let r = certified_ranges(&ReferenceSolver::default(), &p, &[e.output]).unwrap();
        assert!((r[0].lo - 0.0).abs() < 1e-9 && (r[0].hi - 2.0).abs() < 1e-9, "{:?}", r);
    }

    #[test]
    fn relu_passthrough_and_dominated_max() {
        let mut p = MipProblem::new();
        let z = p.add_var("z", 1.0, 3.0).unwrap();
        let e = Encoder::new(&mut p, "").encode_pwl(PwlKind::Relu, &[Lin::var(z)]).unwrap();
        assert!(e.binaries.is_empty());
        assert_eq!(e.output, z);

        let x = p.add_var("x", 0.0, 1.0).unwrap();
        let y = p.add_var("y", 2.0, 3.0).unwrap();
        let e = Encoder::new(&mut p, "").encode_pwl(PwlKind::Max, &[Lin::var(x), Lin::var(y)]).unwrap();
        assert!(e.binaries.is_empty());
        assert_eq!(e.output, y);
    }

    #[test]
    fn lp_export_lists_binaries() {
        let mut p = MipProblem::new();
        let z = p.add_var("z", -1.0, 2.0).unwrap();
        Encoder::new(&mut p, "").encode_pwl(PwlKind::Relu, &[Lin::var(z)]).unwrap();
        let text = p.to_lp_string();
        assert!(text.contains("Binary\n b"), "{text}");
        assert!(text.ends_with("End\n"));
    }
}
