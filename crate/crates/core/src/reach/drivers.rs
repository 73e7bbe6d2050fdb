//! Closed-loop reachability and feasibility drivers.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds1d::ApproxParams;
use crate::mip::{
    build_query, certified_ranges, LinearAtom, MipError, MipProblem, QueryMode, QueryOptions, QueryVars,
    ReferenceSolver, Sense, SolveLimits, SolveStatus, Solver, PROPERTY_SLACK,
};
use crate::nn::{Network, RangeMethod};
use crate::overapprox::{overapproximate_dynamics, OverApproximation, Relation, SystemSpec};

use super::{ConcretizationSchedule, Modality, Property, ReachError, StateBox, Verdict, VerdictStatus};

/// Knobs shared by every driver.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachParams {
    pub approx: ApproxParams,
    /// How the control box fed to the dynamics abstraction is bounded.
    pub control_range: RangeMethod,
    pub limits: SolveLimits,
    pub query: QueryOptions,
}

impl Default for ReachParams {
    fn default() -> Self {
        ReachParams {
            approx: ApproxParams::default(),
            control_range: RangeMethod::Interval,
            limits: SolveLimits::default(),
            query: QueryOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxKind {
    /// One-step set from the previous box.
    Concrete,
    /// Set from a query spanning several steps.
    Symbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedBox {
    pub t: usize,
    #[serde(rename = "box")]
    pub bounds: StateBox,
    pub kind: BoxKind,
}

/// Output of [`ClosedLoop::compute_reach_sets`]. When a solve fails the
/// boxes computed so far are kept and `failure` says why.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachSets {
    pub boxes: Vec<TimedBox>,
    pub failure: Option<String>,
}

impl ReachSets {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn state_boxes(&self) -> Vec<StateBox> {
        self.boxes.iter().map(|b| b.bounds.clone()).collect()
    }
}

/// When the hybrid feasibility driver concretizes its frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetPolicy {
    Never,
    /// After this many steps since the last reset.
    Every(usize),
    /// When the one-step box diameter exceeds this factor times the
    /// diameter of the input set of the current segment.
    Growth(f64),
}

impl Default for ResetPolicy {
    fn default() -> Self {
        ResetPolicy::Every(5)
    }
}

/// Trace of the abstraction that violates a property, with its exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    /// Timestep at which the property is violated.
    pub step: usize,
    /// Index of the violated atom.
    pub atom: usize,
    /// Timestep of the query's first state; nonzero after a reset.
    pub start_step: usize,
    /// Abstract states from `start_step` to `step`.
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Exact closed-loop trajectory from the same initial state.
    pub replay: Vec<Vec<f64>>,
    /// The replay starts in the initial set and violates the property.
    pub real: bool,
}

/// A system, its controller and analysis settings.
#[derive(Clone)]
pub struct ClosedLoop {
    pub system: SystemSpec,
    pub controller: Network,
    pub params: ReachParams,
    solver: Arc<dyn Solver>,
}

enum Step<T> {
    Done(T),
    Unknown(String),
}

fn soft<T>(r: Result<T, ReachError>) -> Result<Step<T>, ReachError> {
    match r {
        Ok(v) => Ok(Step::Done(v)),
        Err(e @ (ReachError::Mip(MipError::Solver(_)) | ReachError::Overapprox(_))) => Ok(Step::Unknown(e.to_string())),
        Err(e) => Err(e),
    }
}

macro_rules! done_or {
    ($e:expr, $u:ident => $on_unknown:expr) => {
        match soft($e)? {
            Step::Done(v) => v,
            Step::Unknown($u) => $on_unknown,
        }
    };
}

impl ClosedLoop {
    pub fn new(system: SystemSpec, controller: Network, params: ReachParams) -> Result<ClosedLoop, ReachError> {
        system.validate()?;
        if controller.input_dim() != system.states.len() || controller.output_dim() != system.controls.len() {
            return Err(ReachError::Box(format!(
                "controller maps {} -> {} but the system has {} states and {} controls",
                controller.input_dim(),
                controller.output_dim(),
                system.states.len(),
                system.controls.len()
            )));
        }
        let solver = Arc::new(ReferenceSolver {
            limits: params.limits.clone(),
        });
        Ok(ClosedLoop {
            system,
            controller,
            params,
            solver,
        })
    }

    pub fn with_solver(mut self, solver: Arc<dyn Solver>) -> ClosedLoop {
        self.solver = solver;
        self
    }

    pub fn solver_name(&self) -> &str {
        self.solver.name()
    }

    fn check_box(&self, b: &StateBox) -> Result<(), ReachError> {
        if b.dims() != self.system.states.len() {
            return Err(ReachError::Box(format!(
                "box has {} dimensions, system has {} states",
                b.dims(),
                self.system.states.len()
            )));
        }
        StateBox::new(b.0.clone()).map(|_| ())
    }

    /// Abstraction of one closed-loop step over a state box.
    pub fn overapproximate(&self, b: &StateBox) -> Result<OverApproximation, ReachError> {
        let controls = self.controller.output_range(&b.0, self.params.control_range)?;
        let controls: Vec<_> = controls.iter().map(|d| d.with_min_width(super::MIN_BOX_WIDTH)).collect();
        Ok(overapproximate_dynamics(&self.system, &b.0, &controls, &self.params.approx)?)
    }

    /// Certified box of the state after `n` steps through `approxs`
    /// starting anywhere in `input`.
    pub fn symbolic_reach(&self, approxs: &[OverApproximation], input: &StateBox, n: usize) -> Result<StateBox, ReachError> {
        let (p, vars) = build_query(approxs, &self.controller, &input.0, n, &QueryMode::Plain, &self.params.query)?;
        let ranges = certified_ranges(self.solver.as_ref(), &p, &vars.states[n])?;
        Ok(StateBox(ranges).floored())
    }

    pub fn one_step_reach(&self, approx: &OverApproximation, input: &StateBox) -> Result<StateBox, ReachError> {
        self.symbolic_reach(std::slice::from_ref(approx), input, 1)
    }

    /// Hybrid-symbolic reachable sets: within each schedule segment of
    /// length `n`, `n − 1` one-step sets followed by one symbolic set from
    /// the segment's entry box.
    pub fn compute_reach_sets(&self, initial: &StateBox, schedule: &ConcretizationSchedule) -> Result<ReachSets, ReachError> {
        self.check_box(initial)?;
        ConcretizationSchedule::new(schedule.0.clone(), schedule.horizon())?;
        let mut r = initial.clone().floored();
        let mut boxes = Vec::with_capacity(schedule.horizon());
        let fail = |boxes: Vec<TimedBox>, why: String| Ok(ReachSets { boxes, failure: Some(why) });
        for &n in &schedule.0 {
            let sym_input = r.clone();
            let mut approxs = Vec::with_capacity(n);
            for _ in 1..n {
                let a = done_or!(self.overapproximate(&r), why => return fail(boxes, why));
                r = done_or!(self.one_step_reach(&a, &r), why => return fail(boxes, why));
                approxs.push(a);
                boxes.push(TimedBox {
                    t: boxes.len() + 1,
                    bounds: r.clone(),
                    kind: BoxKind::Concrete,
                });
            }
            approxs.push(done_or!(self.overapproximate(&r), why => return fail(boxes, why)));
            r = done_or!(self.symbolic_reach(&approxs, &sym_input, n), why => return fail(boxes, why));
            boxes.push(TimedBox {
                t: boxes.len() + 1,
                bounds: r.clone(),
                kind: if n == 1 { BoxKind::Concrete } else { BoxKind::Symbolic },
            });
        }
        Ok(ReachSets { boxes, failure: None })
    }

    /// Invariant feasibility: at each step the negated property is appended
    /// to a query spanning every abstraction so far, always from `initial`.
    pub fn feasibility(&self, initial: &StateBox, n: usize, p: &Property) -> Result<Verdict, ReachError> {
        self.hs_feasibility(initial, n, p, ResetPolicy::Never)
    }

    /// Feasibility with periodic concretization of the frontier.
    pub fn hs_feasibility(&self, initial: &StateBox, n: usize, p: &Property, policy: ResetPolicy) -> Result<Verdict, ReachError> {
        self.check_box(initial)?;
        if p.atoms.iter().any(|a| a.coeffs.len() != initial.dims()) {
            return Err(ReachError::Property("atom dimension does not match the state".into()));
        }
        if n < p.from {
            return Err(ReachError::Property(format!("horizon {n} ends before the property range starts at {}", p.from)));
        }
        if let ResetPolicy::Every(0) = policy {
            return Err(ReachError::Schedule("reset interval must be positive".into()));
        }
        let last = n.min(p.to);
        let truncated = last < p.to;
        let initial = initial.clone().floored();
        let mut input = initial.clone();
        let mut r = initial.clone();
        let mut approxs: Vec<OverApproximation> = Vec::new();
        let mut offset = 0;
        let mut boxes = Vec::new();
        let unknown = |boxes: Vec<TimedBox>, t: usize, why: String| {
            let mut v = Verdict::new(VerdictStatus::Unknown, Some(t), format!("t={t}: {why}"));
            v.boxes = boxes;
            Ok(v)
        };
        loop {
            let i = approxs.len() + 1;
            let t = offset + i;
            approxs.push(done_or!(self.overapproximate(&r), why => return unknown(boxes, t, why)));
            if p.in_range(t) {
                let outcome = done_or!(self.multi_step_feas(&approxs, &input, i, p), why => return unknown(boxes, t, why));
                match (p.modality, outcome) {
                    (Modality::G, Some(mut cex)) => {
                        cex.step = t;
                        cex.start_step = offset;
                        cex.real = self.replay_violates(&mut cex, &input, p) && offset == 0;
                        let status = if cex.real { VerdictStatus::Fails } else { VerdictStatus::Inconclusive };
                        let note = if cex.real {
                            format!("t={t}: counterexample confirmed by exact replay")
                        } else {
                            format!("t={t}: abstract counterexample is spurious under exact replay")
                        };
                        let mut v = Verdict::new(status, Some(t), note);
                        v.counterexample = Some(cex);
                        v.boxes = boxes;
                        return Ok(v);
                    }
                    (Modality::F, None) => {
                        let mut v = Verdict::new(VerdictStatus::Holds, Some(t), format!("t={t}: every abstract trace satisfies the goal"));
                        v.boxes = boxes;
                        return Ok(v);
                    }
                    _ => {}
                }
            }
            if t >= last {
                break;
            }
            let reset = match policy {
                ResetPolicy::Never => false,
                ResetPolicy::Every(k) => i >= k,
                ResetPolicy::Growth(_) => false,
            };
            let next = if reset {
                None
            } else {
                Some(done_or!(self.one_step_reach(approxs.last().unwrap(), &r), why => return unknown(boxes, t, why)))
            };
            let grown = match (policy, &next) {
                (ResetPolicy::Growth(f), Some(b)) => b.diameter() > f * input.diameter(),
                _ => false,
            };
            if reset || grown {
                r = done_or!(self.symbolic_reach(&approxs, &input, i), why => return unknown(boxes, t, why));
                input = r.clone();
                offset = t;
                approxs.clear();
                boxes.push(TimedBox {
                    t,
                    bounds: r.clone(),
                    kind: BoxKind::Symbolic,
                });
            } else {
                r = next.expect("one-step box computed");
                boxes.push(TimedBox {
                    t,
                    bounds: r.clone(),
                    kind: BoxKind::Concrete,
                });
            }
        }
        let suffix = if truncated { format!(" (range clipped to t<={last})") } else { String::new() };
        let mut v = match p.modality {
            Modality::G => Verdict::new(VerdictStatus::Holds, None, format!("negated property infeasible at every step{suffix}")),
            Modality::F => Verdict::new(
                VerdictStatus::Inconclusive,
                None,
                format!("some abstract trace misses the goal at every step{suffix}"),
            ),
        };
        v.boxes = boxes;
        Ok(v)
    }

    /// Decide whether some trace through `approxs` from `input` violates an
    /// atom of `p` after `i` steps. Returns the first violating trace by atom
    /// index, or `None` when every negated atom is infeasible.
    fn multi_step_feas(
        &self,
        approxs: &[OverApproximation],
        input: &StateBox,
        i: usize,
        p: &Property,
    ) -> Result<Option<Counterexample>, ReachError> {
        let results: Vec<Result<Option<Counterexample>, ReachError>> = p
            .atoms
            .par_iter()
            .enumerate()
            .map(|(k, atom)| self.violation(approxs, input, i, k, atom))
            .collect();
        for r in results {
            if let Some(c) = r? {
                return Ok(Some(c));
            }
        }
        Ok(None)
    }

    fn violation(
        &self,
        approxs: &[OverApproximation],
        input: &StateBox,
        i: usize,
        k: usize,
        atom: &LinearAtom,
    ) -> Result<Option<Counterexample>, ReachError> {
        let neg = atom.negated(PROPERTY_SLACK)?;
        let (q, vars) = build_query(approxs, &self.controller, &input.0, i, &QueryMode::Violation(neg), &self.params.query)?;
        let r = self.solver.check_feasible(&q);
        match r.status {
            SolveStatus::Infeasible => Ok(None),
            SolveStatus::Optimal => {
                let w = r.witness.ok_or_else(|| MipError::Solver("feasible without a witness".into()))?;
                // A feasible point tends to sit on the slack boundary, where the
                // exact replay may just satisfy the atom; prefer the deepest one.
                let w = self.deepest_violation(q, &vars, i, atom).unwrap_or(w);
                let pick = |ids: &Vec<usize>| ids.iter().map(|&v| w[v]).collect::<Vec<f64>>();
                Ok(Some(Counterexample {
                    step: i,
                    atom: k,
                    start_step: 0,
                    states: vars.states.iter().map(pick).collect(),
                    controls: vars.controls.iter().map(pick).collect(),
                    replay: Vec::new(),
                    real: false,
                }))
            }
            _ => Err(MipError::Solver(format!("feasibility undecided after {} nodes", r.nodes)).into()),
        }
    }

    fn deepest_violation(&self, mut q: MipProblem, vars: &QueryVars, i: usize, atom: &LinearAtom) -> Option<Vec<f64>> {
        let terms: Vec<(usize, f64)> = vars.states[i].iter().zip(&atom.coeffs).map(|(&v, &c)| (v, c)).collect();
        let sense = match atom.relation {
            Relation::Ge => Sense::Min,
            _ => Sense::Max,
        };
        q.set_objective(&terms, 0.0, sense);
        self.solver.optimize(&q).witness
    }

    /// Replay the abstract trace's first state through the exact closed
    /// loop, store the trajectory and report whether it violates `p`.
    fn replay_violates(&self, cex: &mut Counterexample, input: &StateBox, p: &Property) -> bool {
        // the witness may sit just outside the box by the solver tolerance
        let x0: Vec<f64> = cex.states[0].iter().zip(&input.0).map(|(v, d)| v.clamp(d.lo, d.hi)).collect();
        let Ok(traj) = self.rollout(&x0, cex.step - cex.start_step) else {
            return false;
        };
        cex.replay = traj;
        cex.replay.iter().enumerate().any(|(t, x)| p.in_range(cex.start_step + t) && !p.holds_at(x))
    }

    /// Exact closed-loop trajectory `x_0..=x_steps`.
    pub fn rollout(&self, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>, ReachError> {
        let mut xs = vec![x0.to_vec()];
        for _ in 0..steps {
            let x = xs.last().unwrap();
            let u = self.controller.forward(x)?;
            let next = self
                .system
                .step(x, &u)
                .map_err(|e| ReachError::Box(format!("exact step failed: {e}")))?;
            xs.push(next);
        }
        Ok(xs)
    }
}
