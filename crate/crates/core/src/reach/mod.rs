//! Reachable sets, bounded temporal properties and their adjudication.
//!
//! Boxes come from one-step concretization (solve min/max of each next-state
//! coordinate over a single abstraction) or from symbolic queries spanning
//! several abstractions. Properties are checked either against boxes or by
//! feasibility queries that append the negated property.

mod drivers;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, Expr, Interval};
use crate::mip::{LinearAtom, MipError, PROPERTY_SLACK};
use crate::nn::NnError;
use crate::overapprox::{OverapproxError, Relation, SystemSpec};

pub use drivers::{BoxKind, ClosedLoop, Counterexample, ReachParams, ReachSets, ResetPolicy, TimedBox};

/// Boxes are never narrower than this in any dimension.
pub const MIN_BOX_WIDTH: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error(transparent)]
    Overapprox(#[from] OverapproxError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid property: {0}")]
    Property(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid box: {0}")]
    Box(String),
}

/// Axis-aligned box over the state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateBox(pub Vec<Interval>);

impl StateBox {
    pub fn new(dims: Vec<Interval>) -> Result<StateBox, ReachError> {
        for (k, d) in dims.iter().enumerate() {
            if !(d.is_finite() && d.lo <= d.hi) {
                return Err(ReachError::Box(format!("dimension {k} is {d}")));
            }
        }
        Ok(StateBox(dims))
    }

    pub fn from_bounds(b: &[[f64; 2]]) -> Result<StateBox, ReachError> {
        StateBox::new(b.iter().map(|v| Interval::from(*v)).collect())
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims() && self.0.iter().zip(x).all(|(d, v)| d.contains(*v))
    }

    /// `other ⊆ self`, with `slack` allowed in every dimension.
    pub fn contains_box(&self, other: &StateBox, slack: f64) -> bool {
        self.0
            .iter()
            .zip(&other.0)
            .all(|(a, b)| a.lo - slack <= b.lo && b.hi <= a.hi + slack)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.0.iter().map(|d| d.width()).collect()
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.0.iter().map(|d| d.width().powi(2)).sum::<f64>().sqrt()
    }

    pub fn hull_point(&mut self, x: &[f64]) {
        for (d, v) in self.0.iter_mut().zip(x) {
            *d = Interval::new(d.lo.min(*v), d.hi.max(*v));
        }
    }

    /// Apply the width floor.
    pub fn floored(mut self) -> StateBox {
        for d in &mut self.0 {
            *d = d.with_min_width(MIN_BOX_WIDTH);
        }
        self
    }

    pub fn to_bounds(&self) -> Vec<[f64; 2]> {
        self.0.iter().map(|d| [d.lo, d.hi]).collect()
    }
}

impl fmt::Display for StateBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join(" × "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    /// Always, over the whole range.
    G,
    /// Eventually, somewhere in the range.
    F,
}

/// Property as written in query files: atoms are `lhs >= rhs` or
/// `lhs <= rhs` over state, parameter and measurement names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertySpec {
    pub modality: Modality,
    pub from: usize,
    pub to: usize,
    pub atoms: Vec<String>,
}

/// Compiled property: a conjunction of linear atoms over the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub modality: Modality,
    pub from: usize,
    pub to: usize,
    pub atoms: Vec<LinearAtom>,
    pub spec: PropertySpec,
}

impl Property {
    pub fn compile(spec: &PropertySpec, sys: &SystemSpec) -> Result<Property, ReachError> {
        if spec.from < 1 || spec.to < spec.from {
            return Err(ReachError::Property(format!("range [{}, {}] must satisfy 1 <= from <= to", spec.from, spec.to)));
        }
        if spec.atoms.is_empty() {
            return Err(ReachError::Property("no atoms".into()));
        }
        let atoms = spec.atoms.iter().map(|a| compile_atom(a, sys)).collect::<Result<_, _>>()?;
        Ok(Property {
            modality: spec.modality,
            from: spec.from,
            to: spec.to,
            atoms,
            spec: spec.clone(),
        })
    }

    pub fn holds_at(&self, x: &[f64]) -> bool {
        self.atoms.iter().all(|a| a.holds(x))
    }

    pub fn in_range(&self, t: usize) -> bool {
        self.from <= t && t <= self.to
    }
}

fn compile_atom(text: &str, sys: &SystemSpec) -> Result<LinearAtom, ReachError> {
    let bad = |m: String| ReachError::Property(format!("`{text}`: {m}"));
    let (split, relation) = match (text.find(">="), text.find("<=")) {
        (Some(i), None) => (i, Relation::Ge),
        (None, Some(i)) => (i, Relation::Le),
        _ => return Err(bad("expected exactly one `>=` or `<=`".into())),
    };
    let lhs = parse(&text[..split]).map_err(|e| bad(e.to_string()))?;
    let rhs = parse(&text[split + 2..]).map_err(|e| bad(e.to_string()))?;
    let diff = Expr::sub(lhs, rhs)
        .substitute(&|n| sys.measurements.get(n).cloned())
        .substitute(&|n| sys.parameters.get(n).map(|v| Expr::Const(*v)))
        .fold_constants();
    let form = diff.linear_form().ok_or_else(|| bad("not linear in the state".into()))?;
    let mut coeffs = vec![0.0; sys.states.len()];
    for (name, c) in &form.coeffs {
        let k = sys
            .states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| bad(format!("`{name}` is not a state")))?;
        coeffs[k] += c;
    }
    if coeffs.iter().all(|c| *c == 0.0) {
        return Err(bad("does not depend on the state".into()));
    }
    Ok(LinearAtom {
        coeffs,
        relation,
        rhs: -form.constant,
    })
}

/// Schedule of symbolic segment lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConcretizationSchedule(pub Vec<usize>);

impl ConcretizationSchedule {
    pub fn new(segments: Vec<usize>, horizon: usize) -> Result<Self, ReachError> {
        if segments.iter().any(|s| *s == 0) {
            return Err(ReachError::Schedule("segment lengths must be positive".into()));
        }
        let total: usize = segments.iter().sum();
        if total != horizon {
            return Err(ReachError::Schedule(format!("segments sum to {total}, horizon is {horizon}")));
        }
        Ok(ConcretizationSchedule(segments))
    }

    /// Every segment of length one: pure one-step chaining.
    pub fn concrete(horizon: usize) -> Self {
        ConcretizationSchedule(vec![1; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Holds,
    Fails,
    Inconclusive,
    Unknown,
}

impl VerdictStatus {
    pub fn label(self) -> &'static str {
        match self {
            VerdictStatus::Holds => "HOLDS",
            VerdictStatus::Fails => "FAILS",
            VerdictStatus::Inconclusive => "INCONCLUSIVE",
            VerdictStatus::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Timestep that decided the verdict, if any.
    pub step: Option<usize>,
    pub counterexample: Option<Counterexample>,
    /// Boxes computed along the way, if any.
    pub boxes: Vec<TimedBox>,
    pub note: String,
}

impl Verdict {
    fn new(status: VerdictStatus, step: Option<usize>, note: impl Into<String>) -> Verdict {
        Verdict {
            status,
            step,
            counterexample: None,
            boxes: Vec::new(),
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoxVsAtom {
    Inside,
    Outside,
    Straddles,
}

fn classify(atom: &LinearAtom, b: &StateBox) -> BoxVsAtom {
    let r = atom.range(&b.0);
    let (inside, outside) = match atom.relation {
        Relation::Ge => (r.lo >= atom.rhs + PROPERTY_SLACK, r.hi < atom.rhs - PROPERTY_SLACK),
        Relation::Le => (r.hi <= atom.rhs - PROPERTY_SLACK, r.lo > atom.rhs + PROPERTY_SLACK),
        Relation::Eq => (false, r.lo > atom.rhs || r.hi < atom.rhs),
    };
    if inside {
        BoxVsAtom::Inside
    } else if outside {
        BoxVsAtom::Outside
    } else {
        BoxVsAtom::Straddles
    }
}

/// Adjudicate a property from sound per-timestep boxes; `boxes[k]` is the
/// box at timestep `k + 1`.
///
/// `G` holds when every box in range lies inside the property region and is
/// otherwise inconclusive; failure is never claimed from boxes. `F` holds
/// when some box lies inside the goal and fails when every box in range is
/// disjoint from it.
pub fn evaluate_property(boxes: &[StateBox], p: &Property) -> Result<Verdict, ReachError> {
    if boxes.len() < p.to {
        return Err(ReachError::Property(format!(
            "property range ends at {} but only {} boxes were computed",
            p.to,
            boxes.len()
        )));
    }
    let range = (p.from..=p.to).map(|t| (t, &boxes[t - 1]));
    match p.modality {
        Modality::G => {
            for (t, b) in range {
                if p.atoms.iter().any(|a| classify(a, b) != BoxVsAtom::Inside) {
                    return Ok(Verdict::new(
                        VerdictStatus::Inconclusive,
                        Some(t),
                        format!("box at t={t} meets the complement of the property"),
                    ));
                }
            }
            Ok(Verdict::new(VerdictStatus::Holds, None, "every box lies inside the property region"))
        }
        Modality::F => {
            let mut all_disjoint = true;
            for (t, b) in range {
                let cls: Vec<BoxVsAtom> = p.atoms.iter().map(|a| classify(a, b)).collect();
                if cls.iter().all(|c| *c == BoxVsAtom::Inside) {
                    return Ok(Verdict::new(VerdictStatus::Holds, Some(t), format!("box at t={t} lies inside the goal")));
                }
                if !cls.contains(&BoxVsAtom::Outside) {
                    all_disjoint = false;
                }
            }
            if all_disjoint {
                Ok(Verdict::new(
                    VerdictStatus::Fails,
                    None,
                    "every box in range is disjoint from the goal: the goal is never reached",
                ))
            } else {
                Ok(Verdict::new(VerdictStatus::Inconclusive, None, "some box overlaps the goal without lying inside it"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> SystemSpec {
        SystemSpec::from_json(
            r#"{"name":"s","states":["x1","x2"],"controls":["u"],"parameters":{"c":2.0},
                "updates":["x1 + x2","x2 + u"],"measurements":{"y":"x1 - c*x2"}}"#,
        )
        .unwrap()
    }

    fn prop(modality: Modality, atoms: &[&str], to: usize) -> Property {
        let spec = PropertySpec {
            modality,
            from: 1,
            to,
            atoms: atoms.iter().map(|s| s.to_string()).collect(),
        };
        Property::compile(&spec, &sys()).unwrap()
    }

    #[test]
    fn atoms_compile_through_measurements() {
        let p = prop(Modality::G, &["y >= 1 + c"], 1);
        assert_eq!(p.atoms[0].coeffs, vec![1.0, -2.0]);
        assert_eq!(p.atoms[0].rhs, 3.0);
        assert!(Property::compile(
            &PropertySpec {
                modality: Modality::G,
                from: 1,
                to: 1,
                atoms: vec!["x1 * x2 >= 0".into()],
            },
            &sys()
        )
        .is_err());
    }

    #[test]
    fn halfspace_cases() {
        let p = prop(Modality::G, &["x1 >= -0.2167"], 1);
        let b = |lo: f64, hi: f64| StateBox(vec![Interval::new(lo, hi), Interval::new(0.0, 1.0)]);
        assert_eq!(evaluate_property(&[b(0.9, 1.3)], &p).unwrap().status, VerdictStatus::Holds);
        assert_eq!(evaluate_property(&[b(-0.3, 0.1)], &p).unwrap().status, VerdictStatus::Inconclusive);
        assert_eq!(evaluate_property(&[b(-0.5, -0.3)], &p).unwrap().status, VerdictStatus::Inconclusive);
        assert!(evaluate_property(&[], &p).is_err());
    }

    #[test]
    fn goal_never_reached() {
        let p = prop(Modality::F, &["x1 >= -0.6", "x1 <= 0.6", "x2 >= -0.2", "x2 <= 0.2"], 2);
        let far = StateBox(vec![Interval::new(5.0, 6.0), Interval::new(-4.0, -3.0)]);
        let near = StateBox(vec![Interval::new(-0.1, 0.1), Interval::new(-0.1, 0.1)]);
        assert_eq!(evaluate_property(&[far.clone(), far.clone()], &p).unwrap().status, VerdictStatus::Fails);
        assert_eq!(evaluate_property(&[far, near], &p).unwrap().status, VerdictStatus::Holds);
    }

    #[test]
    fn schedules() {
        assert!(ConcretizationSchedule::new(vec![5, 5], 10).is_ok());
        assert!(ConcretizationSchedule::new(vec![5, 4], 10).is_err());
        assert!(ConcretizationSchedule::new(vec![0, 10], 10).is_err());
        assert_eq!(ConcretizationSchedule::concrete(3).0, vec![1, 1, 1]);
    }
}
