//! Relational overapproximation of vector update functions.
//!
//! Each update component is rewritten into a chain of elementary
//! constraints, every smooth nonlinear constraint `v = f(x)` is replaced by
//! `ub = UB(x)`, `lb = LB(x)`, `v <= ub`, `v >= lb`, and interval domains are
//! propagated to all auxiliary variables. The result is a system of affine
//! and piecewise-linear relations that contains every true transition.

mod rewrite;
mod system;

use std::collections::BTreeMap;
use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

use crate::bounds1d::{overapprox_unary, ApproxParams, PwlBound};
use crate::expr::{
    convert_mul_div, eval_interval_with, evaluate_with, Elementary, Expr, ExprError, Interval,
};

pub use rewrite::rewrite;
pub use system::SystemSpec;

#[derive(Debug, Error)]
pub enum OverapproxError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid system: {0}")]
    System(String),
    #[error("missing domain for `{0}`")]
    MissingDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Eq => "=",
            Relation::Le => "<=",
            Relation::Ge => ">=",
        }
    }
}

/// A piecewise-linear bound of one variable, kept alongside its closed form
/// so encoders can use the breakpoints directly.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlDef {
    pub input: String,
    pub bound: PwlBound,
}

impl PwlDef {
    /// Exact range of the bound over `x`.
    pub fn range(&self, x: Interval) -> Interval {
        let mut lo = self.bound.eval(x.lo).min(self.bound.eval(x.hi));
        let mut hi = self.bound.eval(x.lo).max(self.bound.eval(x.hi));
        for (bx, by) in self.bound.xs.iter().zip(&self.bound.ys) {
            if x.contains(*bx) {
                lo = lo.min(*by);
                hi = hi.max(*by);
            }
        }
        Interval::new(lo, hi)
    }
}

/// `var (=|<=|>=) rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub var: String,
    pub relation: Relation,
    pub rhs: Expr,
    /// Names reserved for the upper and lower bound of a smooth nonlinear
    /// definition.
    pub bound_vars: Option<(String, String)>,
    pub pwl: Option<PwlDef>,
}

impl Constraint {
    pub fn eq(var: &str, rhs: Expr) -> Constraint {
        Constraint::new(var, Relation::Eq, rhs)
    }

    pub fn new(var: &str, relation: Relation, rhs: Expr) -> Constraint {
        Constraint {
            var: var.to_string(),
            relation,
            rhs,
            bound_vars: None,
            pwl: None,
        }
    }

    /// True when the right-hand side is affine.
    pub fn is_affine(&self) -> bool {
        self.rhs.is_affine()
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.var, self.relation.symbol(), self.rhs)
    }
}

pub type Domains = BTreeMap<String, Interval>;

/// Forward interval pass over a constraint chain.
///
/// Inputs come from `env`; every defined variable is added to it. Variables
/// bounded by inequalities start from their entry in `base` (if any) and are
/// tightened by each bound.
fn forward(constraints: &[Constraint], env: &mut Domains, base: &Domains) -> Result<(), OverapproxError> {
    for c in constraints {
        let value = {
            let lookup = |n: &str| env.get(n).copied();
            match &c.pwl {
                Some(def) => {
                    let x = lookup(&def.input).ok_or_else(|| OverapproxError::MissingDomain(def.input.clone()))?;
                    def.range(x)
                }
                None => {
                    let points = c.rhs.variables().iter().all(|v| matches!(lookup(v), Some(i) if i.width() == 0.0));
                    if points {
                        Interval::point(evaluate_with(&c.rhs, &|n| lookup(n).map(|i| i.lo))?)
                    } else {
                        eval_interval_with(&c.rhs, &lookup)?
                    }
                }
            }
        };
        match c.relation {
            Relation::Eq => {
                env.insert(c.var.clone(), value);
            }
            Relation::Le | Relation::Ge => {
                let cur = env
                    .get(&c.var)
                    .or_else(|| base.get(&c.var))
                    .copied()
                    .unwrap_or(Interval::new(f64::NEG_INFINITY, f64::INFINITY));
                let next = if c.relation == Relation::Le {
                    Interval::try_new(cur.lo, cur.hi.min(value.hi))
                } else {
                    Interval::try_new(cur.lo.max(value.lo), cur.hi)
                };
                // an empty result can only come from rounding at a touch point
                env.insert(c.var.clone(), next.unwrap_or(cur));
            }
        }
    }
    Ok(())
}

/// Interval domains of every variable in the chain, given domains of its
/// inputs.
pub fn propagate_ranges(constraints: &[Constraint], seeds: &Domains) -> Result<Domains, OverapproxError> {
    let mut env = seeds.clone();
    forward(constraints, &mut env, &Domains::new())?;
    Ok(env)
}

/// Replace every smooth nonlinear equality by piecewise-linear upper and
/// lower bounds over its operand's domain. Other constraints are copied.
pub fn approximate(
    constraints: &[Constraint],
    domains: &Domains,
    p: &ApproxParams,
) -> Result<(Vec<Constraint>, Domains), OverapproxError> {
    let mut out = Vec::with_capacity(constraints.len());
    let mut doms = domains.clone();
    for c in constraints {
        let Some((ub, lb)) = c.bound_vars.clone().filter(|_| c.relation == Relation::Eq) else {
            out.push(c.clone());
            continue;
        };
        let (op, arg) = Elementary::from_expr(&c.rhs)?;
        let Expr::Var(x) = arg else {
            return Err(OverapproxError::System(format!("operand of `{c}` is not a variable")));
        };
        let d = *domains.get(x).ok_or_else(|| OverapproxError::MissingDomain(x.clone()))?;
        let (upper, lower) = overapprox_unary(op, d, p)?;
        for (name, bound) in [(&ub, upper), (&lb, lower)] {
            let def = PwlDef {
                input: x.clone(),
                bound,
            };
            doms.insert(name.clone(), def.range(def.bound.domain()));
            let mut eq = Constraint::eq(name, def.bound.to_closed_form(arg)?);
            eq.pwl = Some(def);
            out.push(eq);
        }
        out.push(Constraint::new(&c.var, Relation::Le, Expr::var(ub.clone())));
        out.push(Constraint::new(&c.var, Relation::Ge, Expr::var(lb.clone())));
    }
    Ok((out, doms))
}

/// Relational overapproximation of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct OverApproximation {
    pub constraints: Vec<Constraint>,
    pub domains: Domains,
    /// State names followed by control names.
    pub inputs: Vec<String>,
    /// One variable per state dimension carrying the next value.
    pub outputs: Vec<String>,
}

impl OverApproximation {
    /// Sound enclosure of every output when the inputs are fixed to a point.
    pub fn envelope(&self, point: &BTreeMap<String, f64>) -> Result<Vec<Interval>, OverapproxError> {
        let mut env: Domains = point.iter().map(|(k, v)| (k.clone(), Interval::point(*v))).collect();
        forward(&self.constraints, &mut env, &self.domains)?;
        self.outputs
            .iter()
            .map(|o| env.get(o).copied().ok_or_else(|| OverapproxError::MissingDomain(o.clone())))
            .collect()
    }

    /// Number of smooth nonlinear relations that were bounded.
    pub fn bounded_count(&self) -> usize {
        self.constraints.iter().filter(|c| c.pwl.is_some()).count() / 2
    }

    pub fn to_json(&self) -> Value {
        let domains: serde_json::Map<String, Value> = self
            .domains
            .iter()
            .map(|(k, v)| (k.clone(), json!([v.lo, v.hi])))
            .collect();
        json!({
            "inputs": self.inputs,
            "outputs": self.outputs,
            "constraints": self.constraints.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "domains": domains,
        })
    }
}

/// Overapproximate one step of `s` over a state box and a control box.
///
/// Each dimension is converted (products and quotients eliminated),
/// rewritten, range-propagated and approximated independently; auxiliary
/// variables are prefixed `d<k>_` for dimension `k` (1-based).
pub fn overapproximate_dynamics(
    s: &SystemSpec,
    state_box: &[Interval],
    control_box: &[Interval],
    p: &ApproxParams,
) -> Result<OverApproximation, OverapproxError> {
    if state_box.len() != s.states.len() || control_box.len() != s.controls.len() {
        return Err(OverapproxError::System(format!(
            "box dimensions {}+{} do not match system {}+{}",
            state_box.len(),
            control_box.len(),
            s.states.len(),
            s.controls.len()
        )));
    }
    let mut seeds = Domains::new();
    for (name, d) in s.states.iter().chain(&s.controls).zip(state_box.iter().chain(control_box)) {
        if !d.is_finite() {
            return Err(OverapproxError::System(format!("domain of `{name}` is not finite: {d}")));
        }
        seeds.insert(name.clone(), *d);
    }
    let mut chain = Vec::new();
    let mut outputs = Vec::new();
    for (k, update) in s.resolved_updates().iter().enumerate() {
        let prefix = format!("d{}_", k + 1);
        let converted = convert_mul_div(update, &seeds, p.xi)?.expr.fold_constants();
        let (mut out, constraints) = rewrite(&converted, &prefix)?;
        chain.extend(constraints);
        if seeds.contains_key(&out) {
            // an update that is just an input variable still gets its own output
            let name = format!("{prefix}out");
            chain.push(Constraint::eq(&name, Expr::var(out)));
            out = name;
        }
        outputs.push(out);
    }
    let domains = propagate_ranges(&chain, &seeds)?;
    let (constraints, domains) = approximate(&chain, &domains, p)?;
    Ok(OverApproximation {
        constraints,
        domains,
        inputs: s.states.iter().chain(&s.controls).cloned().collect(),
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn table_chain() {
        let (out, cs) = rewrite(&parse("sin(x^2 + y - log(z))").unwrap(), "").unwrap();
        let text: Vec<String> = cs.iter().map(|c| c.to_string()).collect();
        assert_eq!(
            text,
            vec!["v3 = x^2.0", "v4 = v3 + y", "v7 = log(z)", "v8 = v4 - v7", "v11 = sin(v8)"]
        );
        assert_eq!(out, "v11");
    }

    #[test]
    fn lone_variable_and_affine() {
        let (out, cs) = rewrite(&parse("x").unwrap(), "").unwrap();
        assert_eq!((out.as_str(), cs.len()), ("x", 0));
        let (out, cs) = rewrite(&parse("2*x + 3").unwrap(), "").unwrap();
        assert_eq!(out, "v1");
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].to_string(), "v1 = 2.0 * x + 3.0");
    }

    #[test]
    fn products_must_be_converted_first() {
        assert!(rewrite(&parse("x * y").unwrap(), "").is_err());
    }

    #[test]
    fn ranges_of_simple_chains() {
        let seeds: Domains = [("x".to_string(), Interval::new(-1.0, 1.0))].into();
        let (_, cs) = rewrite(&parse("sin(x)").unwrap(), "").unwrap();
        let d = propagate_ranges(&cs, &seeds).unwrap();
        assert!((d["v3"].hi - 0.8414709848078965).abs() < 1e-12);
        let cs = vec![Constraint::eq("v", parse("x - x").unwrap())];
        let seeds: Domains = [("x".to_string(), Interval::new(0.0, 1.0))].into();
        let d = propagate_ranges(&cs, &seeds).unwrap();
        assert!(d["v"].lo <= -1.0 && d["v"].hi >= 1.0);
    }

    #[test]
    fn approximation_structure() {
        let (_, cs) = rewrite(&parse("sin(x^2 + y - log(z))").unwrap(), "").unwrap();
        let seeds: Domains = ["x", "y", "z"]
            .iter()
            .map(|n| (n.to_string(), Interval::new(1.0, 2.0)))
            .collect();
        let d = propagate_ranges(&cs, &seeds).unwrap();
        let (approx, doms) = approximate(&cs, &d, &ApproxParams::with_segments(2)).unwrap();
        let heads: Vec<String> = approx.iter().map(|c| format!("{} {}", c.var, c.relation.symbol())).collect();
        assert_eq!(
            heads,
            vec![
                "v1 =", "v2 =", "v3 <=", "v3 >=", "v4 =", "v5 =", "v6 =", "v7 <=", "v7 >=", "v8 =",
                "v9 =", "v10 =", "v11 <=", "v11 >="
            ]
        );
        assert_eq!(approx[2].rhs, Expr::var("v1"));
        assert!(approx.iter().all(|c| c.rhs.is_affine() || c.pwl.is_some()));
        for c in &approx {
            assert!(doms.contains_key(&c.var), "{}", c.var);
        }
    }
}
