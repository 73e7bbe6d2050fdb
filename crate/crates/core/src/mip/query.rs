//! Unrolled closed-loop queries over a chain of one-step abstractions.

use std::collections::BTreeMap;

use crate::bounds1d::{ApproxParams, Side};
use crate::expr::Interval;
use crate::nn::Network;
use crate::overapprox::{Constraint, OverApproximation, Relation};

use super::encode::{Encoder, Lin, PwlEncoding};
use super::problem::{MipProblem, Sense};
use super::MipError;

/// `Σ coeffs[k]·x_k (relation) rhs` over the state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAtom {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearAtom {
    pub fn holds(&self, x: &[f64]) -> bool {
        let v: f64 = self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        match self.relation {
            Relation::Le => v <= self.rhs,
            Relation::Ge => v >= self.rhs,
            Relation::Eq => v == self.rhs,
        }
    }

    /// Range of the left-hand side over a box.
    pub fn range(&self, b: &[Interval]) -> Interval {
        let (mut lo, mut hi) = (0.0, 0.0);
        for (a, d) in self.coeffs.iter().zip(b) {
            lo += (a * d.lo).min(a * d.hi);
            hi += (a * d.lo).max(a * d.hi);
        }
        Interval::new(lo, hi)
    }

    /// The closed complement, enlarged by `slack` so that a proof of its
    /// emptiness clears the threshold with margin.
    pub fn negated(&self, slack: f64) -> Result<LinearAtom, MipError> {
        let (relation, rhs) = match self.relation {
            Relation::Ge => (Relation::Le, self.rhs + slack),
            Relation::Le => (Relation::Ge, self.rhs - slack),
            Relation::Eq => return Err(MipError::Unsupported("negating an equality atom".into())),
        };
        Ok(LinearAtom {
            coeffs: self.coeffs.clone(),
            relation,
            rhs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryMode {
    /// Objective `±x_{n,k}`.
    Optimize { dim: usize, sense: Sense },
    /// No objective; the atom (typically a negated property) is imposed on
    /// the final state.
    Violation(LinearAtom),
    Plain,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryOptions {
    pub pwl: PwlEncoding,
    /// Resolution for tanh neurons.
    pub tanh: ApproxParams,
    /// Extra linear constraints on the initial state.
    pub input_atoms: Vec<LinearAtom>,
}

/// Variable ids of the unrolled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVars {
    /// `states[t][k]` for `t = 0..=n`.
    pub states: Vec<Vec<usize>>,
    /// `controls[t][k]` for `t = 0..n`.
    pub controls: Vec<Vec<usize>>,
}

/// Unroll `n` steps: at step `t` the network maps `x_t` to `u_t` and
/// `approxs[t]` relates `(x_t, u_t)` to `x_{t+1}`.
pub fn build_query(
    approxs: &[OverApproximation],
    net: &Network,
    input: &[Interval],
    n: usize,
    mode: &QueryMode,
    opts: &QueryOptions,
) -> Result<(MipProblem, QueryVars), MipError> {
    if approxs.len() != n {
        return Err(MipError::Inconsistent(format!("{} approximations for horizon {n}", approxs.len())));
    }
    let dim = input.len();
    let mut p = MipProblem::new();
    let mut x: Vec<usize> = Vec::with_capacity(dim);
    let state_names: Vec<String> = match approxs.first() {
        Some(a) => a.inputs[..a.outputs.len()].to_vec(),
        None => (1..=dim).map(|k| format!("x{k}")).collect(),
    };
    if state_names.len() != dim {
        return Err(MipError::Inconsistent(format!("input box has {dim} dimensions, system has {}", state_names.len())));
    }
    for (name, d) in state_names.iter().zip(input) {
        x.push(p.add_var(&format!("t0_{name}"), d.lo, d.hi)?);
    }
    {
        let mut enc = Encoder::new(&mut p, "t0_in_");
        for atom in &opts.input_atoms {
            enc.relate(&atom_lin(atom, &x), atom.relation, &Lin::constant(atom.rhs))?;
        }
    }
    let mut vars = QueryVars {
        states: vec![x.clone()],
        controls: Vec::new(),
    };
    for (t, a) in approxs.iter().enumerate() {
        if a.outputs.len() != dim {
            return Err(MipError::Inconsistent(format!("step {t} abstraction has {} outputs", a.outputs.len())));
        }
        let (states, controls) = a.inputs.split_at(dim);
        for (name, &v) in states.iter().zip(&x) {
            let d = domain(a, name)?;
            p.tighten(v, d.lo, d.hi)
                .map_err(|e| MipError::Inconsistent(format!("step {t}: {e}")))?;
        }
        let u = {
            let mut enc = Encoder::new(&mut p, &format!("t{t}_nn_"));
            enc.encode_network(net, &x, &opts.tanh)?
        };
        if u.len() != controls.len() {
            return Err(MipError::Inconsistent(format!(
                "network has {} outputs, system has {} controls",
                u.len(),
                controls.len()
            )));
        }
        for (name, &v) in controls.iter().zip(&u) {
            let d = domain(a, name)?;
            p.tighten(v, d.lo, d.hi)
                .map_err(|e| MipError::Inconsistent(format!("step {t}: control {e}")))?;
        }
        let mut env: BTreeMap<String, usize> = BTreeMap::new();
        for (name, v) in states.iter().zip(&x).chain(controls.iter().zip(&u)) {
            env.insert(name.clone(), *v);
        }
        for c in &a.constraints {
            for name in std::iter::once(&c.var).chain(c.rhs.variables().iter()) {
                if !env.contains_key(name) {
                    let d = domain(a, name)?;
                    env.insert(name.clone(), p.add_var(&format!("t{t}_{name}"), d.lo, d.hi)?);
                }
            }
        }
        let mut enc = Encoder::new(&mut p, &format!("t{t}_enc_"));
        enc.pwl = opts.pwl;
        for (i, c) in a.constraints.iter().enumerate() {
            encode_constraint(&mut enc, c, &a.constraints[i + 1..], &env)?;
        }
        x = a
            .outputs
            .iter()
            .map(|o| env.get(o).copied().ok_or_else(|| MipError::Inconsistent(format!("output `{o}` undefined"))))
            .collect::<Result<_, _>>()?;
        vars.controls.push(u);
        vars.states.push(x.clone());
    }
    match mode {
        QueryMode::Optimize { dim: k, sense } => {
            let v = *x
                .get(*k)
                .ok_or_else(|| MipError::Inconsistent(format!("objective dimension {k} out of range")))?;
            p.set_objective(&[(v, 1.0)], 0.0, *sense);
        }
        QueryMode::Violation(atom) => {
            let mut enc = Encoder::new(&mut p, &format!("t{n}_prop_"));
            enc.relate(&atom_lin(atom, &x), atom.relation, &Lin::constant(atom.rhs))?;
        }
        QueryMode::Plain => {}
    }
    Ok((p, vars))
}

fn domain(a: &OverApproximation, name: &str) -> Result<Interval, MipError> {
    a.domains
        .get(name)
        .copied()
        .ok_or_else(|| MipError::Inconsistent(format!("no domain for `{name}`")))
}

fn atom_lin(atom: &LinearAtom, x: &[usize]) -> Lin {
    Lin {
        terms: atom.coeffs.iter().zip(x).filter(|(a, _)| **a != 0.0).map(|(a, v)| (*v, *a)).collect(),
        constant: 0.0,
    }
}

fn encode_constraint(
    enc: &mut Encoder<'_>,
    c: &Constraint,
    later: &[Constraint],
    env: &BTreeMap<String, usize>,
) -> Result<(), MipError> {
    let y = env[&c.var];
    if let (Some(def), Relation::Eq) = (&c.pwl, c.relation) {
        // a bound variable that only feeds `v <= ub` (or `v >= lb`) may be
        // relaxed to the matching one-sided relation
        let wanted = if def.bound.side == Side::Upper { Relation::Le } else { Relation::Ge };
        let one_sided = later.iter().all(|l| {
            let uses = l.rhs.variables().contains(&c.var);
            l.var != c.var && (!uses || (l.relation == wanted && l.rhs.as_var_name() == Some(c.var.as_str())))
        });
        let rel = if one_sided { wanted } else { Relation::Eq };
        enc.encode_bound(env[&def.input], &def.bound, y, rel)?;
        return Ok(());
    }
    let rhs = enc.encode_expr(&c.rhs, &|n| env.get(n).copied())?;
    enc.relate(&Lin::var(y), c.relation, &rhs)
}
