//! Mixed-integer problem container and LP-file export.

use std::collections::HashMap;
use std::fmt::Write;

use crate::overapprox::Relation;

use super::MipError;

#[derive(Debug, Clone, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub binary: bool,
}

/// `Σ coef·var (relation) rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(j, a)| a * x[*j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
    pub sense: Sense,
}

impl Objective {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(j, a)| a * x[*j]).sum::<f64>()
    }
}

/// Variables with finite bounds, linear rows and an optional objective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MipProblem {
    pub vars: Vec<VarDef>,
    pub rows: Vec<Row>,
    pub objective: Option<Objective>,
    names: HashMap<String, usize>,
}

impl MipProblem {
    pub fn new() -> MipProblem {
        MipProblem::default()
    }

    pub fn add_var(&mut self, name: &str, lo: f64, hi: f64) -> Result<usize, MipError> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(MipError::Unbounded(format!("{name} in [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(MipError::Inconsistent(format!("{name} has empty range [{lo}, {hi}]")));
        }
        if self.names.contains_key(name) {
            return Err(MipError::Inconsistent(format!("variable `{name}` declared twice")));
        }
        self.names.insert(name.to_string(), self.vars.len());
        self.vars.push(VarDef {
            name: name.to_string(),
            lo,
            hi,
            binary: false,
        });
        Ok(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: &str) -> Result<usize, MipError> {
        let v = self.add_var(name, 0.0, 1.0)?;
        self.vars[v].binary = true;
        Ok(v)
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }

    /// Intersect the bounds of `v` with `[lo, hi]`.
    pub fn tighten(&mut self, v: usize, lo: f64, hi: f64) -> Result<(), MipError> {
        let d = &mut self.vars[v];
        let (l, h) = (d.lo.max(lo), d.hi.min(hi));
        if l > h {
            return Err(MipError::Inconsistent(format!(
                "`{}`: [{}, {}] and [{lo}, {hi}] are disjoint",
                d.name, d.lo, d.hi
            )));
        }
        d.lo = l;
        d.hi = h;
        Ok(())
    }

    /// Add a row, merging repeated variables and dropping zero terms.
    pub fn add_row(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) -> Result<(), MipError> {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(j, a) in terms {
            if j >= self.vars.len() {
                return Err(MipError::Inconsistent(format!("row references undeclared variable {j}")));
            }
            if !a.is_finite() {
                return Err(MipError::Inconsistent(format!("non-finite coefficient on `{}`", self.vars[j].name)));
            }
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some(t) => t.1 += a,
                None => merged.push((j, a)),
            }
        }
        merged.retain(|(_, a)| *a != 0.0);
        if !rhs.is_finite() {
            return Err(MipError::Inconsistent("non-finite right-hand side".into()));
        }
        self.rows.push(Row {
            terms: merged,
            relation,
            rhs,
        });
        Ok(())
    }

    pub fn set_objective(&mut self, terms: &[(usize, f64)], constant: f64, sense: Sense) {
        self.objective = Some(Objective {
            terms: terms.to_vec(),
            constant,
            sense,
        });
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&j| self.vars[j].binary).collect()
    }

    /// Check bounds, integrality and rows of an assignment within `tol`.
    pub fn check_witness(&self, x: &[f64], tol: f64) -> Result<(), String> {
        if x.len() != self.vars.len() {
            return Err(format!("witness has {} values for {} variables", x.len(), self.vars.len()));
        }
        for (v, d) in x.iter().zip(&self.vars) {
            if *v < d.lo - tol || *v > d.hi + tol {
                return Err(format!("`{}` = {v} outside [{}, {}]", d.name, d.lo, d.hi));
            }
            if d.binary && (v - v.round()).abs() > tol {
                return Err(format!("binary `{}` = {v}", d.name));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            let act = r.activity(x);
            let ok = match r.relation {
                Relation::Eq => (act - r.rhs).abs() <= tol,
                Relation::Le => act <= r.rhs + tol,
                Relation::Ge => act >= r.rhs - tol,
            };
            if !ok {
                return Err(format!("row {i}: {act} {} {}", r.relation.symbol(), r.rhs));
            }
        }
        Ok(())
    }

    /// CPLEX LP text for cross-checking with external solvers.
    pub fn to_lp_string(&self) -> String {
        let name = |j: usize| lp_name(&self.vars[j].name);
        let expr = |terms: &[(usize, f64)]| {
            if terms.is_empty() {
                return "0 x_zero".to_string();
            }
            let mut s = String::new();
            for (k, (j, a)) in terms.iter().enumerate() {
                let sign = if *a < 0.0 { "-" } else if k > 0 { "+" } else { "" };
                let _ = write!(s, "{}{sign} {:e} {}", if k > 0 { " " } else { "" }, a.abs(), name(*j));
            }
            s
        };
        let mut out = String::new();
        match &self.objective {
            Some(o) => {
                let _ = writeln!(out, "{}", if o.sense == Sense::Min { "Minimize" } else { "Maximize" });
                let _ = writeln!(out, " obj: {}", expr(&o.terms));
                if o.constant != 0.0 {
                    let _ = writeln!(out, "\\ constant {:e} omitted", o.constant);
                }
            }
            None => {
                let _ = writeln!(out, "Minimize\n obj: 0 x_zero");
            }
        }
        let _ = writeln!(out, "Subject To");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(out, " c{i}: {} {} {:e}", expr(&r.terms), r.relation.symbol(), r.rhs);
        }
        let _ = writeln!(out, "Bounds");
        let _ = writeln!(out, " x_zero = 0");
        for (j, d) in self.vars.iter().enumerate() {
            let _ = writeln!(out, " {:e} <= {} <= {:e}", d.lo, name(j), d.hi);
        }
        let bins: Vec<String> = self.binaries().into_iter().map(name).collect();
        if !bins.is_empty() {
            let _ = writeln!(out, "Binary\n {}", bins.join(" "));
        }
        out.push_str("End\n");
        out
    }
}

/// LP-format identifiers may not start with a digit or contain most
/// punctuation.
fn lp_name(n: &str) -> String {
    let mut s: String = n
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.starts_with(|c: char| c.is_ascii_digit() || c == '.') || s.is_empty() {
        s.insert(0, 'v');
    }
    s
}
