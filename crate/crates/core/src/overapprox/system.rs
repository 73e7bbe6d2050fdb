//! Discrete-time system definitions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::expr::{evaluate_with, parse, Expr, ExprError};

use super::OverapproxError;

/// `x_{t+1} = f(x_t, u_t)` with named states, controls and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct SystemSpec {
    pub name: String,
    pub states: Vec<String>,
    pub controls: Vec<String>,
    pub parameters: BTreeMap<String, f64>,
    /// One update per state, in state order.
    pub updates: Vec<Expr>,
    /// Derived quantities of the state, for properties and reporting.
    pub measurements: BTreeMap<String, Expr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    name: String,
    states: Vec<String>,
    #[serde(default)]
    controls: Vec<String>,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    updates: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    measurements: BTreeMap<String, String>,
}

impl TryFrom<RawSystem> for SystemSpec {
    type Error = String;

    fn try_from(raw: RawSystem) -> Result<Self, String> {
        let parse_all = |src: &str| parse(src).map_err(|e| format!("`{src}`: {e}"));
        let s = SystemSpec {
            name: raw.name,
            states: raw.states,
            controls: raw.controls,
            parameters: raw.parameters,
            updates: raw.updates.iter().map(|u| parse_all(u)).collect::<Result<_, _>>()?,
            measurements: raw
                .measurements
                .iter()
                .map(|(k, v)| Ok((k.clone(), parse_all(v)?)))
                .collect::<Result<_, String>>()?,
        };
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

impl From<SystemSpec> for RawSystem {
    fn from(s: SystemSpec) -> Self {
        RawSystem {
            name: s.name,
            states: s.states,
            controls: s.controls,
            parameters: s.parameters,
            updates: s.updates.iter().map(|u| u.to_string()).collect(),
            measurements: s.measurements.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
        }
    }
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<SystemSpec, OverapproxError> {
        serde_json::from_str(text).map_err(|e| OverapproxError::System(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }

    /// Check dimensions and that every update uses only declared names.
    pub fn validate(&self) -> Result<(), OverapproxError> {
        let err = |m: String| Err(OverapproxError::System(m));
        if self.updates.len() != self.states.len() {
            return err(format!(
                "{} states but {} updates",
                self.states.len(),
                self.updates.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for n in self.states.iter().chain(&self.controls).chain(self.parameters.keys()) {
            if !seen.insert(n.as_str()) {
                return err(format!("name `{n}` declared twice"));
            }
        }
        for (k, v) in &self.parameters {
            if !v.is_finite() {
                return err(format!("parameter `{k}` is not finite"));
            }
        }
        for e in self.updates.iter().chain(self.measurements.values()) {
            for v in e.variables() {
                if !seen.contains(v.as_str()) {
                    return err(format!("`{e}` uses undeclared name `{v}`"));
                }
            }
        }
        for (k, e) in &self.measurements {
            let controls: BTreeSet<&String> = self.controls.iter().collect();
            if e.variables().iter().any(|v| controls.contains(v)) {
                return err(format!("measurement `{k}` depends on a control"));
            }
        }
        Ok(())
    }

    fn resolve(&self, e: &Expr) -> Expr {
        e.substitute(&|n| self.parameters.get(n).map(|v| Expr::Const(*v)))
            .fold_constants()
            .expand_abs()
    }

    /// Updates with parameters substituted and constant subtrees folded.
    pub fn resolved_updates(&self) -> Vec<Expr> {
        self.updates.iter().map(|e| self.resolve(e)).collect()
    }

    pub fn resolved_measurement(&self, name: &str) -> Option<Expr> {
        self.measurements.get(name).map(|e| self.resolve(e))
    }

    fn lookup<'a>(&'a self, x: &'a [f64], u: &'a [f64]) -> impl Fn(&str) -> Option<f64> + 'a {
        move |n: &str| {
            if let Some(i) = self.states.iter().position(|s| s == n) {
                return x.get(i).copied();
            }
            if let Some(i) = self.controls.iter().position(|s| s == n) {
                return u.get(i).copied();
            }
            self.parameters.get(n).copied()
        }
    }

    /// Exact next state.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ExprError> {
        let lookup = self.lookup(x, u);
        self.updates.iter().map(|e| evaluate_with(e, &lookup)).collect()
    }

    pub fn measure(&self, name: &str, x: &[f64]) -> Result<f64, ExprError> {
        let e = self
            .measurements
            .get(name)
            .ok_or_else(|| ExprError::Unbound(name.to_string()))?;
        evaluate_with(e, &self.lookup(x, &[]))
    }
}
