//! Symbolic expressions over named real variables.
//!
//! Dynamics, piecewise-linear bounds and rewritten constraints all share this
//! tree. Expressions are immutable once built and cheap to clone relative to
//! the solves they feed.

mod diff;
mod elementary;
mod eval;
mod interval;
mod muldiv;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use diff::differentiate;
pub use elementary::{find_inflections, Curvature, Elementary};
pub use eval::{eval_interval, eval_interval_with, evaluate, evaluate_with, Binding};
pub use interval::Interval;
pub use muldiv::{convert_mul_div, is_mul_div_free, ConvertedExpr, DEFAULT_XI};
pub use parse::parse;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expression is not differentiable at node `{0}`")]
    NotDifferentiable(String),
    #[error("unsupported expression: {0}")]
    Unsupported(String),
}

/// Single-argument functions that appear as call nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Relu,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Relu => "relu",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "tanh" => Func::Tanh,
            "relu" => Func::Relu,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    /// Piecewise-linear primitives are passed to the MIP encoder untouched.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Func::Relu | Func::Abs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `a ^ b`; one side must be constant (`x^c` or `c^x`).
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::Neg(Box::new(e))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Pow, a, b)
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Min, a, b)
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Max, a, b)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Free variable names in sorted order.
    pub fn as_var_name(&self) -> Option<&str> {
        match self {
            Expr::Var(n) => Some(n),
            _ => None,
        }
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Call(_, a) => 1 + a.size(),
            Expr::Bin(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Replace variables by expressions; unmapped variables are kept.
    pub fn substitute(&self, map: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => map(v).unwrap_or_else(|| Expr::Var(v.clone())),
            Expr::Neg(a) => Expr::neg(a.substitute(map)),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(map)),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.substitute(map), b.substitute(map)),
        }
    }

    /// Evaluate every variable-free subtree to a constant.
    ///
    /// Subtrees whose evaluation fails (e.g. `log(-1)`) are left in place so
    /// the error surfaces at evaluation time instead.
    pub fn fold_constants(&self) -> Expr {
        if !matches!(self, Expr::Const(_)) && self.is_constant() {
            if let Ok(v) = evaluate(self, &Binding::new()) {
                return Expr::Const(v);
            }
        }
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.fold_constants()),
            Expr::Call(f, a) => Expr::call(*f, a.fold_constants()),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.fold_constants(), b.fold_constants()),
        }
    }

    /// True when the expression is an affine function of its variables,
    /// judged syntactically (constant scaling and division by constants only).
    pub fn is_affine(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => true,
            Expr::Neg(a) => a.is_affine(),
            Expr::Call(..) => self.is_constant(),
            Expr::Bin(op, a, b) => match op {
                BinOp::Add | BinOp::Sub => a.is_affine() && b.is_affine(),
                BinOp::Mul => {
                    (a.is_constant() && b.is_affine()) || (b.is_constant() && a.is_affine())
                }
                BinOp::Div => b.is_constant() && a.is_affine(),
                BinOp::Pow | BinOp::Min | BinOp::Max => self.is_constant(),
            },
        }
    }

    /// Coefficients of an affine expression, or `None` if it is not affine.
    pub fn linear_form(&self) -> Option<LinearForm> {
        if self.is_constant() {
            return evaluate(self, &Binding::new()).ok().map(LinearForm::constant);
        }
        match self {
            Expr::Var(v) => Some(LinearForm::var(v)),
            Expr::Neg(a) => Some(a.linear_form()?.scale(-1.0)),
            Expr::Bin(BinOp::Add, a, b) => Some(a.linear_form()?.add(&b.linear_form()?, 1.0)),
            Expr::Bin(BinOp::Sub, a, b) => Some(a.linear_form()?.add(&b.linear_form()?, -1.0)),
            Expr::Bin(BinOp::Mul, a, b) => {
                let (fa, fb) = (a.linear_form()?, b.linear_form()?);
                if fa.is_constant() {
                    Some(fb.scale(fa.constant))
                } else if fb.is_constant() {
                    Some(fa.scale(fb.constant))
                } else {
                    None
                }
            }
            Expr::Bin(BinOp::Div, a, b) => {
                let fb = b.linear_form()?;
                if !fb.is_constant() || fb.constant == 0.0 {
                    return None;
                }
                Some(a.linear_form()?.scale(1.0 / fb.constant))
            }
            _ => None,
        }
    }

    /// Replace every `abs(e)` by `max(e, -e)`.
    pub fn expand_abs(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.expand_abs()),
            Expr::Call(Func::Abs, a) => {
                let inner = a.expand_abs();
                Expr::max(inner.clone(), Expr::neg(inner))
            }
            Expr::Call(f, a) => Expr::call(*f, a.expand_abs()),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.expand_abs(), b.expand_abs()),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

/// `Σ coeffs[v]·v + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearForm {
    pub coeffs: BTreeMap<String, f64>,
    pub constant: f64,
}

impl LinearForm {
    pub fn constant(c: f64) -> LinearForm {
        LinearForm {
            coeffs: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(name: &str) -> LinearForm {
        LinearForm {
            coeffs: [(name.to_string(), 1.0)].into(),
            constant: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    pub fn scale(mut self, c: f64) -> LinearForm {
        self.coeffs.values_mut().for_each(|v| *v *= c);
        self.constant *= c;
        self
    }

    /// `self + sign·other`
    pub fn add(mut self, other: &LinearForm, sign: f64) -> LinearForm {
        for (k, v) in &other.coeffs {
            *self.coeffs.entry(k.clone()).or_insert(0.0) += sign * v;
        }
        self.constant += sign * other.constant;
        self
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> f64) -> f64 {
        self.coeffs.iter().map(|(k, c)| c * lookup(k)).sum::<f64>() + self.constant
    }
}

fn fmt_num(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // `{:?}` is the shortest representation that round-trips exactly.
    write!(f, "{c:?}")
}

fn fmt_child(e: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    // printed in parens so the parser folds it back into one literal
                    f.write_str("(")?;
                    fmt_num(*c, f)?;
                    f.write_str(")")
                } else {
                    fmt_num(*c, f)
                }
            }
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(a) => {
                f.write_str("-")?;
                // a bare literal after `-` would be folded into a constant
                if matches!(**a, Expr::Const(_)) {
                    write!(f, "({a})")
                } else {
                    fmt_child(a, 3, f)
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Bin(op, a, b) => match op {
                BinOp::Min | BinOp::Max => {
                    let name = if *op == BinOp::Min { "min" } else { "max" };
                    write!(f, "{name}({a}, {b})")
                }
                BinOp::Add | BinOp::Sub => {
                    fmt_child(a, 1, f)?;
                    f.write_str(if *op == BinOp::Add { " + " } else { " - " })?;
                    fmt_child(b, 2, f)
                }
                BinOp::Mul | BinOp::Div => {
                    fmt_child(a, 2, f)?;
                    f.write_str(if *op == BinOp::Mul { " * " } else { " / " })?;
                    fmt_child(b, 3, f)
                }
                BinOp::Pow => {
                    fmt_child(a, 5, f)?;
                    f.write_str("^")?;
                    fmt_child(b, 5, f)
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_keeps_structure() {
        let e = parse("x - (y - z)").unwrap();
        assert_eq!(e.to_string(), "x - (y - z)");
        let e = parse("-(3)").unwrap();
        assert_eq!(e, Expr::neg(Expr::Const(3.0)));
        assert_eq!(parse(&e.to_string()).unwrap(), e);
        let e = parse("(-3)").unwrap();
        assert_eq!(e, Expr::Const(-3.0));
        assert_eq!(e.to_string(), "(-3.0)");
    }

    #[test]
    fn affine_detection() {
        assert!(parse("2*x + 3").unwrap().is_affine());
        assert!(parse("(x - y)/4").unwrap().is_affine());
        assert!(!parse("x*y").unwrap().is_affine());
        assert!(!parse("sin(x) + 1").unwrap().is_affine());
        assert!(parse("sin(1) * x").unwrap().is_affine());
    }

    #[test]
    fn linear_forms() {
        let f = parse("2*(x - y)/4 + 3 - -z").unwrap().linear_form().unwrap();
        assert_eq!(f.coeffs["x"], 0.5);
        assert_eq!(f.coeffs["y"], -0.5);
        assert_eq!(f.coeffs["z"], 1.0);
        assert_eq!(f.constant, 3.0);
        assert!(parse("x*y").unwrap().linear_form().is_none());
        assert!(parse("sin(x)").unwrap().linear_form().is_none());
    }

    #[test]
    fn abs_expands_to_max() {
        let e = parse("abs(x - 1)").unwrap().expand_abs();
        assert_eq!(e.to_string(), "max(x - 1.0, -(x - 1.0))");
    }

    #[test]
    fn fold_constants_collapses_parameters() {
        let e = parse("x + 0.1 * (1.0 / 0.5) * sin(x)").unwrap().fold_constants();
        assert_eq!(e.to_string(), "x + 0.2 * sin(x)");
    }
}
