//! Point evaluation and interval evaluation of expression trees.

use std::collections::BTreeMap;

use super::elementary::{real_pow, Elementary};
use super::{BinOp, Expr, ExprError, Func, Interval};

/// Variable assignment for point evaluation.
pub type Binding = BTreeMap<String, f64>;

/// Evaluate `e` at a point.
pub fn evaluate(e: &Expr, b: &Binding) -> Result<f64, ExprError> {
    evaluate_with(e, &|name| b.get(name).copied())
}

/// Evaluate with an arbitrary variable lookup.
pub fn evaluate_with(e: &Expr, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
    let domain = |what: String| Err(ExprError::Domain(what));
    Ok(match e {
        Expr::Const(c) => *c,
        Expr::Var(v) => lookup(v).ok_or_else(|| ExprError::Unbound(v.clone()))?,
        Expr::Neg(a) => -evaluate_with(a, lookup)?,
        Expr::Call(f, a) => {
            let x = evaluate_with(a, lookup)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if !(x > 0.0) {
                        return domain(format!("log({x})"));
                    }
                    x.ln()
                }
                Func::Tanh => x.tanh(),
                Func::Relu => x.max(0.0),
                Func::Abs => x.abs(),
            }
        }
        Expr::Bin(op, a, b) => {
            let x = evaluate_with(a, lookup)?;
            let y = evaluate_with(b, lookup)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return domain(format!("division of {x} by zero"));
                    }
                    x / y
                }
                BinOp::Pow => {
                    let v = if a.is_constant() && !b.is_constant() {
                        x.powf(y)
                    } else {
                        real_pow(x, y)
                    };
                    if v.is_nan() {
                        return domain(format!("{x}^{y}"));
                    }
                    v
                }
                BinOp::Min => x.min(y),
                BinOp::Max => x.max(y),
            }
        }
    })
}

/// Sound enclosure of the range of `e` over a box of variable intervals.
///
/// Monotone functions, `sin`/`cos` and powers use exact range rules; the
/// result of each node is padded by a few ulps.
pub fn eval_interval(e: &Expr, domains: &BTreeMap<String, Interval>) -> Result<Interval, ExprError> {
    eval_interval_with(e, &|name| domains.get(name).copied())
}

pub fn eval_interval_with(
    e: &Expr,
    lookup: &dyn Fn(&str) -> Option<Interval>,
) -> Result<Interval, ExprError> {
    Ok(match e {
        Expr::Const(c) => Interval::point(*c),
        Expr::Var(v) => lookup(v).ok_or_else(|| ExprError::Unbound(v.clone()))?,
        Expr::Neg(a) => -eval_interval_with(a, lookup)?,
        Expr::Call(f, a) => {
            let x = eval_interval_with(a, lookup)?;
            match f {
                Func::Relu => Interval::new(x.lo.max(0.0), x.hi.max(0.0)),
                Func::Abs => {
                    if x.lo >= 0.0 {
                        x
                    } else if x.hi <= 0.0 {
                        -x
                    } else {
                        Interval::new(0.0, x.hi.max(-x.lo))
                    }
                }
                _ => {
                    let op = match f {
                        Func::Sin => Elementary::Sin,
                        Func::Cos => Elementary::Cos,
                        Func::Exp => Elementary::Exp,
                        Func::Log => Elementary::Log,
                        _ => Elementary::Tanh,
                    };
                    if op == Elementary::Log && x.lo <= 0.0 {
                        return Err(ExprError::Domain(format!("log over {x}")));
                    }
                    op.range(x)
                }
            }
        }
        Expr::Bin(op, a, b) => {
            let x = eval_interval_with(a, lookup)?;
            let y = eval_interval_with(b, lookup)?;
            match op {
                BinOp::Add => (x + y).widen_ulps(),
                BinOp::Sub => (x - y).widen_ulps(),
                BinOp::Mul => (x * y).widen_ulps(),
                BinOp::Div => {
                    if y.lo <= 0.0 && y.hi >= 0.0 {
                        return Err(ExprError::Domain(format!("divisor range {y} contains 0")));
                    }
                    (x * Interval::new(1.0 / y.hi, 1.0 / y.lo)).widen_ulps()
                }
                BinOp::Pow => pow_interval(x, y, a.is_constant() && !b.is_constant())?,
                BinOp::Min => x.min(&y),
                BinOp::Max => x.max(&y),
            }
        }
    })
}

fn pow_interval(x: Interval, y: Interval, exp_base: bool) -> Result<Interval, ExprError> {
    if exp_base {
        let c = x.lo;
        if !(c > 0.0) {
            return Err(ExprError::Domain(format!("{c}^x needs a positive base")));
        }
        return Ok(Elementary::ExpBase(c).range(y));
    }
    let c = y.lo;
    if y.width() != 0.0 {
        return Err(ExprError::Unsupported("interval power with variable exponent".into()));
    }
    let f = Elementary::Pow(c);
    let r = f.range(x);
    if r.lo.is_nan() || r.hi.is_nan() || !r.is_finite() && x.is_finite() {
        return Err(ExprError::Domain(format!("x^{c} over {x}")));
    }
    if c < 0.0 && x.lo <= 0.0 && x.hi >= 0.0 {
        return Err(ExprError::Domain(format!("x^{c} over {x} has a pole")));
    }
    Ok(r)
}
