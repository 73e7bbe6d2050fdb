//! Elimination of products and quotients of two non-constant operands.
//!
//! Each operand `x` with range `[l, h]` is shifted to `x' = (x - l)/w + ξ`,
//! which lies in `[ξ, 1 + ξ]`, so `x = w·x' + (l - w·ξ)`. Then
//!
//! ```text
//! x·y = αx·αy·exp(log x' + log y') + αx·βy·x' + βx·αy·y' + βx·βy
//! x/y = αx·exp(log x' - log y) + βx/y            (y > 0)
//! ```
//!
//! The result uses only `exp`, `log`, `c/x`, `+`, `-` and scaling, all of
//! which have piecewise-linear bounds.

use std::collections::BTreeMap;

use super::eval::eval_interval;
use super::{BinOp, Expr, ExprError, Func, Interval};

/// Default shift keeping `log` arguments away from zero.
pub const DEFAULT_XI: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedExpr {
    pub expr: Expr,
    /// Input domains together with the range of every shifted operand,
    /// keyed by the operand's printed form.
    pub domains: BTreeMap<String, Interval>,
}

struct Shift {
    /// `x'` as an expression of the original operand.
    shifted: Expr,
    alpha: f64,
    beta: f64,
}

fn shift(x: &Expr, r: Interval, xi: f64) -> Shift {
    let w = r.width();
    let shifted = Expr::add(
        Expr::div(Expr::sub(x.clone(), Expr::Const(r.lo)), Expr::Const(w)),
        Expr::Const(xi),
    );
    Shift {
        shifted,
        alpha: w,
        beta: r.lo - w * xi,
    }
}

fn scaled(c: f64, e: Expr) -> Option<Expr> {
    if c == 0.0 {
        None
    } else if c == 1.0 {
        Some(e)
    } else {
        Some(Expr::mul(Expr::Const(c), e))
    }
}

fn sum(terms: Vec<Option<Expr>>, constant: f64) -> Expr {
    let mut out: Option<Expr> = None;
    for t in terms.into_iter().flatten() {
        out = Some(match out {
            None => t,
            Some(acc) => Expr::add(acc, t),
        });
    }
    match out {
        None => Expr::Const(constant),
        Some(e) if constant == 0.0 => e,
        Some(e) => Expr::add(e, Expr::Const(constant)),
    }
}

fn log(e: Expr) -> Expr {
    Expr::call(Func::Log, e)
}

fn exp(e: Expr) -> Expr {
    Expr::call(Func::Exp, e)
}

fn range(e: &Expr, domains: &BTreeMap<String, Interval>) -> Result<Interval, ExprError> {
    let r = eval_interval(e, domains)?;
    if !r.is_finite() {
        return Err(ExprError::Domain(format!("operand `{e}` has unbounded range {r}")));
    }
    Ok(r)
}

struct Converter<'a> {
    domains: &'a BTreeMap<String, Interval>,
    xi: f64,
    seen: BTreeMap<String, Interval>,
}

impl Converter<'_> {
    fn operand(&mut self, e: &Expr) -> Result<Interval, ExprError> {
        let r = range(e, self.domains)?;
        self.seen.insert(e.to_string(), r);
        Ok(r)
    }

    fn product(&mut self, x: Expr, y: Expr, rx: Interval, ry: Interval) -> Result<Expr, ExprError> {
        // Zero-width operands are constants over the domain.
        if rx.width() == 0.0 {
            return Ok(Expr::mul(Expr::Const(rx.lo), y));
        }
        if ry.width() == 0.0 {
            return Ok(Expr::mul(Expr::Const(ry.lo), x));
        }
        let sx = shift(&x, rx, self.xi);
        let sy = shift(&y, ry, self.xi);
        let core = exp(Expr::add(log(sx.shifted.clone()), log(sy.shifted.clone())));
        Ok(sum(
            vec![
                scaled(sx.alpha * sy.alpha, core),
                scaled(sx.alpha * sy.beta, sx.shifted),
                scaled(sx.beta * sy.alpha, sy.shifted),
            ],
            sx.beta * sy.beta,
        ))
    }

    fn quotient(&mut self, x: Expr, y: Expr, rx: Interval, ry: Interval) -> Result<Expr, ExprError> {
        if ry.lo <= 0.0 && ry.hi >= 0.0 {
            return Err(ExprError::Domain(format!("divisor `{y}` has range {ry} containing 0")));
        }
        if ry.width() == 0.0 {
            return Ok(Expr::mul(Expr::Const(1.0 / ry.lo), x));
        }
        if rx.width() == 0.0 {
            return Ok(Expr::div(Expr::Const(rx.lo), y));
        }
        // Work with a positive divisor and restore the sign at the end.
        let (pos_y, sign) = if ry.lo > 0.0 { (y, 1.0) } else { (Expr::neg(y), -1.0) };
        let sx = shift(&x, rx, self.xi);
        let core = exp(Expr::sub(log(sx.shifted), log(pos_y.clone())));
        let recip = (sx.beta != 0.0).then(|| Expr::div(Expr::Const(sign * sx.beta), pos_y));
        Ok(sum(vec![scaled(sign * sx.alpha, core), recip], 0.0))
    }

    fn convert(&mut self, e: &Expr) -> Result<Expr, ExprError> {
        Ok(match e {
            Expr::Const(_) | Expr::Var(_) => e.clone(),
            Expr::Neg(a) => Expr::neg(self.convert(a)?),
            Expr::Call(f, a) => Expr::call(*f, self.convert(a)?),
            Expr::Bin(op, a, b) => {
                let ca = self.convert(a)?;
                let cb = self.convert(b)?;
                let bilinear = matches!(op, BinOp::Mul | BinOp::Div);
                if !bilinear || a.is_constant() || b.is_constant() {
                    return Ok(Expr::bin(*op, ca, cb));
                }
                // Ranges come from the original operands, which are tighter
                // under interval evaluation than their converted forms.
                let ra = self.operand(a)?;
                let rb = self.operand(b)?;
                if *op == BinOp::Mul {
                    self.product(ca, cb, ra, rb)?
                } else {
                    self.quotient(ca, cb, ra, rb)?
                }
            }
        })
    }
}

/// Rewrite every product or quotient of two non-constant operands into the
/// exp/log form above. Scalar products and `c/x` are left alone.
pub fn convert_mul_div(
    e: &Expr,
    domains: &BTreeMap<String, Interval>,
    xi: f64,
) -> Result<ConvertedExpr, ExprError> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(ExprError::Domain(format!("shift ξ must be positive, got {xi}")));
    }
    let mut c = Converter {
        domains,
        xi,
        seen: BTreeMap::new(),
    };
    let expr = c.convert(e)?;
    let mut out = domains.clone();
    out.extend(c.seen);
    Ok(ConvertedExpr { expr, domains: out })
}

/// True when no product or quotient of two non-constant operands remains.
pub fn is_mul_div_free(e: &Expr) -> bool {
    match e {
        Expr::Const(_) | Expr::Var(_) => true,
        Expr::Neg(a) | Expr::Call(_, a) => is_mul_div_free(a),
        Expr::Bin(op, a, b) => {
            let ok = !matches!(op, BinOp::Mul | BinOp::Div) || a.is_constant() || b.is_constant();
            ok && is_mul_div_free(a) && is_mul_div_free(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, parse, Binding};

    fn dom(pairs: &[(&str, f64, f64)]) -> BTreeMap<String, Interval> {
        pairs
            .iter()
            .map(|(n, lo, hi)| (n.to_string(), Interval::new(*lo, *hi)))
            .collect()
    }

    #[test]
    fn scalar_multiply_is_unchanged() {
        let e = parse("3 * x").unwrap();
        let c = convert_mul_div(&e, &dom(&[("x", -1.0, 1.0)]), DEFAULT_XI).unwrap();
        assert_eq!(c.expr, e);
    }

    #[test]
    fn product_matches_on_grid() {
        let e = parse("x * y").unwrap();
        let d = dom(&[("x", -2.0, 3.0), ("y", -1.0, 0.5)]);
        let c = convert_mul_div(&e, &d, DEFAULT_XI).unwrap();
        assert!(is_mul_div_free(&c.expr));
        for i in 0..=10 {
            for j in 0..=10 {
                let x = -2.0 + 0.5 * i as f64;
                let y = -1.0 + 0.15 * j as f64;
                let b: Binding = [("x".to_string(), x), ("y".to_string(), y)].into();
                let got = evaluate(&c.expr, &b).unwrap();
                assert!((got - x * y).abs() < 1e-9, "{x} {y}: {got}");
            }
        }
    }

    #[test]
    fn divisor_containing_zero_is_rejected() {
        let e = parse("x / y").unwrap();
        let d = dom(&[("x", 1.0, 2.0), ("y", -1.0, 1.0)]);
        assert!(convert_mul_div(&e, &d, DEFAULT_XI).is_err());
    }

    #[test]
    fn negative_divisor() {
        let e = parse("x / y").unwrap();
        let d = dom(&[("x", -1.0, 2.0), ("y", -3.0, -1.0)]);
        let c = convert_mul_div(&e, &d, DEFAULT_XI).unwrap();
        let b: Binding = [("x".to_string(), 1.5), ("y".to_string(), -2.5)].into();
        assert!((evaluate(&c.expr, &b).unwrap() - 1.5 / -2.5).abs() < 1e-12);
    }
}
