//! Symbolic differentiation with just enough simplification to keep the
//! derivative trees readable.

use super::{BinOp, Expr, ExprError, Func};

fn is_zero(e: &Expr) -> bool {
    e.as_const() == Some(0.0)
}

fn is_one(e: &Expr) -> bool {
    e.as_const() == Some(1.0)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        _ if is_zero(&a) => b,
        _ if is_zero(&b) => a,
        _ => Expr::add(a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        _ if is_zero(&b) => a,
        _ if is_zero(&a) => neg(b),
        _ => Expr::sub(a, b),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::neg(a),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        _ if is_zero(&a) || is_zero(&b) => Expr::Const(0.0),
        _ if is_one(&a) => b,
        _ if is_one(&b) => a,
        _ => Expr::mul(a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        Expr::Const(0.0)
    } else if is_one(&b) {
        a
    } else {
        Expr::div(a, b)
    }
}

fn const_value(e: &Expr) -> Option<f64> {
    if e.is_constant() {
        super::evaluate(e, &Default::default()).ok()
    } else {
        None
    }
}

fn depends_on(e: &Expr, var: &str) -> bool {
    match e {
        Expr::Const(_) => false,
        Expr::Var(v) => v == var,
        Expr::Neg(a) | Expr::Call(_, a) => depends_on(a, var),
        Expr::Bin(_, a, b) => depends_on(a, var) || depends_on(b, var),
    }
}

/// Partial derivative of `e` with respect to `var`.
///
/// Kinks (`relu`, `abs`, `min`, `max`) that depend on `var` are rejected.
pub fn differentiate(e: &Expr, var: &str) -> Result<Expr, ExprError> {
    if !depends_on(e, var) {
        return Ok(Expr::Const(0.0));
    }
    Ok(match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(differentiate(a, var)?),
        Expr::Call(f, a) => {
            let da = differentiate(a, var)?;
            let a = (**a).clone();
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, a),
                Func::Cos => neg(Expr::call(Func::Sin, a)),
                Func::Exp => Expr::call(Func::Exp, a),
                Func::Log => return Ok(div(da, a)),
                Func::Tanh => sub(
                    Expr::Const(1.0),
                    Expr::pow(Expr::call(Func::Tanh, a), Expr::Const(2.0)),
                ),
                Func::Relu | Func::Abs => return Err(ExprError::NotDifferentiable(e.to_string())),
            };
            mul(outer, da)
        }
        Expr::Bin(op, a, b) => {
            let da = differentiate(a, var)?;
            let db = differentiate(b, var)?;
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b), mul(a, db)),
                BinOp::Div => {
                    if b.is_constant() {
                        div(da, b)
                    } else {
                        let num = sub(mul(da, b.clone()), mul(a, db));
                        div(num, Expr::pow(b, Expr::Const(2.0)))
                    }
                }
                BinOp::Pow => match (const_value(&a), const_value(&b)) {
                    (_, Some(c)) => {
                        let power = if c - 1.0 == 1.0 {
                            a
                        } else {
                            Expr::pow(a, Expr::Const(c - 1.0))
                        };
                        mul(mul(Expr::Const(c), power), da)
                    }
                    (Some(c), _) => mul(mul(Expr::Const(c.ln()), Expr::pow(a, b)), db),
                    _ => {
                        return Err(ExprError::Unsupported(format!(
                            "power with variable base and exponent: {e}"
                        )))
                    }
                },
                BinOp::Min | BinOp::Max => {
                    return Err(ExprError::NotDifferentiable(e.to_string()))
                }
            }
        }
    })
}
