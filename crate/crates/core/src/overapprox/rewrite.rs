//! Decomposition of an expression into a chain of elementary constraints.

use crate::expr::{BinOp, Elementary, Expr, ExprError, Func};

use super::Constraint;

struct Rewriter<'a> {
    prefix: &'a str,
    next: usize,
    out: Vec<Constraint>,
}

impl Rewriter<'_> {
    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("{}v{}", self.prefix, self.next)
    }

    fn define(&mut self, rhs: Expr) -> Expr {
        let v = self.fresh();
        self.out.push(Constraint::eq(&v, rhs));
        Expr::Var(v)
    }

    /// Operands of nonlinear nodes must be single variables or numbers.
    fn as_atom(&mut self, term: Expr) -> Expr {
        match term {
            Expr::Var(_) | Expr::Const(_) => term,
            other => self.define(other),
        }
    }

    /// Returns a variable, a number, or a scaled variable standing for `e`.
    fn rewrite(&mut self, e: &Expr) -> Result<Expr, ExprError> {
        match e {
            Expr::Const(_) | Expr::Var(_) => return Ok(e.clone()),
            _ if e.is_affine() => return Ok(self.define(e.clone())),
            _ => {}
        }
        Ok(match e {
            // Scaling a nonlinear term is folded into its consumer.
            Expr::Neg(a) => Expr::neg(self.rewrite(a)?),
            Expr::Bin(BinOp::Mul, a, b) if a.is_constant() => Expr::mul((**a).clone(), self.rewrite(b)?),
            Expr::Bin(BinOp::Mul, a, b) if b.is_constant() => Expr::mul(self.rewrite(a)?, (**b).clone()),
            Expr::Bin(BinOp::Div, a, b) if b.is_constant() => Expr::div(self.rewrite(a)?, (**b).clone()),
            Expr::Bin(op @ (BinOp::Mul | BinOp::Div), a, b) if !a.is_constant() => {
                return Err(ExprError::Unsupported(format!(
                    "`{}` of two non-constant operands must be converted before rewriting: {e}",
                    if *op == BinOp::Mul { "*" } else { "/" }
                )))
            }
            Expr::Bin(op @ (BinOp::Add | BinOp::Sub), a, b) => {
                let x = self.rewrite(a)?;
                let y = self.rewrite(b)?;
                self.define(Expr::bin(*op, x, y))
            }
            Expr::Bin(op @ (BinOp::Min | BinOp::Max), a, b) => {
                let x = self.rewrite(a)?;
                let x = self.as_atom(x);
                let y = self.rewrite(b)?;
                let y = self.as_atom(y);
                self.define(Expr::bin(*op, x, y))
            }
            Expr::Call(Func::Abs, _) => self.rewrite(&e.expand_abs())?,
            Expr::Call(Func::Relu, a) => {
                let x = self.rewrite(a)?;
                let x = self.as_atom(x);
                self.define(Expr::call(Func::Relu, x))
            }
            _ => {
                let (op, arg) = Elementary::from_expr(e)?;
                let x = self.rewrite(arg)?;
                let x = self.as_atom(x);
                let ub = self.fresh();
                let lb = self.fresh();
                let v = self.fresh();
                let mut c = Constraint::eq(&v, op.to_expr(x));
                c.bound_vars = Some((ub, lb));
                self.out.push(c);
                Expr::Var(v)
            }
        })
    }
}

/// Split `e` into constraints whose right-hand sides are affine, a single
/// elementary function of one variable, or a single `min`/`max`/`relu`.
///
/// Each elementary function reserves two names, for its upper and lower
/// bound variables, just before its own. Returns the variable carrying the
/// value of `e` together with the constraint chain in definition order.
pub fn rewrite(e: &Expr, prefix: &str) -> Result<(String, Vec<Constraint>), ExprError> {
    let mut r = Rewriter {
        prefix,
        next: 0,
        out: Vec::new(),
    };
    let term = r.rewrite(e)?;
    let out = match term {
        Expr::Var(v) => v,
        other => match r.define(other) {
            Expr::Var(v) => v,
            _ => unreachable!(),
        },
    };
    Ok((out, r.out))
}
