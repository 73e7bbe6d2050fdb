//! Recursive-descent parser for the infix expression grammar.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?
//! primary := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! A `-` immediately followed by a numeric literal (and not by `^`) is read as
//! a negative constant, so `-3` is `Const(-3)` while `-(3)` is `Neg(Const(3))`.

use super::{BinOp, Expr, ExprError, Func};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{lit}`"),
            })?;
            out.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'\'')
            {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, t: Tok) -> Result<(), ExprError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {t:?}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            let op = if *op == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            let op = if *op == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Op('-')) = self.peek() {
            if let Some(Tok::Num(v)) = self.peek_at(1) {
                let v = *v;
                if self.peek_at(2) != Some(&Tok::Op('^')) {
                    self.pos += 2;
                    return Ok(Expr::Const(-v));
                }
            }
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::neg(inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            let at = self.offset();
            self.pos += 1;
            let exponent = self.unary()?;
            if !base.is_constant() && !exponent.is_constant() {
                return Err(ExprError::Unsupported(format!(
                    "variable exponent at byte {at}: only x^c and c^x are supported"
                )));
            }
            return Ok(Expr::pow(base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Var(name));
                }
                self.pos += 1;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                build_call(&name, args)
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

fn build_call(name: &str, mut args: Vec<Expr>) -> Result<Expr, ExprError> {
    let arity = |expected: usize, args: &Vec<Expr>| {
        if args.len() == expected {
            Ok(())
        } else {
            Err(ExprError::Arity {
                name: name.to_string(),
                expected,
                got: args.len(),
            })
        }
    };
    match name {
        "min" | "max" => {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            let op = if name == "min" { BinOp::Min } else { BinOp::Max };
            Ok(Expr::bin(op, a, b))
        }
        _ => {
            let f = Func::from_name(name)
                .ok_or_else(|| ExprError::UnknownFunction(name.to_string()))?;
            arity(1, &args)?;
            Ok(Expr::call(f, args.pop().unwrap()))
        }
    }
}

/// Parse infix text into an expression tree.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_two_vars() {
        assert_eq!(
            parse("x + y").unwrap(),
            Expr::add(Expr::var("x"), Expr::var("y"))
        );
    }

    #[test]
    fn nested_transcendental() {
        let e = parse("sin(x^2 + y - log(z))").unwrap();
        let expected = Expr::call(
            Func::Sin,
            Expr::sub(
                Expr::add(
                    Expr::pow(Expr::var("x"), Expr::Const(2.0)),
                    Expr::var("y"),
                ),
                Expr::call(Func::Log, Expr::var("z")),
            ),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("a - b - c").unwrap().to_string(), "a - b - c");
        assert_eq!(
            parse("a - b - c").unwrap(),
            Expr::sub(Expr::sub(Expr::var("a"), Expr::var("b")), Expr::var("c"))
        );
        assert_eq!(
            parse("-x^2").unwrap(),
            Expr::neg(Expr::pow(Expr::var("x"), Expr::Const(2.0)))
        );
        assert_eq!(
            parse("-3^2").unwrap(),
            Expr::neg(Expr::pow(Expr::Const(3.0), Expr::Const(2.0)))
        );
        assert_eq!(parse("2*x/3").unwrap().to_string(), "2.0 * x / 3.0");
        assert_eq!(parse("1e-3 * x").unwrap(), Expr::mul(Expr::Const(1e-3), Expr::var("x")));
    }

    #[test]
    fn errors_carry_position() {
        match parse("x + * y") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("sinh(x)"), Err(ExprError::UnknownFunction(_))));
        assert!(matches!(parse("max(x)"), Err(ExprError::Arity { .. })));
        assert!(matches!(parse("sin(x, y)"), Err(ExprError::Arity { .. })));
        assert!(matches!(parse("x ^ y"), Err(ExprError::Unsupported(_))));
        assert!(matches!(parse("(x + 1"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x $ 1"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let e = parse("relu(-3)").unwrap();
        assert_eq!(super::super::evaluate(&e, &Default::default()).unwrap(), 0.0);
    }
}
