//! The closed set of smooth unary functions that receive piecewise-linear
//! bounds: `sin`, `cos`, `exp`, `log`, `tanh`, `c/x`, `c^x` and `x^c`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use super::{BinOp, Expr, ExprError, Func, Interval};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementary {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    /// `c / x`
    Recip(f64),
    /// `c ^ x`, `c > 0`
    ExpBase(f64),
    /// `x ^ c` with `c` rational
    Pow(f64),
}

/// Curvature class of a function over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    Convex,
    Concave,
    Linear,
}

/// Best rational approximation `p/q` with `q <= 1000`, if one matches `c`
/// to near machine precision.
pub(crate) fn as_rational(c: f64) -> Option<(i64, i64)> {
    if !c.is_finite() {
        return None;
    }
    for q in 1..=1000i64 {
        let p = (c * q as f64).round();
        if (p / q as f64 - c).abs() <= 1e-12 * c.abs().max(1.0) {
            return Some((p as i64, q));
        }
    }
    None
}

/// `x^c` extended to negative `x` when `c = p/q` has odd `q`.
pub(crate) fn real_pow(x: f64, c: f64) -> f64 {
    if x >= 0.0 {
        return if c.fract() == 0.0 && c.abs() < 64.0 {
            x.powi(c as i32)
        } else {
            x.powf(c)
        };
    }
    if c.fract() == 0.0 && c.abs() < 64.0 {
        return x.powi(c as i32);
    }
    match as_rational(c) {
        Some((p, q)) if q % 2 == 1 => {
            let m = (-x).powf(c);
            if p % 2 == 0 {
                m
            } else {
                -m
            }
        }
        _ => f64::NAN,
    }
}

impl Elementary {
    /// Recognise `e` as a supported elementary function applied to one operand.
    pub fn from_expr(e: &Expr) -> Result<(Elementary, &Expr), ExprError> {
        let unsupported = || ExprError::Unsupported(format!("`{e}` is not a supported elementary function"));
        match e {
            Expr::Call(f, a) => {
                let op = match f {
                    Func::Sin => Elementary::Sin,
                    Func::Cos => Elementary::Cos,
                    Func::Exp => Elementary::Exp,
                    Func::Log => Elementary::Log,
                    Func::Tanh => Elementary::Tanh,
                    Func::Relu | Func::Abs => return Err(unsupported()),
                };
                Ok((op, a))
            }
            Expr::Bin(BinOp::Div, c, a) => match c.as_const() {
                Some(c) if !a.is_constant() => Ok((Elementary::Recip(c), a)),
                _ => Err(unsupported()),
            },
            Expr::Bin(BinOp::Pow, a, b) => match (a.as_const(), b.as_const()) {
                (None, Some(c)) => Ok((Elementary::Pow(c), a)),
                (Some(c), None) if c > 0.0 => Ok((Elementary::ExpBase(c), b)),
                _ => Err(unsupported()),
            },
            _ => Err(unsupported()),
        }
    }

    pub fn to_expr(self, arg: Expr) -> Expr {
        match self {
            Elementary::Sin => Expr::call(Func::Sin, arg),
            Elementary::Cos => Expr::call(Func::Cos, arg),
            Elementary::Exp => Expr::call(Func::Exp, arg),
            Elementary::Log => Expr::call(Func::Log, arg),
            Elementary::Tanh => Expr::call(Func::Tanh, arg),
            Elementary::Recip(c) => Expr::div(Expr::Const(c), arg),
            Elementary::ExpBase(c) => Expr::pow(Expr::Const(c), arg),
            Elementary::Pow(c) => Expr::pow(arg, Expr::Const(c)),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Elementary::Sin => x.sin(),
            Elementary::Cos => x.cos(),
            Elementary::Exp => x.exp(),
            Elementary::Log => x.ln(),
            Elementary::Tanh => x.tanh(),
            Elementary::Recip(c) => c / x,
            Elementary::ExpBase(c) => c.powf(x),
            Elementary::Pow(c) => real_pow(x, c),
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Elementary::Sin => x.cos(),
            Elementary::Cos => -x.sin(),
            Elementary::Exp => x.exp(),
            Elementary::Log => 1.0 / x,
            Elementary::Tanh => {
                let c = x.cosh();
                1.0 / (c * c)
            }
            Elementary::Recip(c) => -c / (x * x),
            Elementary::ExpBase(c) => c.ln() * c.powf(x),
            Elementary::Pow(c) => {
                if c == 0.0 {
                    0.0
                } else {
                    c * real_pow(x, c - 1.0)
                }
            }
        }
    }

    pub fn second(self, x: f64) -> f64 {
        match self {
            Elementary::Sin => -x.sin(),
            Elementary::Cos => -x.cos(),
            Elementary::Exp => x.exp(),
            Elementary::Log => -1.0 / (x * x),
            Elementary::Tanh => {
                let c = x.cosh();
                -2.0 * x.tanh() / (c * c)
            }
            Elementary::Recip(c) => 2.0 * c / (x * x * x),
            Elementary::ExpBase(c) => c.ln() * c.ln() * c.powf(x),
            Elementary::Pow(c) => {
                if c == 0.0 || c == 1.0 {
                    0.0
                } else {
                    c * (c - 1.0) * real_pow(x, c - 2.0)
                }
            }
        }
    }

    /// Reject intervals on which the function (or its derivative) is not
    /// finite everywhere.
    pub fn check_domain(self, d: Interval) -> Result<(), ExprError> {
        if !d.is_finite() || d.lo > d.hi {
            return Err(ExprError::Domain(format!("{self} needs a finite interval, got {d}")));
        }
        let bad = |msg: &str| Err(ExprError::Domain(format!("{self} on {d}: {msg}")));
        match self {
            Elementary::Log if d.lo <= 0.0 => bad("argument must be positive"),
            Elementary::Recip(_) if d.lo <= 0.0 && d.hi >= 0.0 => bad("interval contains 0"),
            Elementary::ExpBase(c) if !(c > 0.0 && c.is_finite()) => bad("base must be positive"),
            Elementary::Pow(c) => {
                let rational = as_rational(c);
                if d.lo < 0.0 && !matches!(rational, Some((_, q)) if q % 2 == 1) {
                    return bad("negative base needs an exponent with odd denominator");
                }
                if d.lo <= 0.0 && d.hi >= 0.0 && c != 0.0 && c < 1.0 {
                    return bad("derivative unbounded at 0");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Points strictly inside `d` where the second derivative changes sign.
    pub fn inflections(self, d: Interval) -> Vec<f64> {
        let periodic = |offset: f64| {
            let k0 = ((d.lo - offset) / PI).floor() as i64;
            let k1 = ((d.hi - offset) / PI).ceil() as i64;
            (k0..=k1)
                .map(|k| offset + k as f64 * PI)
                .filter(|&x| x > d.lo && x < d.hi)
                .collect::<Vec<_>>()
        };
        match self {
            Elementary::Sin => periodic(0.0),
            Elementary::Cos => periodic(FRAC_PI_2),
            Elementary::Tanh => {
                if d.lo < 0.0 && d.hi > 0.0 {
                    vec![0.0]
                } else {
                    vec![]
                }
            }
            Elementary::Pow(c) => {
                let odd_numerator = matches!(as_rational(c), Some((p, _)) if p % 2 != 0);
                if d.lo < 0.0 && d.hi > 0.0 && c != 0.0 && c != 1.0 && odd_numerator {
                    vec![0.0]
                } else {
                    vec![]
                }
            }
            Elementary::Exp | Elementary::Log | Elementary::Recip(_) | Elementary::ExpBase(_) => {
                vec![]
            }
        }
    }

    /// Curvature on an interval that contains no inflection point.
    pub fn curvature(self, d: Interval) -> Curvature {
        match self {
            Elementary::Pow(c) if c == 0.0 || c == 1.0 => return Curvature::Linear,
            Elementary::ExpBase(c) if c == 1.0 => return Curvature::Linear,
            _ => {}
        }
        // A region may touch an inflection point at either end, so sample
        // the second derivative at interior points only.
        let mut s = 0.0;
        for t in [0.5, 0.25, 0.75] {
            s = self.second(d.lo + t * d.width());
            if s != 0.0 {
                break;
            }
        }
        if s > 0.0 {
            Curvature::Convex
        } else if s < 0.0 {
            Curvature::Concave
        } else {
            Curvature::Linear
        }
    }

    /// Exact image of `d`, padded outward by a few ulps.
    pub fn range(self, d: Interval) -> Interval {
        let contains_periodic = |offset: f64| {
            let k = ((d.lo - offset) / (2.0 * PI)).ceil();
            offset + k * 2.0 * PI <= d.hi
        };
        let (a, b) = (self.eval(d.lo), self.eval(d.hi));
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        match self {
            Elementary::Sin => {
                if contains_periodic(FRAC_PI_2) {
                    hi = 1.0;
                }
                if contains_periodic(-FRAC_PI_2) {
                    lo = -1.0;
                }
            }
            Elementary::Cos => {
                if contains_periodic(0.0) {
                    hi = 1.0;
                }
                if contains_periodic(PI) {
                    lo = -1.0;
                }
            }
            Elementary::Pow(_) => {
                if d.lo < 0.0 && d.hi > 0.0 {
                    let z = self.eval(0.0);
                    lo = lo.min(z);
                    hi = hi.max(z);
                }
            }
            _ => {}
        }
        Interval::new(lo, hi).widen_ulps()
    }
}

impl fmt::Display for Elementary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expr(Expr::var("x")))
    }
}

/// Sorted interior inflection points of `f` on `d`.
pub fn find_inflections(f: Elementary, d: Interval) -> Result<Vec<f64>, ExprError> {
    f.check_domain(d)?;
    Ok(f.inflections(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_inflects_at_zero() {
        let d = Interval::new(-FRAC_PI_2, FRAC_PI_2);
        assert_eq!(find_inflections(Elementary::Tanh, d).unwrap(), vec![0.0]);
    }

    #[test]
    fn exp_has_no_inflection() {
        let d = Interval::new(-3.0, 3.0);
        assert!(find_inflections(Elementary::Exp, d).unwrap().is_empty());
    }

    #[test]
    fn sin_inflections_on_minus_one_to_four() {
        let d = Interval::new(-1.0, 4.0);
        assert_eq!(find_inflections(Elementary::Sin, d).unwrap(), vec![0.0, PI]);
    }

    #[test]
    fn cos_and_odd_power() {
        let d = Interval::new(-2.0, 5.0);
        assert_eq!(
            find_inflections(Elementary::Cos, d).unwrap(),
            vec![-FRAC_PI_2, FRAC_PI_2, 3.0 * FRAC_PI_2]
        );
        let d = Interval::new(-1.0, 1.0);
        assert_eq!(find_inflections(Elementary::Pow(3.0), d).unwrap(), vec![0.0]);
        assert!(find_inflections(Elementary::Pow(2.0), d).unwrap().is_empty());
        assert!(find_inflections(Elementary::Pow(0.5), d).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(Elementary::Log.check_domain(Interval::new(0.0, 1.0)).is_err());
        assert!(Elementary::Recip(1.0).check_domain(Interval::new(-1.0, 1.0)).is_err());
        assert!(Elementary::Recip(1.0).check_domain(Interval::new(-2.0, -1.0)).is_ok());
        assert!(Elementary::Pow(0.5).check_domain(Interval::new(-2.0, -1.0)).is_err());
        assert!(Elementary::Pow(1.0 / 3.0).check_domain(Interval::new(-2.0, -1.0)).is_ok());
    }

    #[test]
    fn negative_base_powers() {
        assert_eq!(real_pow(-2.0, 3.0), -8.0);
        assert!((real_pow(-8.0, 1.0 / 3.0) + 2.0).abs() < 1e-12);
        assert!((real_pow(-8.0, 2.0 / 3.0) - 4.0).abs() < 1e-12);
        assert!(real_pow(-1.0, 0.5).is_nan());
    }

    #[test]
    fn exact_ranges() {
        let r = Elementary::Sin.range(Interval::new(-1.0, 1.0));
        assert!((r.lo + 1f64.sin()).abs() < 1e-12 && (r.hi - 1f64.sin()).abs() < 1e-12);
        let r = Elementary::Sin.range(Interval::new(1.0, 2.0));
        assert_eq!(r.hi, 1.0 + 4.0 * f64::EPSILON + f64::MIN_POSITIVE);
        let r = Elementary::Pow(2.0).range(Interval::new(-1.0, 2.0));
        assert!(r.lo <= 0.0 && r.lo > -1e-300 && (r.hi - 4.0).abs() < 1e-14);
        let r = Elementary::Cos.range(Interval::new(3.0, 4.0));
        assert!(r.lo <= -1.0);
    }

    #[test]
    fn classify_from_expr() {
        let e = super::super::parse("2 / x").unwrap();
        assert_eq!(Elementary::from_expr(&e).unwrap().0, Elementary::Recip(2.0));
        let e = super::super::parse("2 ^ x").unwrap();
        assert_eq!(Elementary::from_expr(&e).unwrap().0, Elementary::ExpBase(2.0));
        let e = super::super::parse("x ^ 3").unwrap();
        assert_eq!(Elementary::from_expr(&e).unwrap().0, Elementary::Pow(3.0));
        let e = super::super::parse("relu(x)").unwrap();
        assert!(Elementary::from_expr(&e).is_err());
    }
}
