use std::collections::BTreeMap;

use overt_core::expr::{
    convert_mul_div, differentiate, evaluate, find_inflections, is_mul_div_free, parse, BinOp,
    Binding, Elementary, Expr, Func, Interval, DEFAULT_XI,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        prop::sample::select(vec!["x", "y", "z", "v_1", "x'"]).prop_map(Expr::var),
        (-1e3f64..1e3).prop_map(Expr::Const),
        prop::sample::select(vec![0.0, -0.0, 1e-7, 2.5e12, -1e-300]).prop_map(Expr::Const),
    ]
}

fn tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(6, 48, 2, |inner| {
        let funcs = vec![
            Func::Sin,
            Func::Cos,
            Func::Exp,
            Func::Log,
            Func::Tanh,
            Func::Relu,
            Func::Abs,
        ];
        let ops = vec![
            BinOp::Add,
            BinOp::Sub,
            BinOp::Mul,
            BinOp::Div,
            BinOp::Min,
            BinOp::Max,
        ];
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (prop::sample::select(funcs), inner.clone()).prop_map(|(f, a)| Expr::call(f, a)),
            (prop::sample::select(ops), inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| Expr::bin(op, a, b)),
            (inner, -4.0f64..4.0).prop_map(|(a, c)| Expr::pow(a, Expr::Const(c))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn print_then_parse_is_identity(e in tree()) {
        let text = e.to_string();
        let back = parse(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(back, e, "{}", text);
    }
}

fn bind(pairs: &[(&str, f64)]) -> Binding {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn derivatives_match_central_differences() {
    let cases = [
        "sin(x^2 + y - log(z))",
        "exp(x) * cos(y) + tanh(z)",
        "x^3 - 2^x + 3 / (x + 4)",
        "log(x^2 + 1) / (y^2 + 2)",
        "x * y * z - sin(x * z)",
        "(x + 1)^(1/3) + z^(-2)",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    for src in cases {
        let e = parse(src).unwrap();
        for var in ["x", "y", "z"] {
            let d = differentiate(&e, var).unwrap();
            for _ in 0..100 {
                let mut b = bind(&[
                    ("x", rng.gen_range(0.2..2.0)),
                    ("y", rng.gen_range(-2.0..2.0)),
                    ("z", rng.gen_range(0.5..2.0)),
                ]);
                let exact = evaluate(&d, &b).unwrap();
                let x0 = b[var];
                b.insert(var.into(), x0 + h);
                let fp = evaluate(&e, &b).unwrap();
                b.insert(var.into(), x0 - h);
                let fm = evaluate(&e, &b).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - exact).abs() / exact.abs().max(1.0);
                assert!(rel < 1e-6, "{src} d/d{var}: fd {fd} vs {exact}");
            }
        }
    }
}

#[test]
fn second_derivative_keeps_sign_between_inflections() {
    let cases = [
        (Elementary::Sin, -1.0, 4.0),
        (Elementary::Sin, -7.0, 7.0),
        (Elementary::Cos, -2.0, 5.0),
        (Elementary::Tanh, -1.5707963267948966, 1.5707963267948966),
        (Elementary::Exp, -3.0, 3.0),
        (Elementary::Log, 0.1, 5.0),
        (Elementary::Recip(2.0), 0.5, 3.0),
        (Elementary::Recip(-1.0), -3.0, -0.5),
        (Elementary::ExpBase(0.5), -2.0, 2.0),
        (Elementary::Pow(3.0), -1.0, 1.0),
        (Elementary::Pow(4.0), -1.0, 2.0),
        (Elementary::Pow(1.0 / 3.0), -2.0, -0.5),
        (Elementary::Pow(5.0 / 3.0), -1.0, 1.0),
        (Elementary::Pow(-1.0), 0.5, 2.0),
    ];
    for (f, lo, hi) in cases {
        let d = Interval::new(lo, hi);
        let infl = find_inflections(f, d).unwrap();
        let f2 = differentiate(&differentiate(&f.to_expr(Expr::var("x")), "x").unwrap(), "x").unwrap();
        let mut cuts = vec![lo];
        cuts.extend(&infl);
        cuts.push(hi);
        for w in cuts.windows(2) {
            let mut sign = 0.0;
            for k in 1..1000 {
                let x = w[0] + (w[1] - w[0]) * k as f64 / 1000.0;
                let v = evaluate(&f2, &bind(&[("x", x)])).unwrap();
                if v.abs() < 1e-12 {
                    continue;
                }
                if sign == 0.0 {
                    sign = v.signum();
                }
                assert_eq!(v.signum(), sign, "{f} on [{}, {}] at {x}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn mul_div_conversion_is_exact_on_samples() {
    let cases: &[(&str, &[(&str, f64, f64)])] = &[
        ("x * y", &[("x", 1.0, 2.0), ("y", 1.0, 2.0)]),
        ("x / y", &[("x", 1.0, 2.0), ("y", 1.0, 2.0)]),
        ("x * y * z", &[("x", -1.0, 2.0), ("y", -3.0, -1.0), ("z", 0.0, 0.5)]),
        ("x4 * cos(x3)", &[("x3", 1.5, 2.5), ("x4", 2.0, 3.0)]),
        ("sin(x * y) / (z + 2)", &[("x", -1.0, 1.0), ("y", -1.0, 1.0), ("z", -1.0, 1.0)]),
        ("x * x", &[("x", -1.0, 1.0)]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (src, doms) in cases {
        let e = parse(src).unwrap();
        let domains: BTreeMap<String, Interval> = doms
            .iter()
            .map(|(n, lo, hi)| (n.to_string(), Interval::new(*lo, *hi)))
            .collect();
        let c = convert_mul_div(&e, &domains, DEFAULT_XI).unwrap();
        assert!(is_mul_div_free(&c.expr), "{src} -> {}", c.expr);
        for _ in 0..1000 {
            let b: Binding = doms
                .iter()
                .map(|(n, lo, hi)| (n.to_string(), rng.gen_range(*lo..=*hi)))
                .collect();
            let want = evaluate(&e, &b).unwrap();
            let got = evaluate(&c.expr, &b).unwrap();
            assert!((want - got).abs() <= 1e-9, "{src} at {b:?}: {got} vs {want}");
        }
    }
}
