#![allow(dead_code)]

use overt_core::expr::{Elementary, Interval};
use rand::Rng;

/// Every supported elementary function, with the parameters exercised.
pub fn all_ops() -> Vec<Elementary> {
    vec![
        Elementary::Sin,
        Elementary::Cos,
        Elementary::Exp,
        Elementary::Log,
        Elementary::Tanh,
        Elementary::Recip(2.0),
        Elementary::Recip(-1.5),
        Elementary::ExpBase(0.5),
        Elementary::ExpBase(3.0),
        Elementary::Pow(2.0),
        Elementary::Pow(3.0),
        Elementary::Pow(4.0),
        Elementary::Pow(-1.0),
        Elementary::Pow(1.0 / 3.0),
        Elementary::Pow(1.5),
    ]
}

/// A random interval inside the region where `op` is defined and its
/// derivative is bounded.
pub fn random_interval(op: Elementary, rng: &mut impl Rng) -> Interval {
    let (lo, width) = match op {
        Elementary::Sin | Elementary::Cos => (rng.gen_range(-6.0..6.0), rng.gen_range(0.01..6.0)),
        Elementary::Exp => (rng.gen_range(-4.0..3.0), rng.gen_range(0.01..4.0)),
        Elementary::Log => (rng.gen_range(0.05..5.0), rng.gen_range(0.01..10.0)),
        Elementary::Tanh => (rng.gen_range(-4.0..4.0), rng.gen_range(0.01..6.0)),
        Elementary::Recip(_) => signed(rng),
        Elementary::Pow(c) if c < 0.0 => signed(rng),
        Elementary::ExpBase(_) => (rng.gen_range(-3.0..3.0), rng.gen_range(0.01..3.0)),
        Elementary::Pow(c) if c == 1.0 / 3.0 => {
            let lo = rng.gen_range(0.05..4.0);
            let w = rng.gen_range(0.01..4.0);
            if rng.gen_bool(0.5) {
                (lo, w)
            } else {
                (-lo - w, w)
            }
        }
        Elementary::Pow(c) if c.fract() != 0.0 => (rng.gen_range(0.0..3.0), rng.gen_range(0.01..3.0)),
        Elementary::Pow(_) => (rng.gen_range(-3.0..2.0), rng.gen_range(0.01..4.0)),
    };
    Interval::new(lo, lo + width)
}

fn signed(rng: &mut impl Rng) -> (f64, f64) {
    let lo = rng.gen_range(0.1..5.0);
    let w = rng.gen_range(0.01..5.0);
    if rng.gen_bool(0.5) {
        (lo, w)
    } else {
        (-lo - w, w)
    }
}

pub fn grid(d: Interval, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| d.lo + d.width() * k as f64 / (n - 1) as f64)
}
