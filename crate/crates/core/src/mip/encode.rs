//! Bounded MIP encodings of piecewise-linear primitives, PWL bounds and
//! networks. Every big-M comes from variable bounds, never from a global
//! constant.

use crate::bounds1d::{overapprox_unary, ApproxParams, PwlBound, Side};
use crate::expr::{BinOp, Elementary, Expr, Func, Interval};
use crate::nn::{Activation, Network};
use crate::overapprox::Relation;

use super::problem::MipProblem;
use super::MipError;

/// Affine combination of problem variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lin {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Lin {
    pub fn var(v: usize) -> Lin {
        Lin {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Lin {
        Lin {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn scale(mut self, c: f64) -> Lin {
        for t in &mut self.terms {
            t.1 *= c;
        }
        self.constant *= c;
        self
    }

    pub fn plus(mut self, other: &Lin, sign: f64) -> Lin {
        self.terms.extend(other.terms.iter().map(|(v, a)| (*v, sign * a)));
        self.constant += sign * other.constant;
        self
    }

    /// Sound range over the current variable bounds.
    pub fn interval(&self, p: &MipProblem) -> Interval {
        let (mut lo, mut hi, mut mag) = (self.constant, self.constant, self.constant.abs());
        for &(v, a) in &self.terms {
            let d = &p.vars[v];
            lo += (a * d.lo).min(a * d.hi);
            hi += (a * d.lo).max(a * d.hi);
            mag += a.abs() * d.lo.abs().max(d.hi.abs());
        }
        let pad = 4.0 * (self.terms.len() + 2) as f64 * f64::EPSILON * mag;
        Interval::new(lo - pad, hi + pad)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, a)| a * x[*v]).sum::<f64>()
    }

    /// A single variable with unit coefficient and no offset.
    pub fn as_var(&self) -> Option<usize> {
        match self.terms.as_slice() {
            [(v, a)] if *a == 1.0 && self.constant == 0.0 => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwlKind {
    Relu,
    Max,
    Min,
}

/// How equalities `y = g(x)` with a piecewise-linear bound `g` are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PwlEncoding {
    /// Segment-fill (incremental) encoding on the breakpoints, with one
    /// binary per interior breakpoint; convex lower and concave upper bounds
    /// that only feed a one-sided relation need no binaries.
    #[default]
    Incremental,
    /// Encode the closed-form max/min/relu expression directly.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub output: usize,
    pub binaries: Vec<usize>,
}

/// Writes encodings into a problem, naming new variables `{prefix}{base}{k}`.
pub struct Encoder<'p> {
    pub problem: &'p mut MipProblem,
    prefix: String,
    counter: usize,
    pub pwl: PwlEncoding,
}

impl<'p> Encoder<'p> {
    pub fn new(problem: &'p mut MipProblem, prefix: &str) -> Encoder<'p> {
        Encoder {
            problem,
            prefix: prefix.to_string(),
            counter: 0,
            pwl: PwlEncoding::default(),
        }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.counter += 1;
        format!("{}{base}{}", self.prefix, self.counter)
    }

    pub fn new_var(&mut self, base: &str, d: Interval) -> Result<usize, MipError> {
        let name = self.fresh(base);
        self.problem.add_var(&name, d.lo, d.hi)
    }

    fn new_binary(&mut self) -> Result<usize, MipError> {
        let name = self.fresh("b");
        self.problem.add_binary(&name)
    }

    /// `lhs (rel) rhs` for affine sides.
    pub fn relate(&mut self, lhs: &Lin, rel: Relation, rhs: &Lin) -> Result<(), MipError> {
        let d = lhs.clone().plus(rhs, -1.0);
        self.problem.add_row(&d.terms, rel, -d.constant)
    }

    /// A variable equal to `e`, reusing it when `e` already is one.
    pub fn materialize(&mut self, e: &Lin, base: &str) -> Result<usize, MipError> {
        if let Some(v) = e.as_var() {
            return Ok(v);
        }
        let d = e.interval(self.problem);
        let v = self.new_var(base, d)?;
        self.relate(&Lin::var(v), Relation::Eq, e)?;
        Ok(v)
    }

    /// Exact bounded encoding of `relu(z)`, `max(z…)` or `min(z…)`.
    pub fn encode_pwl(&mut self, kind: PwlKind, operands: &[Lin]) -> Result<Encoded, MipError> {
        match kind {
            PwlKind::Relu => {
                let [z] = operands else {
                    return Err(MipError::Unsupported(format!("relu takes one operand, got {}", operands.len())));
                };
                self.encode_relu(z)
            }
            PwlKind::Max => self.encode_max(operands),
            PwlKind::Min => {
                let neg: Vec<Lin> = operands.iter().map(|o| o.clone().scale(-1.0)).collect();
                let inner = self.encode_max(&neg)?;
                let d = self.problem.vars[inner.output].clone();
                let y = self.new_var("min", Interval::new(-d.hi, -d.lo))?;
                self.relate(&Lin::var(y), Relation::Eq, &Lin::var(inner.output).scale(-1.0))?;
                Ok(Encoded {
                    output: y,
                    binaries: inner.binaries,
                })
            }
        }
    }

    fn check_bounded(&self, d: Interval) -> Result<(), MipError> {
        if d.is_finite() {
            Ok(())
        } else {
            Err(MipError::Unbounded(format!("operand range {d}")))
        }
    }

    fn encode_relu(&mut self, z: &Lin) -> Result<Encoded, MipError> {
        let d = z.interval(self.problem);
        self.check_bounded(d)?;
        let (l, u) = (d.lo, d.hi);
        if u <= 0.0 {
            let y = self.new_var("relu", Interval::point(0.0))?;
            return Ok(Encoded { output: y, binaries: vec![] });
        }
        if l >= 0.0 {
            let y = self.materialize(z, "relu")?;
            return Ok(Encoded { output: y, binaries: vec![] });
        }
        let y = self.new_var("relu", Interval::new(0.0, u))?;
        let delta = self.new_binary()?;
        let yl = Lin::var(y);
        // y >= z
        self.relate(&yl, Relation::Ge, z)?;
        // y <= u δ
        self.relate(&yl, Relation::Le, &Lin::var(delta).scale(u))?;
        // y <= z - l (1 - δ)
        let rhs = z.clone().plus(&Lin::constant(-l), 1.0).plus(&Lin::var(delta).scale(-l), -1.0);
        self.relate(&yl, Relation::Le, &rhs)?;
        Ok(Encoded {
            output: y,
            binaries: vec![delta],
        })
    }

    fn encode_max(&mut self, operands: &[Lin]) -> Result<Encoded, MipError> {
        if operands.is_empty() {
            return Err(MipError::Unsupported("max of no operands".into()));
        }
        let ranges: Vec<Interval> = operands.iter().map(|o| o.interval(self.problem)).collect();
        for r in &ranges {
            self.check_bounded(*r)?;
        }
        // operands whose upper bound cannot beat the best lower bound never win
        let (best, floor) = ranges
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if r.lo > acc.1 { (i, r.lo) } else { acc });
        let keep: Vec<usize> = (0..operands.len()).filter(|&i| i == best || ranges[i].hi > floor).collect();
        if keep.len() == 1 {
            let y = self.materialize(&operands[keep[0]], "max")?;
            return Ok(Encoded { output: y, binaries: vec![] });
        }
        let top = keep.iter().map(|&i| ranges[i].hi).fold(f64::NEG_INFINITY, f64::max);
        let y = self.new_var("max", Interval::new(floor, top))?;
        let yl = Lin::var(y);
        let mut deltas = Vec::with_capacity(keep.len());
        for &i in &keep {
            deltas.push(self.new_binary()?);
            self.relate(&yl, Relation::Ge, &operands[i])?;
        }
        for (k, &i) in keep.iter().enumerate() {
            // y <= x_i + (max_{j≠i} u_j - l_i)(1 - δ_i)
            let other = keep
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| ranges[j].hi)
                .fold(f64::NEG_INFINITY, f64::max);
            let big = (other - ranges[i].lo).max(0.0);
            let rhs = operands[i]
                .clone()
                .plus(&Lin::constant(big), 1.0)
                .plus(&Lin::var(deltas[k]).scale(big), -1.0);
            self.relate(&yl, Relation::Le, &rhs)?;
        }
        let sum = Lin {
            terms: deltas.iter().map(|d| (*d, 1.0)).collect(),
            constant: 0.0,
        };
        self.relate(&sum, Relation::Eq, &Lin::constant(1.0))?;
        Ok(Encoded {
            output: y,
            binaries: deltas,
        })
    }

    /// Affine expressions combined with relu, abs, min and max.
    pub fn encode_expr(&mut self, e: &Expr, env: &dyn Fn(&str) -> Option<usize>) -> Result<Lin, MipError> {
        Ok(match e {
            Expr::Const(c) => Lin::constant(*c),
            Expr::Var(n) => Lin::var(env(n).ok_or_else(|| MipError::Inconsistent(format!("unbound `{n}`")))?),
            Expr::Neg(a) => self.encode_expr(a, env)?.scale(-1.0),
            Expr::Bin(op, a, b) => match op {
                BinOp::Add | BinOp::Sub => {
                    let a = self.encode_expr(a, env)?;
                    let b = self.encode_expr(b, env)?;
                    a.plus(&b, if *op == BinOp::Add { 1.0 } else { -1.0 })
                }
                BinOp::Mul | BinOp::Div => {
                    let (x, y) = (self.encode_expr(a, env)?, self.encode_expr(b, env)?);
                    match (x.terms.is_empty(), y.terms.is_empty(), op) {
                        (true, _, BinOp::Mul) => y.scale(x.constant),
                        (_, true, BinOp::Mul) => x.scale(y.constant),
                        (_, true, BinOp::Div) if y.constant != 0.0 => x.scale(1.0 / y.constant),
                        _ => return Err(MipError::Unsupported(format!("nonlinear term `{e}`"))),
                    }
                }
                BinOp::Min | BinOp::Max => {
                    let ops = [self.encode_expr(a, env)?, self.encode_expr(b, env)?];
                    let kind = if *op == BinOp::Max { PwlKind::Max } else { PwlKind::Min };
                    Lin::var(self.encode_pwl(kind, &ops)?.output)
                }
                BinOp::Pow => return Err(MipError::Unsupported(format!("nonlinear term `{e}`"))),
            },
            Expr::Call(Func::Relu, a) => {
                let z = self.encode_expr(a, env)?;
                Lin::var(self.encode_pwl(PwlKind::Relu, &[z])?.output)
            }
            Expr::Call(Func::Abs, a) => {
                let z = self.encode_expr(a, env)?;
                let ops = [z.clone(), z.scale(-1.0)];
                Lin::var(self.encode_pwl(PwlKind::Max, &ops)?.output)
            }
            Expr::Call(..) => return Err(MipError::Unsupported(format!("nonlinear term `{e}`"))),
        })
    }

    /// Encode `y (rel) g(x)` for a piecewise-linear bound `g`. `rel` is `Le`
    /// for upper bounds and `Ge` for lower bounds; `Eq` forces the exact
    /// graph.
    pub fn encode_bound(&mut self, x: usize, bound: &PwlBound, y: usize, rel: Relation) -> Result<Vec<usize>, MipError> {
        let d = bound.domain();
        self.problem.tighten(x, d.lo, d.hi)?;
        let lines = segment_lines(bound);
        let slopes: Vec<f64> = lines.iter().map(|l| l.0).collect();
        let one_sided = match (rel, bound.side) {
            (Relation::Le, Side::Upper) => slopes.windows(2).all(|w| w[1] <= w[0]),
            (Relation::Ge, Side::Lower) => slopes.windows(2).all(|w| w[1] >= w[0]),
            _ => false,
        };
        if one_sided || lines.len() == 1 {
            // y rel s_k x + c_k for every segment k
            for (s, c) in &lines {
                let rhs = Lin::var(x).scale(*s).plus(&Lin::constant(*c), 1.0);
                self.relate(&Lin::var(y), rel, &rhs)?;
            }
            return Ok(vec![]);
        }
        if self.pwl == PwlEncoding::ClosedForm {
            let g = bound
                .to_closed_form(&Expr::var("x"))
                .map_err(|e| MipError::Unsupported(e.to_string()))?;
            let gl = self.encode_expr(&g, &|n| (n == "x").then_some(x))?;
            self.relate(&Lin::var(y), rel, &gl)?;
            return Ok(vec![]);
        }
        // segment fill: x = x0 + Σ δ_k, g = y0 + Σ s_k δ_k, segments filled in order
        let k = bound.segments();
        let mut deltas = Vec::with_capacity(k);
        for i in 0..k {
            let w = bound.xs[i + 1] - bound.xs[i];
            deltas.push(self.new_var("seg", Interval::new(0.0, w))?);
        }
        let mut binaries = Vec::with_capacity(k - 1);
        for i in 0..k - 1 {
            let z = self.new_binary()?;
            let (wi, wn) = (bound.xs[i + 1] - bound.xs[i], bound.xs[i + 2] - bound.xs[i + 1]);
            self.relate(&Lin::var(deltas[i]), Relation::Ge, &Lin::var(z).scale(wi))?;
            self.relate(&Lin::var(deltas[i + 1]), Relation::Le, &Lin::var(z).scale(wn))?;
            binaries.push(z);
        }
        let mut xs = Lin::constant(bound.xs[0]);
        let mut gs = Lin::constant(bound.ys[0]);
        for (i, dv) in deltas.iter().enumerate() {
            xs.terms.push((*dv, 1.0));
            gs.terms.push((*dv, slopes[i]));
        }
        self.relate(&Lin::var(x), Relation::Eq, &xs)?;
        self.relate(&Lin::var(y), rel, &gs)?;
        Ok(binaries)
    }

    /// Network outputs as variables, given input variables whose bounds
    /// define the box. Tanh neurons are enclosed by `tanh_params` bounds.
    pub fn encode_network(&mut self, net: &Network, inputs: &[usize], tanh_params: &ApproxParams) -> Result<Vec<usize>, MipError> {
        if inputs.len() != net.input_dim() {
            return Err(MipError::Inconsistent(format!(
                "network expects {} inputs, got {}",
                net.input_dim(),
                inputs.len()
            )));
        }
        let input_box: Vec<Interval> = inputs
            .iter()
            .map(|&v| Interval::new(self.problem.vars[v].lo, self.problem.vars[v].hi))
            .collect();
        let bounds = net.neuron_bounds(&input_box).map_err(|e| MipError::Inconsistent(e.to_string()))?;
        let mut h: Vec<Lin> = inputs.iter().map(|&v| Lin::var(v)).collect();
        for (layer, pre) in net.layers.iter().zip(&bounds.pre) {
            let mut next = Vec::with_capacity(layer.output_dim());
            for ((row, b), d) in layer.weights.iter().zip(&layer.bias).zip(pre) {
                let mut z = Lin::constant(*b);
                for (w, hv) in row.iter().zip(&h) {
                    if *w != 0.0 {
                        z = z.plus(hv, *w);
                    }
                }
                let out = match layer.activation {
                    Activation::Linear => {
                        let v = self.new_var("n", *d)?;
                        self.relate(&Lin::var(v), Relation::Eq, &z)?;
                        Lin::var(v)
                    }
                    Activation::Relu => {
                        let (l, u) = (d.lo, d.hi);
                        if u <= 0.0 {
                            Lin::constant(0.0)
                        } else if l >= 0.0 {
                            z
                        } else {
                            let zv = self.new_var("n", *d)?;
                            self.relate(&Lin::var(zv), Relation::Eq, &z)?;
                            Lin::var(self.encode_relu(&Lin::var(zv))?.output)
                        }
                    }
                    Activation::Tanh => {
                        let zv = self.new_var("n", *d)?;
                        self.relate(&Lin::var(zv), Relation::Eq, &z)?;
                        let r = Elementary::Tanh.range(*d);
                        let y = self.new_var("tanh", r)?;
                        let (up, lo) = overapprox_unary(Elementary::Tanh, *d, tanh_params)
                            .map_err(|e| MipError::Unsupported(e.to_string()))?;
                        self.encode_bound(zv, &up, y, Relation::Le)?;
                        self.encode_bound(zv, &lo, y, Relation::Ge)?;
                        Lin::var(y)
                    }
                };
                next.push(out);
            }
            h = next;
        }
        h.iter().map(|o| self.materialize(o, "out")).collect()
    }
}

/// `(slope, intercept)` of every segment.
fn segment_lines(b: &PwlBound) -> Vec<(f64, f64)> {
    b.xs.windows(2)
        .zip(b.ys.windows(2))
        .map(|(x, y)| {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            (s, y[0] - s * x[0])
        })
        .collect()
}
