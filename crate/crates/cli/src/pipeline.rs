//! The pipelines behind each subcommand and the documents they write.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use overt_core::benchmarks::simulate_mc;
use overt_core::bounds1d::{overapprox_unary, PwlBound};
use overt_core::expr::{parse, Elementary, Expr, Interval};
use overt_core::mip::solver_by_name;
use overt_core::reach::{
    evaluate_property, ClosedLoop, Counterexample, Modality, Property, ReachParams, ResetPolicy, StateBox, TimedBox,
    Verdict, VerdictStatus,
};

use crate::config::{self, Flags, Instance};
use crate::CliError;

/// Environment variable selecting the solver backend.
pub const SOLVER_ENV: &str = "OVERT_SOLVER";

/// One-line stdout summary and process exit code.
pub struct Summary {
    pub line: String,
    pub code: u8,
}

#[derive(Serialize)]
struct VerdictDoc {
    status: VerdictStatus,
    step: Option<usize>,
    note: String,
}

#[derive(Serialize)]
struct Timing {
    seconds: f64,
}

#[derive(Serialize)]
struct RunDoc<'a, B: Serialize> {
    mode: &'a str,
    system: &'a str,
    solver: Option<&'a str>,
    horizon: usize,
    timesteps: Vec<B>,
    verdict: Option<VerdictDoc>,
    counterexample: Option<Value>,
    timing: Option<Timing>,
}

#[derive(Serialize)]
struct HullBox<'a> {
    t: usize,
    #[serde(rename = "box")]
    bounds: &'a StateBox,
    kind: &'static str,
}

fn core(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn timing(f: &Flags, start: Instant) -> Option<Timing> {
    f.timing.then(|| Timing {
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_json(f: &Flags, doc: &impl Serialize) -> Result<(), CliError> {
    if let Some(path) = &f.out {
        let mut text = serde_json::to_string_pretty(doc).expect("output serializes");
        text.push('\n');
        write_file(path, &text)?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.display().to_string(), e.to_string()))
}

fn write_csv(f: &Flags, states: &[String], rows: &[(usize, &str, &StateBox)]) -> Result<(), CliError> {
    let Some(path) = &f.csv else {
        return Ok(());
    };
    let mut text = String::from("t,kind");
    for s in states {
        let _ = write!(text, ",{s}_lo,{s}_hi");
    }
    text.push('\n');
    for (t, kind, b) in rows {
        let _ = write!(text, "{t},{kind}");
        for d in &b.0 {
            let _ = write!(text, ",{},{}", d.lo, d.hi);
        }
        text.push('\n');
    }
    write_file(path, &text)
}

fn exit_code(s: VerdictStatus) -> u8 {
    match s {
        VerdictStatus::Holds => 0,
        VerdictStatus::Fails => 1,
        VerdictStatus::Inconclusive | VerdictStatus::Unknown => 2,
    }
}

fn closed_loop(inst: &Instance, f: &Flags) -> Result<ClosedLoop, CliError> {
    let limits = config::limits(f)?;
    let params = ReachParams {
        approx: inst.approx,
        control_range: config::control_range(f),
        limits: limits.clone(),
        ..ReachParams::default()
    };
    let backend = std::env::var(SOLVER_ENV).unwrap_or_else(|_| "reference".into());
    let solver = solver_by_name(&backend, limits).map_err(core)?;
    Ok(ClosedLoop::new(inst.system.clone(), inst.controller.clone(), params)
        .map_err(core)?
        .with_solver(Arc::new(solver)))
}

/// The query's property with its range clipped to the horizon.
fn property(inst: &Instance, horizon: usize) -> Result<(Property, bool), CliError> {
    let mut spec = inst.query.property.clone();
    if horizon < spec.from {
        return Err(CliError::Usage(format!(
            "horizon {horizon} ends before the property range starts at {}",
            spec.from
        )));
    }
    let clipped = horizon < spec.to;
    spec.to = spec.to.min(horizon);
    Ok((Property::compile(&spec, &inst.system).map_err(core)?, clipped))
}

fn summary_line(v: &Verdict, mode: &str, label: &str) -> String {
    let mut line = format!("{} {mode} {label}", v.status.label());
    if let Some(t) = v.step.filter(|_| !v.note.starts_with("t=")) {
        let _ = write!(line, " t={t}");
    }
    if !v.note.is_empty() {
        let _ = write!(line, ": {}", v.note);
    }
    line
}

fn finish(
    f: &Flags,
    mode: &str,
    inst: &Instance,
    solver: &str,
    horizon: usize,
    v: Verdict,
    start: Instant,
) -> Result<Summary, CliError> {
    let rows: Vec<(usize, &str, &StateBox)> = v
        .boxes
        .iter()
        .map(|b| (b.t, if b.kind == overt_core::reach::BoxKind::Symbolic { "symbolic" } else { "concrete" }, &b.bounds))
        .collect();
    write_csv(f, &inst.system.states, &rows)?;
    let doc = RunDoc::<TimedBox> {
        mode,
        system: &inst.label,
        solver: Some(solver),
        horizon,
        timesteps: v.boxes.clone(),
        verdict: Some(VerdictDoc {
            status: v.status,
            step: v.step,
            note: v.note.clone(),
        }),
        counterexample: v.counterexample.as_ref().map(cex_json),
        timing: timing(f, start),
    };
    write_json(f, &doc)?;
    Ok(Summary {
        line: summary_line(&v, mode, &inst.label),
        code: exit_code(v.status),
    })
}

fn cex_json(c: &Counterexample) -> Value {
    serde_json::to_value(c).expect("counterexample serializes")
}

pub fn reach(f: &Flags) -> Result<Summary, CliError> {
    let start = Instant::now();
    let inst = config::load_instance(f)?;
    let horizon = inst.horizon(f);
    let schedule = inst.schedule(f)?;
    let (p, clipped) = property(&inst, horizon)?;
    let cl = closed_loop(&inst, f)?;
    let sets = cl.compute_reach_sets(&inst.query.initial, &schedule).map_err(core)?;
    let mut v = match &sets.failure {
        None => evaluate_property(&sets.state_boxes(), &p).map_err(core)?,
        Some(why) => Verdict {
            status: VerdictStatus::Unknown,
            step: Some(sets.boxes.len() + 1),
            counterexample: None,
            boxes: Vec::new(),
            note: why.clone(),
        },
    };
    if clipped {
        v.note = format!("{} (property range clipped to t<={horizon})", v.note).trim_start().to_string();
    }
    v.boxes = sets.boxes;
    finish(f, "reach", &inst, cl.solver_name(), horizon, v, start)
}

pub fn feasibility(f: &Flags, policy: Option<ResetPolicy>) -> Result<Summary, CliError> {
    let start = Instant::now();
    let inst = config::load_instance(f)?;
    let horizon = inst.horizon(f);
    let (p, clipped) = property(&inst, horizon)?;
    let cl = closed_loop(&inst, f)?;
    let initial = &inst.query.initial;
    let (mode, v) = match policy {
        None => ("feas", cl.feasibility(initial, horizon, &p)),
        Some(policy) => ("hsfeas", cl.hs_feasibility(initial, horizon, &p, policy)),
    };
    let mut v = v.map_err(core)?;
    if clipped {
        v.note = format!("{} (property range clipped to t<={horizon})", v.note);
    }
    finish(f, mode, &inst, cl.solver_name(), horizon, v, start)
}

pub fn simulate(f: &Flags) -> Result<Summary, CliError> {
    let start = Instant::now();
    let inst = config::load_instance(f)?;
    let horizon = inst.horizon(f);
    let samples = f.samples.unwrap_or(1000);
    let seed = f.seed.unwrap_or(0);
    let mc = simulate_mc(&inst.system, &inst.controller, &inst.query.initial, horizon, samples, seed).map_err(core)?;
    // A simulated violation is a real counterexample.
    let p = property(&inst, horizon).ok().map(|(p, _)| p);
    let violation = p.as_ref().and_then(|p| {
        mc.trajectories.iter().enumerate().find_map(|(i, tr)| {
            let in_range = (p.from..=p.to).filter(|t| *t < tr.states.len());
            match p.modality {
                Modality::G => in_range
                    .into_iter()
                    .find(|t| !p.holds_at(&tr.states[*t]))
                    .map(|t| (i, Some(t))),
                Modality::F => {
                    let mut r = in_range;
                    (!r.any(|t| p.holds_at(&tr.states[t]))).then_some((i, None))
                }
            }
        })
    });
    let rows: Vec<(usize, &str, &StateBox)> = mc.hulls.iter().enumerate().map(|(t, h)| (t, "hull", h)).collect();
    write_csv(f, &inst.system.states, &rows)?;
    let (status, step, note, cex) = match violation {
        Some((i, step)) => {
            let tr = &mc.trajectories[i];
            let note = match step {
                Some(t) => format!("sample {i} violates the property at t={t}"),
                None => format!("sample {i} never reaches the goal"),
            };
            let cex = json!({"sample": i, "step": step, "states": tr.states, "controls": tr.controls});
            (VerdictStatus::Fails, step, note, Some(cex))
        }
        None => (
            VerdictStatus::Holds,
            None,
            format!("{samples} samples, no violation (not a proof)"),
            None,
        ),
    };
    let doc = RunDoc {
        mode: "simulate",
        system: &inst.label,
        solver: None,
        horizon,
        timesteps: rows
            .iter()
            .map(|(t, kind, b)| HullBox { t: *t, bounds: b, kind })
            .collect(),
        verdict: p.is_some().then(|| VerdictDoc {
            status,
            step,
            note: note.clone(),
        }),
        counterexample: cex,
        timing: timing(f, start),
    };
    write_json(f, &doc)?;
    let (label, code) = match status {
        VerdictStatus::Fails => ("FAILS", 1),
        _ => ("COMPLETED", 0),
    };
    Ok(Summary {
        line: format!("{label} simulate {}: {note} (seed {seed})", inst.label),
        code,
    })
}

fn bound_json(b: &PwlBound, var: &str) -> Result<Value, CliError> {
    let cf = b.to_closed_form(&Expr::var(var)).map_err(core)?;
    let points: Vec<[f64; 2]> = b.xs.iter().zip(&b.ys).map(|(x, y)| [*x, *y]).collect();
    Ok(json!({"breakpoints": points, "closed_form": cf.to_string()}))
}

pub fn approx(f: &Flags) -> Result<Summary, CliError> {
    let start = Instant::now();
    match &f.expr {
        Some(text) => approx_expr(f, text, start),
        None => approx_system(f, start),
    }
}

fn approx_expr(f: &Flags, text: &str, start: Instant) -> Result<Summary, CliError> {
    let e = parse(text).map_err(core)?;
    let (op, arg) = Elementary::from_expr(&e).map_err(core)?;
    let var = arg
        .as_var_name()
        .ok_or_else(|| CliError::Usage(format!("`{text}`: the argument must be a single variable")))?
        .to_string();
    let [lo, hi] = config::domain(f)?;
    let mut params = match f.n.or(f.segments) {
        Some(n) => overt_core::bounds1d::ApproxParams::with_segments(n),
        None => Default::default(),
    };
    if let Some(eps) = f.epsilon {
        params.epsilon = eps;
    }
    let (up, low) = overapprox_unary(op, Interval::new(lo, hi), &params).map_err(core)?;
    let doc = json!({
        "mode": "approx",
        "expr": text,
        "variable": var,
        "domain": [lo, hi],
        "epsilon": params.epsilon,
        "upper": bound_json(&up, &var)?,
        "lower": bound_json(&low, &var)?,
        "timing": timing(f, start),
    });
    write_json(f, &doc)?;
    Ok(Summary {
        line: format!(
            "COMPLETED approx {text} on [{lo}, {hi}]: {} upper and {} lower segments",
            up.segments(),
            low.segments()
        ),
        code: 0,
    })
}

fn approx_system(f: &Flags, start: Instant) -> Result<Summary, CliError> {
    let inst = config::load_instance(f)?;
    let cl = closed_loop(&inst, f)?;
    let a = cl.overapproximate(&inst.query.initial).map_err(core)?;
    let doc = json!({
        "mode": "approx",
        "system": inst.label,
        "box": inst.query.initial,
        "approximation": a.to_json(),
        "timing": timing(f, start),
    });
    write_json(f, &doc)?;
    Ok(Summary {
        line: format!(
            "COMPLETED approx {}: {} constraints, {} bounded relations",
            inst.label,
            a.constraints.len(),
            a.bounded_count()
        ),
        code: 0,
    })
}
