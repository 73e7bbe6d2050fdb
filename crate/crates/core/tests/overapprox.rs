use std::collections::BTreeMap;

use overt_core::benchmarks::{get_system, BENCHMARKS};
use overt_core::bounds1d::ApproxParams;
use overt_core::expr::{convert_mul_div, evaluate_with, Interval, DEFAULT_XI};
use overt_core::overapprox::{overapproximate_dynamics, propagate_ranges, rewrite, Relation, SystemSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONTROL: Interval = Interval { lo: -2.0, hi: 2.0 };

fn seeds(sys: &SystemSpec, states: &[Interval]) -> BTreeMap<String, Interval> {
    let controls = vec![CONTROL; sys.controls.len()];
    sys.states
        .iter()
        .chain(&sys.controls)
        .cloned()
        .zip(states.iter().chain(&controls).copied())
        .collect()
}

fn sample(rng: &mut ChaCha8Rng, doms: &BTreeMap<String, Interval>) -> BTreeMap<String, f64> {
    doms.iter()
        .map(|(k, d)| (k.clone(), d.lo + (d.hi - d.lo) * rng.gen::<f64>()))
        .collect()
}

#[test]
fn rewritten_chains_reproduce_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in BENCHMARKS {
        let inst = get_system(name).unwrap();
        let doms = seeds(&inst.system, &inst.initial.0);
        for (k, update) in inst.system.resolved_updates().iter().enumerate() {
            let converted = convert_mul_div(update, &doms, DEFAULT_XI).unwrap().expr.fold_constants();
            let (out, chain) = rewrite(&converted, &format!("d{k}_")).unwrap();
            for _ in 0..1000 {
                let mut env = sample(&mut rng, &doms);
                let direct = evaluate_with(update, &|n| env.get(n).copied()).unwrap();
                for c in &chain {
                    assert_eq!(c.relation, Relation::Eq);
                    let v = evaluate_with(&c.rhs, &|n| env.get(n).copied()).unwrap();
                    env.insert(c.var.clone(), v);
                }
                let chained = env[&out];
                assert!(
                    (chained - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                    "{name} dim {k}: {chained} vs {direct}"
                );
            }
        }
    }
}

#[test]
fn pendulum_envelope_contains_exact_step() {
    let inst = get_system("pendulum").unwrap();
    let a = overapproximate_dynamics(&inst.system, &inst.initial.0, &[CONTROL], &ApproxParams::default()).unwrap();
    let point: BTreeMap<String, f64> = [("x1", 1.0), ("x2", 0.1), ("u", 0.0)].map(|(k, v)| (k.to_string(), v)).into();
    let env = a.envelope(&point).unwrap();
    assert!(env[0].contains(1.01), "{:?}", env[0]);
    let exact = 0.1 + 0.1 * 2.0 * 1f64.sin();
    assert!((exact - 0.26829).abs() < 1e-5);
    assert!(env[1].contains(exact), "{:?}", env[1]);
    // the envelope is tight at the error target
    assert!(env[1].width() < 0.01, "{:?}", env[1]);
}

#[test]
fn envelopes_contain_exact_steps_on_every_benchmark() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in BENCHMARKS {
        let inst = get_system(name).unwrap();
        let doms = seeds(&inst.system, &inst.initial.0);
        let controls = vec![CONTROL; inst.system.controls.len()];
        let a = overapproximate_dynamics(&inst.system, &inst.initial.0, &controls, &inst.approx).unwrap();
        for _ in 0..500 {
            let point = sample(&mut rng, &doms);
            let x: Vec<f64> = inst.system.states.iter().map(|s| point[s]).collect();
            let u: Vec<f64> = inst.system.controls.iter().map(|s| point[s]).collect();
            let next = inst.system.step(&x, &u).unwrap();
            for (k, (e, v)) in a.envelope(&point).unwrap().iter().zip(&next).enumerate() {
                assert!(e.contains(*v), "{name} dim {k}: {v} not in {e}");
            }
        }
    }
}

#[test]
fn linear_update_needs_no_bounds() {
    let sys = SystemSpec::from_json(r#"{"name": "decay", "states": ["x"], "controls": ["u"], "updates": ["0.9*x + u"]}"#)
        .unwrap();
    let a = overapproximate_dynamics(&sys, &[Interval::new(1.0, 2.0)], &[Interval::point(0.0)], &ApproxParams::default())
        .unwrap();
    assert_eq!(a.bounded_count(), 0);
    let point: BTreeMap<String, f64> = [("x".to_string(), 1.5), ("u".to_string(), 0.0)].into();
    let env = a.envelope(&point).unwrap();
    assert!((env[0].lo - 1.35).abs() < 1e-12 && (env[0].hi - 1.35).abs() < 1e-12);
    let out = &a.domains[&a.outputs[0]];
    assert!((out.lo - 0.9).abs() < 1e-12 && (out.hi - 1.8).abs() < 1e-12, "{out}");
}

#[test]
fn approximation_document_lists_constraints() {
    let inst = get_system("pendulum").unwrap();
    let a = overapproximate_dynamics(&inst.system, &inst.initial.0, &[CONTROL], &ApproxParams::default()).unwrap();
    let doc = a.to_json();
    assert_eq!(doc["inputs"], serde_json::json!(["x1", "x2", "u"]));
    assert_eq!(doc["constraints"].as_array().unwrap().len(), a.constraints.len());
    assert!(doc["domains"].as_object().unwrap().contains_key(&a.outputs[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagated_ranges_cover_chain_values(
        lo1 in -1.5f64..1.0, w1 in 0.01f64..0.5, lo2 in -1.0f64..1.0, w2 in 0.01f64..0.5, seed in 0u64..1000,
    ) {
        let inst = get_system("tora").unwrap();
        let mut states = inst.initial.0.clone();
        states[0] = Interval::new(lo1, lo1 + w1);
        states[2] = Interval::new(lo2, lo2 + w2);
        let doms = seeds(&inst.system, &states);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (k, update) in inst.system.resolved_updates().iter().enumerate() {
            let converted = convert_mul_div(update, &doms, DEFAULT_XI).unwrap().expr.fold_constants();
            let (_, chain) = rewrite(&converted, &format!("d{k}_")).unwrap();
            let ranges = propagate_ranges(&chain, &doms).unwrap();
            for _ in 0..50 {
                let mut env = sample(&mut rng, &doms);
                for c in &chain {
                    let v = evaluate_with(&c.rhs, &|n| env.get(n).copied()).unwrap();
                    prop_assert!(ranges[&c.var].contains(v), "{} = {} outside {}", c.var, v, ranges[&c.var]);
                    env.insert(c.var.clone(), v);
                }
            }
        }
    }
}
