use overt_core::benchmarks::{get_system, random_network, simulate_mc};
use overt_core::expr::Interval;
use overt_core::nn::{Activation, Layer, Network};
use overt_core::overapprox::SystemSpec;
use overt_core::reach::{
    evaluate_property, BoxKind, ClosedLoop, ConcretizationSchedule, Modality, Property, PropertySpec, ReachParams,
    ResetPolicy, StateBox, VerdictStatus,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zero_controller(inputs: usize, outputs: usize) -> Network {
    Network::new(vec![Layer {
        weights: vec![vec![0.0; inputs]; outputs],
        bias: vec![0.0; outputs],
        activation: Activation::Linear,
    }])
    .unwrap()
}

fn halving() -> ClosedLoop {
    let sys = SystemSpec::from_json(r#"{"name": "halving", "states": ["x"], "controls": ["u"], "updates": ["0.5*x + u"]}"#)
        .unwrap();
    ClosedLoop::new(sys, zero_controller(1, 1), ReachParams::default()).unwrap()
}

fn prop(cl: &ClosedLoop, modality: Modality, from: usize, to: usize, atom: &str) -> Property {
    let spec = PropertySpec {
        modality,
        from,
        to,
        atoms: vec![atom.to_string()],
    };
    Property::compile(&spec, &cl.system).unwrap()
}

fn one_d(lo: f64, hi: f64) -> StateBox {
    StateBox::new(vec![Interval::new(lo, hi)]).unwrap()
}

#[test]
fn halving_three_steps() {
    let cl = halving();
    let init = one_d(1.0, 2.0);
    for sched in [ConcretizationSchedule(vec![3]), ConcretizationSchedule::concrete(3)] {
        let sets = cl.compute_reach_sets(&init, &sched).unwrap();
        assert!(sets.is_complete());
        let last = &sets.boxes[2].bounds.0[0];
        assert!((last.lo - 0.125).abs() < 1e-6 && (last.hi - 0.25).abs() < 1e-6, "{last:?}");
    }
}

#[test]
fn schedule_structure() {
    let cl = halving();
    let sets = cl
        .compute_reach_sets(&one_d(1.0, 2.0), &ConcretizationSchedule(vec![3, 1, 2]))
        .unwrap();
    let ts: Vec<usize> = sets.boxes.iter().map(|b| b.t).collect();
    assert_eq!(ts, (1..=6).collect::<Vec<_>>());
    let symbolic: Vec<usize> = sets.boxes.iter().filter(|b| b.kind == BoxKind::Symbolic).map(|b| b.t).collect();
    assert_eq!(symbolic, vec![3, 6]);
}

#[test]
fn unit_segments_equal_concrete_chain() {
    let inst = get_system("pendulum").unwrap();
    let cl = ClosedLoop::new(inst.system.clone(), zero_controller(2, 1), ReachParams::default()).unwrap();
    let a = cl.compute_reach_sets(&inst.initial, &ConcretizationSchedule(vec![1; 3])).unwrap();
    let b = cl.compute_reach_sets(&inst.initial, &ConcretizationSchedule::concrete(3)).unwrap();
    assert_eq!(a.state_boxes(), b.state_boxes());
    assert!(a.boxes.iter().all(|b| b.kind == BoxKind::Concrete));
}

#[test]
fn pendulum_uncontrolled_step_contains_samples() {
    let inst = get_system("pendulum").unwrap();
    let net = zero_controller(2, 1);
    let cl = ClosedLoop::new(inst.system.clone(), net.clone(), ReachParams::default()).unwrap();
    let sets = cl.compute_reach_sets(&inst.initial, &ConcretizationSchedule(vec![1])).unwrap();
    let mc = simulate_mc(&inst.system, &net, &inst.initial, 1, 2000, 11).unwrap();
    assert!(sets.boxes[0].bounds.contains_box(&mc.hulls[1], 0.0));
}

#[test]
fn unsafe_initial_set_fails_at_first_step() {
    let cl = halving();
    let p = prop(&cl, Modality::G, 1, 3, "x <= 0");
    let v = cl.feasibility(&one_d(1.0, 2.0), 3, &p).unwrap();
    assert_eq!(v.status, VerdictStatus::Fails);
    assert_eq!(v.step, Some(1));
    let cex = v.counterexample.unwrap();
    assert!(cex.real);
    assert_eq!(cex.start_step, 0);
    // The abstraction of a linear loop is exact, so the witness must follow it.
    for (t, w) in cex.states.windows(2).enumerate() {
        assert!((w[1][0] - 0.5 * w[0][0] - cex.controls[t][0]).abs() < 1e-6, "{:?}", cex.states);
    }
    for (a, b) in cex.states.iter().zip(&cex.replay) {
        assert!((a[0] - b[0]).abs() < 1e-6);
    }
    assert!(!p.holds_at(&cex.replay[cex.step]));
}

#[test]
fn distant_threshold_holds_everywhere() {
    let cl = halving();
    let p = prop(&cl, Modality::G, 1, 4, "x <= 100");
    let init = one_d(1.0, 2.0);
    assert_eq!(cl.feasibility(&init, 4, &p).unwrap().status, VerdictStatus::Holds);
    assert_eq!(cl.hs_feasibility(&init, 4, &p, ResetPolicy::Every(1)).unwrap().status, VerdictStatus::Holds);
    let sets = cl.compute_reach_sets(&init, &ConcretizationSchedule(vec![2, 2])).unwrap();
    assert_eq!(evaluate_property(&sets.state_boxes(), &p).unwrap().status, VerdictStatus::Holds);
}

#[test]
fn eventually_properties_over_boxes() {
    let cl = halving();
    let sets = cl.compute_reach_sets(&one_d(1.0, 2.0), &ConcretizationSchedule(vec![3])).unwrap();
    let boxes = sets.state_boxes();
    let reached = evaluate_property(&boxes, &prop(&cl, Modality::F, 1, 3, "x <= 0.3")).unwrap();
    assert_eq!(reached.status, VerdictStatus::Holds);
    assert_eq!(reached.step, Some(3));
    let never = evaluate_property(&boxes, &prop(&cl, Modality::F, 1, 3, "x <= 0.01")).unwrap();
    assert_eq!(never.status, VerdictStatus::Fails);
}

#[test]
fn eventually_by_feasibility() {
    let cl = halving();
    let init = one_d(1.0, 2.0);
    let v = cl.feasibility(&init, 3, &prop(&cl, Modality::F, 1, 3, "x <= 0.3")).unwrap();
    assert_eq!(v.status, VerdictStatus::Holds);
    assert_eq!(v.step, Some(3));
}

#[test]
fn horizon_before_range_is_an_error() {
    let cl = halving();
    let p = prop(&cl, Modality::G, 4, 5, "x <= 100");
    assert!(cl.feasibility(&one_d(1.0, 2.0), 3, &p).is_err());
}

/// Two-state linear loop with a small random relu controller.
fn random_instance(seed: u64) -> (ClosedLoop, StateBox, Property) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.gen_range(0.05..0.15);
    let sys = SystemSpec::from_json(&format!(
        r#"{{"name": "lin{seed}", "states": ["x1", "x2"], "controls": ["u"],
            "updates": ["x1 + {a}*x2", "0.95*x2 + 0.1*u"]}}"#
    ))
    .unwrap();
    let net = random_network(&[2, 4, 1], 0.5, seed);
    let init = StateBox::from_bounds(&[[0.0, 0.1], [0.2, 0.3]]).unwrap();
    let mc = simulate_mc(&sys, &net, &init, 3, 200, seed).unwrap();
    let top = (1..=3).map(|t| mc.hulls[t].0[0].hi).fold(f64::MIN, f64::max);
    let margin = if seed % 2 == 0 { 0.05 } else { -0.01 };
    let cl = ClosedLoop::new(sys, net, ReachParams::default()).unwrap();
    let p = prop(&cl, Modality::G, 1, 3, &format!("x1 <= {}", top + margin));
    (cl, init, p)
}

#[test]
fn hybrid_without_resets_matches_feasibility() {
    for seed in 0..10 {
        let (cl, init, p) = random_instance(seed);
        let a = cl.feasibility(&init, 3, &p).unwrap();
        let b = cl.hs_feasibility(&init, 3, &p, ResetPolicy::Never).unwrap();
        assert_eq!((a.status, a.step), (b.status, b.step), "seed {seed}");
        if seed % 2 == 1 {
            // The threshold cuts through the sampled hull.
            assert_eq!(a.status, VerdictStatus::Fails, "seed {seed}");
        }
    }
}

#[test]
fn reach_holds_implies_feasibility_holds() {
    for seed in [0, 2, 4] {
        let (cl, init, p) = random_instance(seed);
        let sets = cl.compute_reach_sets(&init, &ConcretizationSchedule(vec![3])).unwrap();
        if evaluate_property(&sets.state_boxes(), &p).unwrap().status == VerdictStatus::Holds {
            assert_eq!(cl.feasibility(&init, 3, &p).unwrap().status, VerdictStatus::Holds, "seed {seed}");
        }
    }
}

#[test]
fn reset_every_step_is_sound() {
    for seed in [1, 3] {
        let (cl, init, p) = random_instance(seed);
        let v = cl.hs_feasibility(&init, 3, &p, ResetPolicy::Every(1)).unwrap();
        // Violations exist, so holding would be unsound.
        assert_ne!(v.status, VerdictStatus::Holds, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reach_boxes_contain_simulations(seed in 0u64..1000, lo in -1.0f64..1.0, w in 0.01f64..0.5) {
        let (cl, _, _) = random_instance(seed);
        let init = StateBox::from_bounds(&[[lo, lo + w], [0.0, w]]).unwrap();
        let sets = cl.compute_reach_sets(&init, &ConcretizationSchedule(vec![2, 1])).unwrap();
        let mc = simulate_mc(&cl.system, &cl.controller, &init, 3, 300, seed).unwrap();
        for b in &sets.boxes {
            prop_assert!(b.bounds.contains_box(&mc.hulls[b.t], 0.0), "t={} {} vs {}", b.t, b.bounds, mc.hulls[b.t]);
        }
    }
}
