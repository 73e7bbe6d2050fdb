use std::fs;
use std::path::PathBuf;

use overt_core::benchmarks::{controller, get_system, simulate, simulate_mc, QuerySpec, BENCHMARKS};
use overt_core::mip::LinearAtom;
use overt_core::nn::{Activation, Layer, Network};
use overt_core::overapprox::{Relation, SystemSpec};
use overt_core::reach::Modality;

fn zero_controller(inputs: usize, outputs: usize) -> Network {
    Network::new(vec![Layer {
        weights: vec![vec![0.0; inputs]; outputs],
        bias: vec![0.0; outputs],
        activation: Activation::Linear,
    }])
    .unwrap()
}

#[test]
fn pendulum_uncontrolled_step_by_hand() {
    let inst = get_system("pendulum").unwrap();
    let tr = simulate(&inst.system, &zero_controller(2, 1), &[1.0, 0.1], 1).unwrap();
    // g/l = 2, dt = 0.1
    let expected = [1.0 + 0.1 * 0.1, 0.1 + 0.1 * 2.0 * 0.8414709848078965];
    assert!((tr.states[1][0] - expected[0]).abs() < 1e-12);
    assert!((tr.states[1][1] - expected[1]).abs() < 1e-12);
    assert!((tr.states[1][1] - 0.26829).abs() < 1e-5);
}

#[test]
fn acc_positions_advance_by_velocity() {
    let inst = get_system("acc").unwrap();
    let x0 = [90.0, 10.0, 0.0, 30.0, 8.0, 0.0];
    let tr = simulate(&inst.system, &zero_controller(6, 1), &x0, 1).unwrap();
    assert_eq!(tr.states[1][0], 90.0 + 0.1 * 10.0);
    assert_eq!(tr.states[1][3], 30.0 + 0.1 * 8.0);
    // lead acceleration follows a = -2 with friction on the velocity
    let a3 = 0.1 * (2.0 * -2.0 - 2.0 * 1e-4 * 100.0);
    assert!((tr.states[1][2] - a3).abs() < 1e-12);
}

#[test]
fn trajectories_follow_the_dynamics() {
    for name in BENCHMARKS {
        let inst = get_system(name).unwrap();
        let net = controller(name).unwrap();
        let mc = simulate_mc(&inst.system, &net, &inst.initial, 5, 20, 3).unwrap();
        for tr in &mc.trajectories {
            assert_eq!(tr.states.len(), 6);
            assert_eq!(tr.controls.len(), 5);
            for t in 0..5 {
                assert_eq!(net.forward(&tr.states[t]).unwrap(), tr.controls[t]);
                let next = inst.system.step(&tr.states[t], &tr.controls[t]).unwrap();
                for (a, b) in next.iter().zip(&tr.states[t + 1]) {
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn zero_steps_hull_is_inside_initial_set() {
    let inst = get_system("tora").unwrap();
    let mc = simulate_mc(&inst.system, &controller("tora").unwrap(), &inst.initial, 0, 10_000, 1).unwrap();
    assert_eq!(mc.hulls.len(), 1);
    assert!(inst.initial.contains_box(&mc.hulls[0], 0.0));
    for (h, d) in mc.hulls[0].0.iter().zip(&inst.initial.0) {
        assert!(h.lo - d.lo < 1e-3 && d.hi - h.hi < 1e-3, "{h} vs {d}");
    }
}

#[test]
fn hulls_grow_with_samples_and_repeat_under_a_seed() {
    let inst = get_system("pendulum").unwrap();
    let net = controller("pendulum").unwrap();
    let small = simulate_mc(&inst.system, &net, &inst.initial, 10, 100, 42).unwrap();
    let large = simulate_mc(&inst.system, &net, &inst.initial, 10, 1000, 42).unwrap();
    for (s, l) in small.hulls.iter().zip(&large.hulls) {
        assert!(l.contains_box(s, 0.0));
    }
    assert_eq!(small, simulate_mc(&inst.system, &net, &inst.initial, 10, 100, 42).unwrap());
    assert!(simulate_mc(&inst.system, &net, &inst.initial, 1, 0, 42).is_err());
}

#[test]
fn benchmark_constants() {
    let p = get_system("pendulum").unwrap();
    assert_eq!(p.system.parameters["m"], 0.5);
    assert_eq!(p.system.parameters["l"], 0.5);
    assert_eq!(p.system.parameters["g"], 1.0);
    assert_eq!(p.system.parameters["dt"], 0.1);
    assert_eq!((p.property.modality, p.property.from, p.property.to), (Modality::G, 1, 25));
    assert_eq!(
        p.property.atoms,
        vec![LinearAtom {
            coeffs: vec![1.0, 0.0],
            relation: Relation::Ge,
            rhs: -0.2167
        }]
    );

    let t = get_system("tora").unwrap();
    assert_eq!(t.initial.to_bounds(), vec![[0.6, 0.7], [-0.7, -0.6], [-0.4, -0.3], [0.5, 0.6]]);
    assert_eq!(t.system.parameters["eps"], 0.1);
    assert_eq!(t.property.to, 15);

    let c = get_system("car").unwrap();
    assert_eq!((c.property.modality, c.property.to), (Modality::F, 10));
    assert_eq!(c.system.parameters["dt"], 0.2);

    let a = get_system("acc").unwrap();
    assert_eq!(a.system.parameters["D_min"], 10.0);
    assert_eq!(a.system.parameters["T_gap"], 1.4);
    assert_eq!(a.system.parameters["a"], -2.0);
    assert_eq!(a.system.parameters["mu"], 1e-4);
    assert_eq!(a.property.to, 55);
    // x1 - x4 - 1.4 x5 >= 10
    let atom = &a.property.atoms[0];
    assert_eq!(atom.coeffs, vec![1.0, 0.0, 0.0, -1.0, -1.4, 0.0]);
    assert_eq!((atom.relation, atom.rhs), (Relation::Ge, 10.0));
    assert!((a.system.measure("y", &[100.0, 0.0, 0.0, 50.0, 10.0, 0.0]).unwrap() - 36.0).abs() < 1e-12);

    assert!(get_system("cartpole").is_err());
}

#[test]
fn controller_shapes() {
    assert_eq!(controller("pendulum").unwrap().shape(), vec![2, 8, 8, 1]);
    assert_eq!(controller("tora").unwrap().shape(), vec![4, 8, 8, 1]);
    assert_eq!(controller("car").unwrap().shape(), vec![4, 16, 4, 2]);
    assert_eq!(controller("acc").unwrap().shape(), vec![6, 8, 8, 1]);
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

/// Shipped files equal the generators. Set `OVERT_BLESS=1` to rewrite them.
#[test]
fn shipped_files_match_generators() {
    let bless = std::env::var_os("OVERT_BLESS").is_some();
    for name in BENCHMARKS {
        let inst = get_system(name).unwrap();
        let files = [
            ("system.json", inst.system.to_json()),
            ("controller.json", controller(name).unwrap().to_json()),
            ("query.json", inst.query().to_json()),
        ];
        let dir = shipped(name);
        for (file, text) in files {
            let path = dir.join(file);
            if bless {
                fs::create_dir_all(&dir).unwrap();
                fs::write(&path, format!("{text}\n")).unwrap();
            }
            let on_disk = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(on_disk.trim_end(), text, "{} is stale", path.display());
        }
        let sys = SystemSpec::from_json(&fs::read_to_string(dir.join("system.json")).unwrap()).unwrap();
        assert_eq!(sys, inst.system);
        let q = QuerySpec::from_json(&fs::read_to_string(dir.join("query.json")).unwrap()).unwrap();
        assert_eq!(q, inst.query());
    }
}
