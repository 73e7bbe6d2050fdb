//! Built-in benchmark systems, their controllers and a Monte Carlo
//! simulator.
//!
//! Trained controllers for these systems are not available, so each
//! benchmark ships a small deterministic one: a hand-built saturated linear
//! feedback for the pendulum and seeded random networks elsewhere. Random
//! weights are drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
//! with a ChaCha8 generator.
//!
//! Monte Carlo initial states are drawn uniformly from the initial box with
//! `ChaCha8Rng::seed_from_u64(seed)`, one `f64` per dimension in dimension
//! order, sample after sample. A run with more samples therefore extends a
//! run with fewer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds1d::ApproxParams;
use crate::expr::Interval;
use crate::nn::{Activation, Layer, Network, NnError};
use crate::overapprox::SystemSpec;
use crate::reach::{ConcretizationSchedule, Modality, Property, PropertySpec, ReachError, StateBox};

/// Seed used for the generated controllers.
pub const CONTROLLER_SEED: u64 = 2024;

/// Names accepted by [`get_system`].
pub const BENCHMARKS: [&str; 4] = ["pendulum", "tora", "car", "acc"];

/// Saturation of the car's acceleration and steering commands.
pub const CAR_CONTROL_LIMIT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("unknown benchmark `{0}` (expected one of pendulum, tora, car, acc)")]
    Unknown(String),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("simulation: {0}")]
    Simulation(String),
}

/// Initial set, property, horizon and schedule, as stored in query files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub initial: StateBox,
    pub property: PropertySpec,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ConcretizationSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<ApproxParams>,
}

impl QuerySpec {
    pub fn from_json(text: &str) -> Result<QuerySpec, ReachError> {
        serde_json::from_str(text).map_err(|e| ReachError::Property(format!("query file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("query serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub system: SystemSpec,
    pub property: Property,
    pub initial: StateBox,
    pub horizon: usize,
    pub schedule: ConcretizationSchedule,
    /// Abstraction resolution suited to the instance.
    pub approx: ApproxParams,
}

impl BenchmarkInstance {
    /// Same instance over a shorter or longer horizon; the property range
    /// is clipped to it and the schedule becomes segments of at most 5.
    pub fn with_horizon(&self, horizon: usize) -> Result<BenchmarkInstance, ReachError> {
        let mut spec = self.property.spec.clone();
        spec.to = spec.to.min(horizon);
        let property = Property::compile(&spec, &self.system)?;
        Ok(BenchmarkInstance {
            system: self.system.clone(),
            property,
            initial: self.initial.clone(),
            horizon,
            schedule: chunked_schedule(horizon, 5),
            approx: self.approx,
        })
    }

    pub fn query(&self) -> QuerySpec {
        QuerySpec {
            initial: self.initial.clone(),
            property: self.property.spec.clone(),
            horizon: self.horizon,
            schedule: Some(self.schedule.clone()),
            approx: Some(self.approx),
        }
    }
}

/// Segments of length `k` with a shorter last one.
pub fn chunked_schedule(horizon: usize, k: usize) -> ConcretizationSchedule {
    let mut v = vec![k; horizon / k];
    if horizon % k != 0 {
        v.push(horizon % k);
    }
    ConcretizationSchedule(v)
}

fn system(json: &str) -> SystemSpec {
    SystemSpec::from_json(json).expect("built-in system is valid")
}

pub fn get_system(name: &str) -> Result<BenchmarkInstance, BenchmarkError> {
    let (sys, atoms, modality, horizon, initial): (SystemSpec, &[&str], Modality, usize, &[[f64; 2]]) = match name {
        "pendulum" => (
            system(
                r#"{"name": "pendulum", "states": ["x1", "x2"], "controls": ["u"],
                    "parameters": {"m": 0.5, "l": 0.5, "g": 1.0, "dt": 0.1},
                    "updates": ["x1 + dt*x2", "x2 + dt*(g/l*sin(x1) + 1/(m*l^2)*u)"]}"#,
            ),
            &["x1 >= -0.2167"],
            Modality::G,
            25,
            &[[1.0, 1.2], [0.0, 0.2]],
        ),
        "tora" => (
            system(
                r#"{"name": "tora", "states": ["x1", "x2", "x3", "x4"], "controls": ["u"],
                    "parameters": {"eps": 0.1, "dt": 0.1},
                    "updates": ["x1 + dt*x2", "x2 + dt*(eps*sin(x3) - x1)", "x3 + dt*x4", "x4 + dt*u"]}"#,
            ),
            &["x1 >= -2", "x1 <= 2"],
            Modality::G,
            15,
            &[[0.6, 0.7], [-0.7, -0.6], [-0.4, -0.3], [0.5, 0.6]],
        ),
        "car" => (
            system(
                r#"{"name": "car", "states": ["x1", "x2", "x3", "x4"], "controls": ["u1", "u2"],
                    "parameters": {"dt": 0.2},
                    "updates": ["x1 + dt*x4*cos(x3)", "x2 + dt*x4*sin(x3)", "x3 + dt*u2", "x4 + dt*u1"]}"#,
            ),
            &["x1 >= -0.6", "x1 <= 0.6", "x2 >= -0.2", "x2 <= 0.2"],
            Modality::F,
            10,
            &[[9.5, 9.55], [-4.5, -4.45], [2.1, 2.11], [1.5, 1.51]],
        ),
        "acc" => (
            system(
                r#"{"name": "acc", "states": ["x1", "x2", "x3", "x4", "x5", "x6"], "controls": ["u"],
                    "parameters": {"a": -2.0, "mu": 0.0001, "dt": 0.1, "T_gap": 1.4, "D_min": 10.0},
                    "updates": ["x1 + dt*x2", "x2 + dt*x3", "x3 + dt*(-2*x3 + 2*a - 2*mu*x2^2)",
                                "x4 + dt*x5", "x5 + dt*x6", "x6 + dt*(-2*x6 + 2*u - 2*mu*x5^2)"],
                    "measurements": {"y": "x1 - x4 - T_gap*x5"}}"#,
            ),
            &["y >= D_min"],
            Modality::G,
            55,
            &[[90.0, 91.0], [10.0, 11.0], [30.0, 30.2], [30.0, 30.2], [0.0, 0.01], [0.0, 0.01]],
        ),
        other => return Err(BenchmarkError::Unknown(other.to_string())),
    };
    let spec = PropertySpec {
        modality,
        from: 1,
        to: horizon,
        atoms: atoms.iter().map(|a| a.to_string()).collect(),
    };
    Ok(BenchmarkInstance {
        property: Property::compile(&spec, &sys)?,
        system: sys,
        initial: StateBox::from_bounds(initial)?,
        horizon,
        schedule: chunked_schedule(horizon, 5),
        // the product terms of the car expand into log/exp chains whose
        // default resolution yields hundreds of binaries per step
        approx: if name == "car" { ApproxParams::with_segments(1) } else { ApproxParams::default() },
    })
}

fn layer(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Layer {
    Layer {
        weights,
        bias,
        activation,
    }
}

/// `u = -sat(2·x1 + 1.25·x2, ±2)` as a 2×8×8×1 relu network. The unused
/// neurons have zero weights and bias −1, so they are never active.
pub fn pendulum_controller() -> Network {
    let (k1, k2, s) = (2.0, 1.25, 2.0);
    let dead = |n: usize| (vec![0.0; n], -1.0);
    let mut w1 = vec![vec![k1, k2], vec![k1, k2]];
    let mut b1 = vec![s, -s];
    let mut w2 = vec![
        [vec![1.0, 0.0], vec![0.0; 6]].concat(),
        [vec![0.0, 1.0], vec![0.0; 6]].concat(),
    ];
    let mut b2 = vec![0.0, 0.0];
    for _ in 0..6 {
        let (w, b) = dead(2);
        w1.push(w);
        b1.push(b);
        let (w, b) = dead(8);
        w2.push(w);
        b2.push(b);
    }
    // sat(v) = relu(v + s) − relu(v − s) − s, negated
    let w3 = vec![[vec![-1.0, 1.0], vec![0.0; 6]].concat()];
    Network::new(vec![
        layer(w1, b1, Activation::Relu),
        layer(w2, b2, Activation::Relu),
        layer(w3, vec![s], Activation::Linear),
    ])
    .expect("pendulum controller is well formed")
}

/// Random relu network with the given layer widths; weights and biases are
/// scaled by `1/sqrt(fan_in)`, and the output layer additionally by `gain`.
pub fn random_network(widths: &[usize], gain: f64, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (k, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let last = k + 2 == widths.len();
        let scale = if last { gain } else { 1.0 } / (fan_in as f64).sqrt();
        let mut draw = || rng.gen_range(-1.0..=1.0) * scale;
        let weights = (0..fan_out).map(|_| (0..fan_in).map(|_| draw()).collect()).collect();
        let bias = (0..fan_out).map(|_| draw()).collect();
        let activation = if last { Activation::Linear } else { Activation::Relu };
        layers.push(layer(weights, bias, activation));
    }
    Network::new(layers).expect("random network is well formed")
}

/// Append `clamp(v, ±limit)` to every output, as one relu layer and one
/// linear layer.
pub fn clamp_outputs(net: &Network, limit: f64) -> Network {
    let mut layers = net.layers.clone();
    let out = layers.pop().expect("network has layers");
    let m = out.output_dim();
    let mut weights = Vec::with_capacity(2 * m);
    let mut bias = Vec::with_capacity(2 * m);
    for (row, b) in out.weights.iter().zip(&out.bias) {
        weights.push(row.clone());
        bias.push(b + limit);
        weights.push(row.clone());
        bias.push(b - limit);
    }
    layers.push(layer(weights, bias, Activation::Relu));
    let fold = (0..m)
        .map(|i| (0..2 * m).map(|j| if j == 2 * i { 1.0 } else if j == 2 * i + 1 { -1.0 } else { 0.0 }).collect())
        .collect();
    layers.push(layer(fold, vec![-limit; m], Activation::Linear));
    Network::new(layers).expect("clamped network is well formed")
}

/// The shipped controller of a benchmark.
pub fn controller(name: &str) -> Result<Network, BenchmarkError> {
    Ok(match name {
        "pendulum" => pendulum_controller(),
        "tora" => random_network(&[4, 8, 8, 1], 0.5, CONTROLLER_SEED),
        "car" => clamp_outputs(&random_network(&[4, 16, 2], 1.0, CONTROLLER_SEED + 1), CAR_CONTROL_LIMIT),
        "acc" => random_network(&[6, 8, 8, 1], 0.5, CONTROLLER_SEED + 2),
        other => return Err(BenchmarkError::Unknown(other.to_string())),
    })
}

/// Exact closed-loop trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `steps + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `steps` controls.
    pub controls: Vec<Vec<f64>>,
}

pub fn simulate(sys: &SystemSpec, net: &Network, x0: &[f64], steps: usize) -> Result<Trajectory, BenchmarkError> {
    let mut states = vec![x0.to_vec()];
    let mut controls = Vec::with_capacity(steps);
    for _ in 0..steps {
        let x = states.last().unwrap();
        let u = net.forward(x)?;
        let next = sys.step(x, &u).map_err(|e| BenchmarkError::Simulation(e.to_string()))?;
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, controls })
}

/// Monte Carlo trajectories and their per-timestep hulls.
#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub trajectories: Vec<Trajectory>,
    /// `hulls[t]` for `t = 0..=steps`.
    pub hulls: Vec<StateBox>,
}

/// Initial states drawn uniformly from a box, in the documented order.
pub fn sample_box(b: &StateBox, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| b.0.iter().map(|d| d.lo + (d.hi - d.lo) * rng.gen::<f64>()).collect())
        .collect()
}

pub fn simulate_mc(
    sys: &SystemSpec,
    net: &Network,
    initial: &StateBox,
    steps: usize,
    samples: usize,
    seed: u64,
) -> Result<McResult, BenchmarkError> {
    if samples == 0 {
        return Err(BenchmarkError::Simulation("at least one sample is required".into()));
    }
    let starts = sample_box(initial, samples, seed);
    let trajectories: Vec<Trajectory> = starts
        .par_iter()
        .map(|x0| simulate(sys, net, x0, steps))
        .collect::<Result<_, _>>()?;
    let mut hulls: Vec<StateBox> = trajectories[0]
        .states
        .iter()
        .map(|x| StateBox(x.iter().map(|v| Interval::point(*v)).collect()))
        .collect();
    for tr in &trajectories[1..] {
        for (h, x) in hulls.iter_mut().zip(&tr.states) {
            h.hull_point(x);
        }
    }
    Ok(McResult { trajectories, hulls })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_controller_saturates() {
        let net = pendulum_controller();
        assert_eq!(net.shape(), vec![2, 8, 8, 1]);
        for (x, u) in [([0.1, 0.0], -0.2), ([1.0, 0.0], -2.0), ([-1.0, -1.0], 2.0), ([0.4, -0.4], -0.3)] {
            assert!((net.forward(&x).unwrap()[0] - u).abs() < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn clamped_car_controller() {
        let net = controller("car").unwrap();
        assert_eq!(net.shape(), vec![4, 16, 4, 2]);
        let raw = random_network(&[4, 16, 2], 1.0, CONTROLLER_SEED + 1);
        for x in sample_box(&get_system("car").unwrap().initial, 50, 3) {
            let (a, b) = (net.forward(&x).unwrap(), raw.forward(&x).unwrap());
            for (c, r) in a.iter().zip(&b) {
                assert!((c - r.clamp(-1.0, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn schedules_chunk() {
        assert_eq!(chunked_schedule(12, 5).0, vec![5, 5, 2]);
        assert_eq!(chunked_schedule(10, 5).0, vec![5, 5]);
    }
}
