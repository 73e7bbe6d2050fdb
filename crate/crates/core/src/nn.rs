//! Feed-forward controller networks.
//!
//! Networks are stored as JSON:
//!
//! ```json
//! {"layers": [{"weights": [[1.0, -1.0]], "bias": [0.0], "activation": "relu"}, ...]}
//! ```
//!
//! `weights` has one row per output neuron. The last layer must be linear.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Interval;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network: {0}")]
    Schema(String),
    #[error("expected input of dimension {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("cannot read network: {0}")]
    Io(#[from] std::io::Error),
    #[error("output range: {0}")]
    Range(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Image of an interval (all three are monotone).
    pub fn apply_interval(self, x: Interval) -> Interval {
        Interval::new(self.apply(x.lo), self.apply(x.hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }

    /// Pre-activation values.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Sound enclosure of the pre-activations over a box.
    pub fn affine_interval(&self, x: &[Interval]) -> Vec<Interval> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| {
                let mut lo = *b;
                let mut hi = *b;
                for (w, v) in row.iter().zip(x) {
                    if *w >= 0.0 {
                        lo += w * v.lo;
                        hi += w * v.hi;
                    } else {
                        lo += w * v.hi;
                        hi += w * v.lo;
                    }
                }
                // rounding in the sums is covered by a relative pad
                let pad = 1e-12 * (lo.abs().max(hi.abs()) + row.iter().map(|w| w.abs()).sum::<f64>());
                Interval::new(lo - pad, hi + pad)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    layers: Vec<Layer>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = NnError;

    fn try_from(raw: RawNetwork) -> Result<Self, NnError> {
        Network::new(raw.layers)
    }
}

impl From<Network> for RawNetwork {
    fn from(n: Network) -> Self {
        RawNetwork { layers: n.layers }
    }
}

/// Pre-activation bounds of every neuron, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub pre: Vec<Vec<Interval>>,
}

/// Output range estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeMethod {
    Interval,
    Mip,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Network, NnError> {
        let bad = |m: String| Err(NnError::Schema(m));
        if layers.is_empty() {
            return bad("no layers".into());
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.bias.len() {
                return bad(format!("layer {i}: {} weight rows but {} biases", l.weights.len(), l.bias.len()));
            }
            if l.bias.is_empty() || l.input_dim() == 0 {
                return bad(format!("layer {i} is empty"));
            }
            if let Some(r) = l.weights.iter().position(|r| r.len() != l.input_dim()) {
                return bad(format!("layer {i}: row {r} has length {}, expected {}", l.weights[r].len(), l.input_dim()));
            }
            if l.weights.iter().flatten().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad(format!("layer {i} has a non-finite parameter"));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return bad(format!(
                    "layer {i} expects {} inputs but layer {} has {} outputs",
                    l.input_dim(),
                    i - 1,
                    layers[i - 1].output_dim()
                ));
            }
        }
        if layers.last().unwrap().activation != Activation::Linear {
            return bad("the last layer must be linear".into());
        }
        Ok(Network { layers })
    }

    pub fn from_json(text: &str) -> Result<Network, NnError> {
        serde_json::from_str(text).map_err(|e| NnError::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    /// Layer widths including input, e.g. `[2, 25, 25, 1]`.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.output_dim()))
            .collect()
    }

    pub fn has_tanh(&self) -> bool {
        self.layers.iter().any(|l| l.activation == Activation::Tanh)
    }

    fn check_dim(&self, got: usize) -> Result<(), NnError> {
        if got != self.input_dim() {
            return Err(NnError::Dim {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_dim(x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.affine(&h).into_iter().map(|v| l.activation.apply(v)).collect();
        }
        Ok(h)
    }

    /// Interval pre-activation bounds for every neuron over `input`.
    pub fn neuron_bounds(&self, input: &[Interval]) -> Result<NeuronBounds, NnError> {
        self.check_dim(input.len())?;
        let mut h = input.to_vec();
        let mut pre = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = l.affine_interval(&h);
            h = z.iter().map(|v| l.activation.apply_interval(*v)).collect();
            pre.push(z);
        }
        Ok(NeuronBounds { pre })
    }

    /// Box containing every output over `input`.
    pub fn output_range(&self, input: &[Interval], method: RangeMethod) -> Result<Vec<Interval>, NnError> {
        match method {
            RangeMethod::Interval => Ok(self.neuron_bounds(input)?.pre.pop().unwrap()),
            RangeMethod::Mip => crate::mip::network_output_range(self, input, &Default::default())
                .map_err(|e| NnError::Range(e.to_string())),
        }
    }
}

pub fn load_network(path: &Path) -> Result<Network, NnError> {
    Network::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_net() -> Network {
        Network::from_json(
            r#"{"layers":[
                {"weights":[[1.0],[-1.0]],"bias":[0.0,0.0],"activation":"relu"},
                {"weights":[[1.0,1.0]],"bias":[0.0],"activation":"linear"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn identity_network() {
        let n = Network::from_json(r#"{"layers":[{"weights":[[1.0]],"bias":[0.0],"activation":"linear"}]}"#).unwrap();
        assert_eq!(n.forward(&[2.5]).unwrap(), vec![2.5]);
        let b = n.neuron_bounds(&[Interval::new(-1.0, 2.0)]).unwrap();
        assert!(b.pre[0][0].lo <= -1.0 && b.pre[0][0].hi >= 2.0);
        assert!(b.pre[0][0].width() < 3.0 + 1e-9);
    }

    #[test]
    fn absolute_value_network() {
        let n = abs_net();
        assert_eq!(n.forward(&[3.0]).unwrap(), vec![3.0]);
        assert_eq!(n.forward(&[-2.0]).unwrap(), vec![2.0]);
        assert!(matches!(n.forward(&[1.0, 2.0]), Err(NnError::Dim { .. })));
    }

    #[test]
    fn interval_sum() {
        let n = Network::from_json(r#"{"layers":[{"weights":[[1.0,1.0]],"bias":[0.0],"activation":"linear"}]}"#).unwrap();
        let r = n.output_range(&[Interval::new(0.0, 1.0); 2], RangeMethod::Interval).unwrap();
        assert!(r[0].lo <= 0.0 && r[0].hi >= 2.0 && r[0].width() < 2.0 + 1e-9);
    }

    #[test]
    fn schema_errors() {
        let short_row = r#"{"layers":[{"weights":[[1.0,2.0],[1.0]],"bias":[0.0,0.0],"activation":"linear"}]}"#;
        assert!(Network::from_json(short_row).is_err());
        let relu_last = r#"{"layers":[{"weights":[[1.0]],"bias":[0.0],"activation":"relu"}]}"#;
        assert!(Network::from_json(relu_last).is_err());
        let mismatch = r#"{"layers":[
            {"weights":[[1.0]],"bias":[0.0],"activation":"relu"},
            {"weights":[[1.0,1.0]],"bias":[0.0],"activation":"linear"}]}"#;
        assert!(Network::from_json(mismatch).is_err());
        assert!(Network::from_json(r#"{"layers":[]}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let n = abs_net();
        assert_eq!(Network::from_json(&n.to_json()).unwrap(), n);
    }
}
