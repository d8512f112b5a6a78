//! Multi-output fully connected tanh network.
//!
//! A single shared trunk maps a point `x` to `M * C` outputs, grouped
//! contiguously by output group: `[u_1^1 .. u_1^C, u_2^1 .. u_2^C, ...]`.

mod batched;

pub use batched::{BatchForward, BatchedMlp};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter vector has {got} entries, configuration needs {expected}")]
    ParameterCount { expected: usize, got: usize },
    #[error("non-finite network parameter at index {index}")]
    NonFinite { index: usize },
    #[error("input point has {got} coordinates, network expects {expected}")]
    InputDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_groups: usize,
    pub components_per_group: usize,
}

/// Location of one dense layer inside the flat parameter vector. Weights are
/// stored row-major as `fan_in x fan_out`, followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerSlot {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn len(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MlpConfig {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_groups: usize,
        components_per_group: usize,
    ) -> Result<Self, NetworkError> {
        let config = Self {
            input_dim,
            hidden_widths,
            output_groups,
            components_per_group,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: &str| Err(NetworkError::InvalidConfig(msg.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1");
        }
        if self.hidden_widths.is_empty() {
            return bad("at least one hidden layer is required");
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be >= 1");
        }
        if self.output_groups == 0 {
            return bad("output_groups must be >= 1");
        }
        if self.components_per_group == 0 {
            return bad("components_per_group must be >= 1");
        }
        if self.checked_parameter_count().is_none() {
            return bad("network size overflows");
        }
        Ok(())
    }

    fn checked_parameter_count(&self) -> Option<usize> {
        let out = self.output_groups.checked_mul(self.components_per_group)?;
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(out);
        widths.windows(2).try_fold(0usize, |acc, w| {
            acc.checked_add(w[0].checked_mul(w[1])?.checked_add(w[1])?)
        })
    }

    pub fn output_width(&self) -> usize {
        self.output_groups * self.components_per_group
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.output_width());
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += slot.len();
                slot
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(LayerSlot::len).sum()
    }
}

/// Flat trainable network parameters (θ).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: MlpConfig,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn from_values(config: MlpConfig, values: Vec<f64>) -> Result<Self, NetworkError> {
        config.validate()?;
        let expected = config.parameter_count();
        if values.len() != expected {
            return Err(NetworkError::ParameterCount {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { config, values })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self, NetworkError> {
        let n = config.parameter_count();
        Self::from_values(config, vec![0.0; n])
    }

    /// He initialization: weights ~ N(0, 2 / fan_in), biases 0.
    pub fn init_he(config: MlpConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; config.parameter_count()];
        for slot in config.layers() {
            let std = (2.0 / slot.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive standard deviation");
            for w in &mut values[slot.weights()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_finite(&self) -> Result<(), NetworkError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(NetworkError::NonFinite { index }),
            None => Ok(()),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.config.input_dim {
            return Err(NetworkError::InputDim {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        self.check_finite()
    }

    /// Network outputs at `x`, grouped by output group.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_input(x)?;
        Ok(forward_values(&self.config, &self.values, x))
    }

    /// Outputs together with first and pure second derivatives along every
    /// input axis.
    pub fn forward_with_derivatives(&self, x: &[f64]) -> Result<Vec<Jet2<f64>>, NetworkError> {
        self.check_input(x)?;
        Ok(forward_jets(&self.config, &self.values, x))
    }
}

/// Value-only pass, generic over the scalar type.
pub fn forward_values<S: Scalar>(config: &MlpConfig, params: &[S], x: &[f64]) -> Vec<S> {
    let layers = config.layers();
    let last = layers.len() - 1;
    let mut act: Vec<S> = x.iter().map(|&xi| params[0].lift(xi)).collect();
    for (l, slot) in layers.iter().enumerate() {
        let w = &params[slot.weights()];
        let b = &params[slot.bias()];
        let mut next = Vec::with_capacity(slot.fan_out);
        for j in 0..slot.fan_out {
            let mut z = b[j];
            for (i, &a) in act.iter().enumerate() {
                z = z + w[i * slot.fan_out + j] * a;
            }
            next.push(if l < last { z.tanh() } else { z });
        }
        act = next;
    }
    act
}

/// Jet pass, generic over the scalar type. With `S = Var` the derivative
/// channels are recorded on the tape.
pub fn forward_jets<S: Scalar>(config: &MlpConfig, params: &[S], x: &[f64]) -> Vec<Jet2<S>> {
    let axes = config.input_dim;
    let layers = config.layers();
    let last = layers.len() - 1;
    let mut act: Vec<Jet2<S>> = x
        .iter()
        .enumerate()
        .map(|(a, &xi)| Jet2::coordinate(params[0].lift(xi), a, axes))
        .collect();
    for (l, slot) in layers.iter().enumerate() {
        let w = &params[slot.weights()];
        let b = &params[slot.bias()];
        let mut next = Vec::with_capacity(slot.fan_out);
        for j in 0..slot.fan_out {
            let mut z = Jet2::constant(b[j], axes);
            for (i, a) in act.iter().enumerate() {
                let wij = w[i * slot.fan_out + j];
                z.value = z.value + wij * a.value;
                for ax in 0..axes {
                    z.d1[ax] = z.d1[ax] + wij * a.d1[ax];
                    z.d2[ax] = z.d2[ax] + wij * a.d2[ax];
                }
            }
            next.push(if l < last { z.tanh() } else { z });
        }
        act = next;
    }
    act
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use proptest::prelude::*;

    fn ex1_config(m: usize) -> MlpConfig {
        MlpConfig::new(1, vec![30, 30, 30], m, 1).unwrap()
    }

    /// u = 2x + 1 realised through a single tanh unit kept in its linear regime.
    fn linear_net() -> NetworkParams {
        let config = MlpConfig::new(1, vec![1], 1, 1).unwrap();
        let eps = 1e-6;
        NetworkParams::from_values(config, vec![eps, 0.0, 2.0 / eps, 1.0]).unwrap()
    }

    #[test]
    fn parameter_count_matches_layer_formula() {
        assert_eq!(ex1_config(2).parameter_count(), 1982);
        for m in 1..6 {
            assert_eq!(ex1_config(m).parameter_count(), 60 + 930 + 930 + 31 * m);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(MlpConfig::new(1, vec![], 1, 1).is_err());
        assert!(MlpConfig::new(1, vec![3, 0], 1, 1).is_err());
        assert!(MlpConfig::new(1, vec![3], 0, 1).is_err());
        assert!(MlpConfig::new(0, vec![3], 1, 1).is_err());
        assert!(MlpConfig::new(2, vec![3], 4, 2).is_ok());
    }

    #[test]
    fn he_init_variance_and_zero_biases() {
        let config = MlpConfig::new(30, vec![10_000], 1, 1).unwrap();
        // layer 0 has fan_in 30 and 300,000 weights; use the first 10,000
        let p = NetworkParams::init_he(config.clone(), 42).unwrap();
        let slot = config.layers()[0];
        let w = &p.values()[slot.weights()][..10_000];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = 2.0 / 30.0;
        assert!((var - target).abs() / target < 0.15, "variance {var}");
        for slot in config.layers() {
            assert!(p.values()[slot.bias()].iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn he_init_is_deterministic() {
        let a = NetworkParams::init_he(ex1_config(3), 7).unwrap();
        let b = NetworkParams::init_he(ex1_config(3), 7).unwrap();
        let c = NetworkParams::init_he(ex1_config(3), 8).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(ex1_config(3)).unwrap();
        assert_eq!(p.forward(&[0.4]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_set_linear_network() {
        let p = linear_net();
        let u = p.forward(&[1.0]).unwrap()[0];
        assert!((u - 3.0).abs() < 1e-9);
        let jet = &p.forward_with_derivatives(&[1.0]).unwrap()[0];
        assert!((jet.value - 3.0).abs() < 1e-9);
        assert!((jet.d1[0] - 2.0).abs() < 1e-9);
        assert!(jet.d2[0].abs() < 1e-9);
    }

    #[test]
    fn single_tanh_unit() {
        let config = MlpConfig::new(1, vec![1], 1, 1).unwrap();
        let p = NetworkParams::from_values(config, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let jet = &p.forward_with_derivatives(&[0.0]).unwrap()[0];
        assert_eq!((jet.value, jet.d1[0], jet.d2[0]), (0.0, 1.0, 0.0));
    }

    #[test]
    fn non_finite_parameter_is_an_error() {
        let mut p = NetworkParams::init_he(ex1_config(2), 1).unwrap();
        p.values_mut()[5] = f64::NAN;
        assert_eq!(p.forward(&[0.5]), Err(NetworkError::NonFinite { index: 5 }));
        assert!(p.forward_with_derivatives(&[0.5]).is_err());
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let p = NetworkParams::init_he(ex1_config(2), 3).unwrap();
        let h = 1e-3;
        for &x in &[0.1, 0.37, 0.8] {
            let jets = p.forward_with_derivatives(&[x]).unwrap();
            let up = p.forward(&[x + h]).unwrap();
            let mid = p.forward(&[x]).unwrap();
            let dn = p.forward(&[x - h]).unwrap();
            for m in 0..2 {
                let fd = (up[m] - 2.0 * mid[m] + dn[m]) / (h * h);
                let rel = (jets[m].d2[0] - fd).abs() / fd.abs().max(1.0);
                assert!(rel <= 1e-4, "x={x} m={m}: {} vs {fd}", jets[m].d2[0]);
            }
        }
    }

    #[test]
    fn shared_trunk_couples_all_groups() {
        let p = NetworkParams::init_he(ex1_config(4), 9).unwrap();
        let base = p.forward(&[0.3]).unwrap();
        let mut q = p.clone();
        q.values_mut()[0] += 0.1;
        let moved = q.forward(&[0.3]).unwrap();
        for m in 0..4 {
            assert_ne!(base[m], moved[m]);
        }
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let p = NetworkParams::init_he(MlpConfig::new(2, vec![5, 4], 2, 2).unwrap(), 4).unwrap();
        let tape = Tape::new();
        let vars = tape.vars(p.values());
        let taped = forward_jets(p.config(), &vars, &[0.2, 0.9]);
        let plain = p.forward_with_derivatives(&[0.2, 0.9]).unwrap();
        for (t, f) in taped.iter().zip(&plain) {
            assert_eq!(&t.map_values(), f);
        }
    }

    proptest! {
        #[test]
        fn value_channels_agree_bitwise(seed in 0u64..1000, x in -1.5f64..1.5, y in -1.5f64..1.5) {
            let p = NetworkParams::init_he(MlpConfig::new(2, vec![6, 5], 3, 2).unwrap(), seed).unwrap();
            let values = p.forward(&[x, y]).unwrap();
            let jets = p.forward_with_derivatives(&[x, y]).unwrap();
            for (v, j) in values.iter().zip(&jets) {
                prop_assert_eq!(v.to_bits(), j.value.to_bits());
            }
        }

        #[test]
        fn jet_derivatives_match_finite_differences(seed in 0u64..1000, x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let p = NetworkParams::init_he(MlpConfig::new(2, vec![8, 8], 2, 1).unwrap(), seed).unwrap();
            let h = 1e-4;
            let jets = p.forward_with_derivatives(&[x, y]).unwrap();
            for axis in 0..2 {
                let mut plus = [x, y];
                let mut minus = [x, y];
                plus[axis] += h;
                minus[axis] -= h;
                let fp = p.forward(&plus).unwrap();
                let f0 = p.forward(&[x, y]).unwrap();
                let fm = p.forward(&minus).unwrap();
                for m in 0..2 {
                    let d1 = (fp[m] - fm[m]) / (2.0 * h);
                    let d2 = (fp[m] - 2.0 * f0[m] + fm[m]) / (h * h);
                    prop_assert!((jets[m].d1[axis] - d1).abs() <= 1e-4 * d1.abs().max(1.0));
                    prop_assert!((jets[m].d2[axis] - d2).abs() <= 1e-4 * d2.abs().max(1.0));
                }
            }
        }
    }
}
