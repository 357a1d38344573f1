use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gates of a DGM layer, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Z = 0,
    G = 1,
    R = 2,
    H = 3,
}

pub const GATES: [Gate; 4] = [Gate::Z, Gate::G, Gate::R, Gate::H];

/// Shape of the gated network: input dimension `n + 1`, width and number of
/// DGM layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub inputs: usize,
    pub width: usize,
    pub layers: usize,
}

impl Dims {
    pub fn new(inputs: usize, width: usize, layers: usize) -> Result<Self> {
        if inputs == 0 || width == 0 || layers == 0 {
            return Err(Error::Config(format!(
                "network dims must be positive, got inputs={inputs} width={width} layers={layers}"
            )));
        }
        Ok(Self {
            inputs,
            width,
            layers,
        })
    }

    fn gate_len(&self) -> usize {
        self.width * self.inputs + self.width * self.width + self.width
    }

    fn input_len(&self) -> usize {
        self.width * self.inputs + self.width
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.input_len() + self.layers * 4 * self.gate_len() + self.width + 1
    }

    /// Row-major `[width × inputs]` input weight.
    pub fn input_weight(&self) -> Range<usize> {
        0..self.width * self.inputs
    }

    pub fn input_bias(&self) -> Range<usize> {
        let s = self.width * self.inputs;
        s..s + self.width
    }

    fn gate_start(&self, layer: usize, gate: Gate) -> usize {
        self.input_len() + (layer * 4 + gate as usize) * self.gate_len()
    }

    /// `U^{gate,layer}`, row-major `[width × inputs]`.
    pub fn gate_u(&self, layer: usize, gate: Gate) -> Range<usize> {
        let s = self.gate_start(layer, gate);
        s..s + self.width * self.inputs
    }

    /// `W^{gate,layer}`, row-major `[width × width]`.
    pub fn gate_w(&self, layer: usize, gate: Gate) -> Range<usize> {
        let s = self.gate_start(layer, gate) + self.width * self.inputs;
        s..s + self.width * self.width
    }

    pub fn gate_b(&self, layer: usize, gate: Gate) -> Range<usize> {
        let s = self.gate_start(layer, gate) + self.width * self.inputs + self.width * self.width;
        s..s + self.width
    }

    pub fn output_weight(&self) -> Range<usize> {
        let s = self.input_len() + self.layers * 4 * self.gate_len();
        s..s + self.width
    }

    pub fn output_bias(&self) -> usize {
        self.param_count() - 1
    }
}

/// Full trainable parameter set of one network, stored flat in a fixed
/// order (input layer, then `layers × [Z, G, R, H] × (U, W, b)`, then output).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.param_count()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.param_count() {
            return Err(Error::Dimension {
                expected: dims.param_count(),
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        let mut fill = |range: Range<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.data[range] {
                *w = rng.random_range(-limit..limit);
            }
        };
        let (d, w) = (dims.inputs, dims.width);
        fill(dims.input_weight(), d, w, &mut rng);
        for l in 0..dims.layers {
            for g in GATES {
                fill(dims.gate_u(l, g), d, w, &mut rng);
                fill(dims.gate_w(l, g), w, w, &mut rng);
            }
        }
        fill(dims.output_weight(), w, 1, &mut rng);
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_parameter_count() {
        // 50·1+50 + 3·4·(50·1 + 50·50 + 50) + 50+1
        let dims = Dims::new(1, 50, 3).unwrap();
        assert_eq!(dims.param_count(), 31_351);
    }

    #[test]
    fn ranges_tile_the_buffer() {
        let dims = Dims::new(3, 4, 2).unwrap();
        let mut seen = vec![0u8; dims.param_count()];
        let mut mark = |r: Range<usize>| r.for_each(|i| seen[i] += 1);
        mark(dims.input_weight());
        mark(dims.input_bias());
        for l in 0..2 {
            for g in GATES {
                mark(dims.gate_u(l, g));
                mark(dims.gate_w(l, g));
                mark(dims.gate_b(l, g));
            }
        }
        mark(dims.output_weight());
        mark(dims.output_bias()..dims.output_bias() + 1);
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let dims = Dims::new(2, 8, 2).unwrap();
        let a = NetworkParams::init(dims, 7);
        let b = NetworkParams::init(dims, 7);
        let c = NetworkParams::init(dims, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data[dims.input_bias()].iter().all(|&v| v == 0.0));
        assert_eq!(a.data[dims.output_bias()], 0.0);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Dims::new(1, 0, 3).is_err());
        assert!(Dims::new(1, 5, 0).is_err());
    }
}
