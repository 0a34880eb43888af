//! Fully connected network over a flat parameter vector.
//!
//! Layer `l` stores its weight matrix row-major (`in × out`) followed by its
//! bias (`out`), so a forward pass is `X·W + b` per layer.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::schedule::standard_normal;
use crate::{CtmError, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Silu => v / (1.0 + (-v).exp()),
            Activation::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
}

/// Tape handles for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

impl Mlp {
    /// `depth` hidden layers of `width` units between `input` and `output`.
    pub fn new(input: usize, width: usize, depth: usize, output: usize, activation: Activation) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(output);
        Self { sizes, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_ranges(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let r = (offset, w[0], w[1], offset + w[0] * w[1]);
                offset += w[0] * w[1] + w[1];
                r
            })
            .collect()
    }

    /// LeCun-normal weights, zero biases. With `zero_last` the output layer
    /// starts at exactly zero.
    pub fn init(&self, rng: &mut Rng, zero_last: bool) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params()];
        let ranges = self.layer_ranges();
        let last = ranges.len() - 1;
        for (l, (off, fan_in, fan_out, _)) in ranges.into_iter().enumerate() {
            if zero_last && l == last {
                continue;
            }
            let std = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = std * standard_normal(rng);
            }
        }
        params
    }

    fn check(&self, params: &[f64], x_cols: usize) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(CtmError::Shape {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        if x_cols != self.input_dim() {
            return Err(CtmError::Shape {
                expected: self.input_dim(),
                actual: x_cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(params, x.ncols())?;
        let ranges = self.layer_ranges();
        let last = ranges.len() - 1;
        let mut h = x.to_owned();
        for (l, (off, fan_in, fan_out, boff)) in ranges.into_iter().enumerate() {
            let w = ArrayView2::from_shape((fan_in, fan_out), &params[off..off + fan_in * fan_out])
                .expect("layer shape");
            let b = ndarray::ArrayView1::from(&params[boff..boff + fan_out]);
            h = h.dot(&w) + &b;
            if l != last {
                let act = self.activation;
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    /// Places the parameters on the tape, as trainable leaves or constants.
    pub fn register(&self, tape: &mut Tape, params: &[f64], trainable: bool) -> Result<Vec<LayerVars>> {
        if params.len() != self.n_params() {
            return Err(CtmError::Shape {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        Ok(self
            .layer_ranges()
            .into_iter()
            .map(|(off, fan_in, fan_out, boff)| {
                let w = Array2::from_shape_vec((fan_in, fan_out), params[off..off + fan_in * fan_out].to_vec())
                    .expect("layer shape");
                let b = Array2::from_shape_vec((1, fan_out), params[boff..boff + fan_out].to_vec())
                    .expect("bias shape");
                if trainable {
                    LayerVars {
                        weight: tape.param(w),
                        bias: tape.param(b),
                    }
                } else {
                    LayerVars {
                        weight: tape.constant(w),
                        bias: tape.constant(b),
                    }
                }
            })
            .collect())
    }

    pub fn forward_tape(&self, tape: &mut Tape, layers: &[LayerVars], x: Var) -> Var {
        let last = layers.len() - 1;
        let mut h = x;
        for (l, lv) in layers.iter().enumerate() {
            h = tape.matmul(h, lv.weight);
            h = tape.add_bias(h, lv.bias);
            if l != last {
                h = match self.activation {
                    Activation::Silu => tape.silu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        h
    }

    /// Copies the gradients of registered layers into a flat vector (zeros
    /// where nothing flowed).
    pub fn collect_grad(&self, tape: &Tape, layers: &[LayerVars]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        for ((off, fan_in, fan_out, boff), lv) in self.layer_ranges().into_iter().zip(layers) {
            if let Some(g) = tape.grad(lv.weight) {
                out[off..off + fan_in * fan_out].iter_mut().zip(g.iter()).for_each(|(o, v)| *o = *v);
            }
            if let Some(g) = tape.grad(lv.bias) {
                out[boff..boff + fan_out].iter_mut().zip(g.iter()).for_each(|(o, v)| *o = *v);
            }
        }
        out
    }
}
