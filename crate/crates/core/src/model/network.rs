//! The student `g_θ(x, t, s)` and the trajectory map built on it.
//!
//! `g_θ = c_skip(t)·x + c_out(t)·NN_θ(c_in(t)·x, φ(t), φ(t) + φ(s))` with the
//! EDM scales `c_skip = σ_d²/(t² + σ_d²)`, `c_out = t·σ_d/√(t² + σ_d²)`,
//! `c_in = 1/√(t² + σ_d²)`, and `φ` the Fourier features of
//! `ln(τ + time_offset)`. `G_θ(x, t, s) = (s/t)·x + (1 − s/t)·g_θ(x, t, s)`.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, LayerVars, Mlp};
use super::tape::{Tape, Var};
use crate::schedule::ScheduleConfig;
use crate::solvers::Denoiser;
use crate::{rng_for, CtmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub hidden_width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub n_frequencies: usize,
    /// Offset inside the log time scale; keeps `s = 0` finite and close to `σ_min`.
    pub time_offset: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            depth: 3,
            activation: Activation::Silu,
            n_frequencies: 16,
            time_offset: 0.05,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.depth == 0 || self.n_frequencies == 0 {
            return Err(CtmError::config("model: hidden_width, depth and n_frequencies must be positive"));
        }
        if !(self.time_offset > 0.0 && self.time_offset.is_finite()) {
            return Err(CtmError::config("model.time_offset must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmParams {
    pub weights: Vec<f64>,
    pub frequencies: Vec<f64>,
}

impl CtmParams {
    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.frequencies).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmNetwork {
    arch: Architecture,
    dim: usize,
    sigma_data: f64,
    mlp: Mlp,
}

impl CtmNetwork {
    pub fn new(dim: usize, arch: Architecture, schedule: &ScheduleConfig) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        if dim == 0 {
            return Err(CtmError::config("model: data dimension must be positive"));
        }
        let input = dim + 4 * arch.n_frequencies;
        let mlp = Mlp::new(input, arch.hidden_width, arch.depth, dim, arch.activation);
        Ok(Self {
            arch,
            dim,
            sigma_data: schedule.sigma_data,
            mlp,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    /// Geometric frequencies from 1/4 to 8.
    pub fn default_frequencies(&self) -> Vec<f64> {
        let k = self.arch.n_frequencies;
        (0..k)
            .map(|i| {
                let frac = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
                0.25 * 32f64.powf(frac)
            })
            .collect()
    }

    /// Seeded initialization with a zero output layer, so training starts
    /// from `g_θ = c_skip·x`.
    pub fn init_params(&self, seed: u64) -> CtmParams {
        let mut rng = rng_for(seed, 0x6e6574);
        CtmParams {
            weights: self.mlp.init(&mut rng, true),
            frequencies: self.default_frequencies(),
        }
    }

    pub fn c_skip(&self, t: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (t * t + sd2)
    }

    pub fn c_out(&self, t: f64) -> f64 {
        t * self.sigma_data / (t * t + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, t: f64) -> f64 {
        1.0 / (t * t + self.sigma_data * self.sigma_data).sqrt()
    }

    fn time_features_into(&self, freqs: &[f64], tau: f64, out: &mut [f64]) {
        let c = (tau + self.arch.time_offset).ln();
        for (k, w) in freqs.iter().enumerate() {
            let (sn, cs) = (w * c).sin_cos();
            out[2 * k] += sn;
            out[2 * k + 1] += cs;
        }
    }

    /// Fourier features of the log-scaled time `τ`.
    pub fn time_features(&self, params: &CtmParams, tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * params.frequencies.len()];
        self.time_features_into(&params.frequencies, tau, &mut out);
        out
    }

    /// The conditioning embedding: features of `t` plus features of `s`.
    pub fn embed_times(&self, params: &CtmParams, t: f64, s: f64) -> Vec<f64> {
        let mut out = self.time_features(params, t);
        self.time_features_into(&params.frequencies, s, &mut out);
        out
    }

    fn check_times(t: &[f64], s: &[f64], rows: usize) -> Result<()> {
        if t.len() != rows || s.len() != rows {
            return Err(CtmError::Shape {
                expected: rows,
                actual: t.len().min(s.len()),
            });
        }
        for (&ti, &si) in t.iter().zip(s) {
            if !(ti > 0.0 && ti.is_finite() && si >= 0.0 && si <= ti) {
                return Err(CtmError::domain(format!("need t > 0 and 0 <= s <= t, got t={ti}, s={si}")));
            }
        }
        Ok(())
    }

    /// Time-conditioning columns `[φ(t), φ(t) + φ(s)]` per row.
    fn embedding_block(&self, params: &CtmParams, t: &[f64], s: &[f64]) -> Array2<f64> {
        let k2 = 2 * params.frequencies.len();
        let mut out = Array2::zeros((t.len(), 2 * k2));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("contiguous row");
            self.time_features_into(&params.frequencies, t[i], &mut row[..k2]);
            let (head, tail) = row.split_at_mut(k2);
            tail.copy_from_slice(head);
            self.time_features_into(&params.frequencies, s[i], tail);
        }
        out
    }

    fn nn_input(&self, params: &CtmParams, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Array2<f64> {
        let scaled = &x * &Array1::from_iter(t.iter().map(|&ti| self.c_in(ti))).insert_axis(ndarray::Axis(1));
        let emb = self.embedding_block(params, t, s);
        ndarray::concatenate(ndarray::Axis(1), &[scaled.view(), emb.view()]).expect("row counts agree")
    }

    fn check_params(&self, params: &CtmParams) -> Result<()> {
        if params.weights.len() != self.n_params() {
            return Err(CtmError::Shape {
                expected: self.n_params(),
                actual: params.weights.len(),
            });
        }
        if params.frequencies.len() != self.arch.n_frequencies {
            return Err(CtmError::Shape {
                expected: self.arch.n_frequencies,
                actual: params.frequencies.len(),
            });
        }
        if !params.all_finite() {
            return Err(CtmError::numeric("non-finite network parameters"));
        }
        Ok(())
    }

    /// Row-wise `g_θ(x_i, t_i, s_i)`.
    pub fn g_forward(&self, params: &CtmParams, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        self.check_params(params)?;
        Self::check_times(t, s, x.nrows())?;
        if x.ncols() != self.dim {
            return Err(CtmError::Shape {
                expected: self.dim,
                actual: x.ncols(),
            });
        }
        let input = self.nn_input(params, x, t, s);
        let nn = self.mlp.forward(&params.weights, input.view())?;
        let mut out = x.to_owned();
        for (i, (mut o, n)) in out.rows_mut().into_iter().zip(nn.rows()).enumerate() {
            let (cs, co) = (self.c_skip(t[i]), self.c_out(t[i]));
            o.iter_mut().zip(n).for_each(|(v, nv)| *v = cs * *v + co * nv);
        }
        Ok(out)
    }

    /// Row-wise `G_θ(x_i, t_i, s_i)`; returns `x_i` exactly when `s_i = t_i`.
    pub fn big_g_forward(&self, params: &CtmParams, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        let g = self.g_forward(params, x, t, s)?;
        let mut out = x.to_owned();
        for (i, (mut o, gr)) in out.rows_mut().into_iter().zip(g.rows()).enumerate() {
            let r = s[i] / t[i];
            o.iter_mut().zip(gr).for_each(|(v, gv)| *v = r * *v + (1.0 - r) * gv);
        }
        Ok(out)
    }

    /// Registers `params` on `tape` (trainable or frozen) for differentiable
    /// forward passes.
    pub fn on_tape<'a>(&'a self, tape: &mut Tape, params: &'a CtmParams, trainable: bool) -> Result<TapeNet<'a>> {
        self.check_params(params)?;
        let layers = self.mlp.register(tape, &params.weights, trainable)?;
        Ok(TapeNet {
            net: self,
            params,
            layers,
        })
    }
}

/// A network whose parameters live on a [`Tape`].
pub struct TapeNet<'a> {
    net: &'a CtmNetwork,
    params: &'a CtmParams,
    layers: Vec<LayerVars>,
}

impl TapeNet<'_> {
    pub fn g(&self, tape: &mut Tape, x: Var, t: &[f64], s: &[f64]) -> Var {
        let net = self.net;
        let c_in = Array1::from_iter(t.iter().map(|&ti| net.c_in(ti)));
        let c_skip = Array1::from_iter(t.iter().map(|&ti| net.c_skip(ti)));
        let c_out = Array1::from_iter(t.iter().map(|&ti| net.c_out(ti)));
        let scaled = tape.scale_rows(x, c_in);
        let emb = tape.constant(net.embedding_block(self.params, t, s));
        let input = tape.concat_cols(&[scaled, emb]);
        let nn = net.mlp.forward_tape(tape, &self.layers, input);
        let skip = tape.scale_rows(x, c_skip);
        let out = tape.scale_rows(nn, c_out);
        tape.add(skip, out)
    }

    pub fn big_g(&self, tape: &mut Tape, x: Var, t: &[f64], s: &[f64]) -> Var {
        let g = self.g(tape, x, t, s);
        let keep = Array1::from_iter(t.iter().zip(s).map(|(ti, si)| si / ti));
        let mix = Array1::from_iter(t.iter().zip(s).map(|(ti, si)| 1.0 - si / ti));
        let a = tape.scale_rows(x, keep);
        let b = tape.scale_rows(g, mix);
        tape.add(a, b)
    }

    pub fn collect_grad(&self, tape: &Tape) -> Vec<f64> {
        self.net.mlp.collect_grad(tape, &self.layers)
    }
}

/// Reverse-mode gradient of a scalar loss built from forward passes of the
/// network with `params` as the trainable leaves.
pub fn loss_gradient<F>(net: &CtmNetwork, params: &CtmParams, loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &TapeNet<'_>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let tn = net.on_tape(&mut tape, params, true)?;
    let root = loss(&mut tape, &tn)?;
    let value = tape.scalar(root);
    tape.backward(root);
    let grad = tn.collect_grad(&tape);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(CtmError::NonFiniteGradient { index });
    }
    Ok((value, grad))
}

/// Borrowed network + parameters, usable as a denoiser (`g_θ(x, t, t)`) or
/// trajectory map (`G_θ`).
#[derive(Clone, Copy)]
pub struct CtmView<'a> {
    pub net: &'a CtmNetwork,
    pub params: &'a CtmParams,
}

impl Denoiser for CtmView<'_> {
    fn dim(&self) -> usize {
        self.net.dim
    }

    fn denoise_rows(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        self.net.g_forward(self.params, x, t, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;
    use rand::Rng as _;

    fn small() -> (CtmNetwork, CtmParams) {
        let arch = Architecture {
            hidden_width: 8,
            depth: 2,
            n_frequencies: 4,
            ..Default::default()
        };
        let net = CtmNetwork::new(1, arch, &ScheduleConfig::default()).unwrap();
        let mut params = net.init_params(5);
        // Non-zero output layer so NN_θ is not identically zero.
        let mut rng = rng_for(6, 0);
        for w in params.weights.iter_mut() {
            if *w == 0.0 {
                *w = rng.random_range(-0.3..0.3);
            }
        }
        (net, params)
    }

    #[test]
    fn embedding_properties() {
        let (net, p) = small();
        let single = net.time_features(&p, 0.7);
        let both = net.embed_times(&p, 0.7, 0.7);
        assert!(single.iter().zip(&both).all(|(a, b)| (2.0 * a - b).abs() < 1e-15));
        assert_eq!(net.embed_times(&p, 3.0, 0.2), net.embed_times(&p, 3.0, 0.2));
        let mut rng = rng_for(7, 0);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.01..80.0);
            let s1: f64 = rng.random_range(0.0..t);
            let s2 = rng.random_range(0.0..t);
            if (s1 - s2).abs() > 1e-6 {
                assert_ne!(net.embed_times(&p, t, s1), net.embed_times(&p, t, s2));
            }
        }
        assert!(net.embed_times(&p, 1.0, 0.0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_output_layer_gives_skip_only() {
        let net = CtmNetwork::new(1, Architecture::default(), &ScheduleConfig::default()).unwrap();
        let p = net.init_params(1);
        let x = ndarray::array![[2.0]];
        let g = net.g_forward(&p, x.view(), &[1.0], &[0.3]).unwrap();
        assert!((g[[0, 0]] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn scale_formulas() {
        let (net, _) = small();
        assert_eq!(net.c_skip(0.5), 0.5);
        let out_min = net.c_out(0.002);
        assert!((out_min - 0.002).abs() < 1e-5);
        assert!(out_min < 0.002);
    }

    #[test]
    fn initial_condition_is_bit_exact() {
        let (net, p) = small();
        let mut rng = rng_for(8, 0);
        let n = 500;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-100.0..100.0));
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.002..80.0)).collect();
        let out = net.big_g_forward(&p, x.view(), &t, &t).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn s_zero_collapses_to_g() {
        let (net, p) = small();
        let x = ndarray::array![[0.3], [-1.7]];
        let t = [2.0, 0.4];
        let s = [0.0, 0.0];
        assert_eq!(net.big_g_forward(&p, x.view(), &t, &s).unwrap(), net.g_forward(&p, x.view(), &t, &s).unwrap());
    }

    #[test]
    fn tape_forward_matches_plain() {
        let (net, p) = small();
        let x = ndarray::array![[0.3], [-1.7], [4.0]];
        let t = [2.0, 0.4, 30.0];
        let s = [0.5, 0.0, 30.0];
        let plain = net.big_g_forward(&p, x.view(), &t, &s).unwrap();
        let mut tape = Tape::new();
        let tn = net.on_tape(&mut tape, &p, false).unwrap();
        let xv = tape.constant(x.clone());
        let out = tn.big_g(&mut tape, xv, &t, &s);
        let diff = (&plain - tape.value(out)).mapv(f64::abs).fold(0.0f64, |a, b| a.max(*b));
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (net, p) = small();
        let x = ndarray::array![[0.3], [-1.2], [2.0]];
        let y = ndarray::array![[0.1], [-0.9], [1.0]];
        let t = [0.8, 1.5, 4.0];
        let loss = |params: &CtmParams| -> f64 {
            let g = net.g_forward(params, x.view(), &t, &t).unwrap();
            (&g - &y).mapv(|v| v * v).sum()
        };
        let (value, grad) = loss_gradient(&net, &p, |tape, tn| {
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let g = tn.g(tape, xv, &t, &t);
            let d = tape.sub(g, yv);
            let sq = tape.square(d);
            Ok(tape.sum_all(sq))
        })
        .unwrap();
        assert!((value - loss(&p)).abs() < 1e-13);
        let h = 1e-6;
        for i in 0..p.weights.len() {
            let mut pp = p.clone();
            pp.weights[i] += h;
            let mut pm = p.clone();
            pm.weights[i] -= h;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn constant_loss_and_initial_condition_have_zero_gradient() {
        let (net, p) = small();
        let (_, g) = loss_gradient(&net, &p, |tape, _| Ok(tape.constant(Array2::from_elem((1, 1), 3.0)))).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let (_, g) = loss_gradient(&net, &p, |tape, tn| {
            let x = tape.constant(ndarray::array![[0.7], [-2.0]]);
            let out = tn.big_g(tape, x, &[1.0, 3.0], &[1.0, 3.0]);
            let sq = tape.square(out);
            Ok(tape.sum_all(sq))
        })
        .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let (net, mut p) = small();
        p.weights[3] = f64::NAN;
        let x = ndarray::array![[0.3]];
        assert!(matches!(net.g_forward(&p, x.view(), &[1.0], &[0.5]), Err(CtmError::Numeric(_))));
    }

    #[test]
    fn non_finite_gradient_is_flagged() {
        let (net, p) = small();
        let r = loss_gradient(&net, &p, |tape, tn| {
            let x = tape.constant(ndarray::array![[1e308]]);
            let g = tn.g(tape, x, &[1.0], &[0.5]);
            let sq = tape.square(g);
            let sq = tape.square(sq);
            Ok(tape.sum_all(sq))
        });
        assert!(matches!(r, Err(CtmError::NonFiniteGradient { .. })));
    }

    #[test]
    fn identical_seeds_identical_params() {
        let (net, _) = small();
        assert_eq!(net.init_params(42), net.init_params(42));
        assert_ne!(net.init_params(42), net.init_params(43));
    }
}
