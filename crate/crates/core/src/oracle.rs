//! Analytic teacher: an isotropic Gaussian mixture and everything the
//! variance-exploding diffusion `dx_t = √(2t) dw_t` induces on it.
//!
//! The perturbed marginal at level `t` is the mixture with per-component
//! variance `σ_k² + t²`, so densities, scores, denoisers and class
//! posteriors are all closed-form.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::schedule::standard_normal;
use crate::solvers::Denoiser;
use crate::{CtmError, Result, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
    dim: usize,
}

/// Raw, unvalidated mixture description as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = CtmError;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        GaussianMixture::new(spec.weights, spec.means, spec.stds)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(m: GaussianMixture) -> Self {
        MixtureSpec {
            weights: m.weights,
            means: m.means,
            stds: m.stds,
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CtmError::config("mixture: at least one component required"));
        }
        if means.len() != weights.len() || stds.len() != weights.len() {
            return Err(CtmError::config(format!(
                "mixture: weights/means/stds lengths differ ({}/{}/{})",
                weights.len(),
                means.len(),
                stds.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(CtmError::config("mixture: dimension must be positive"));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(CtmError::config("mixture: all means must share one dimension"));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CtmError::config("mixture: means must be finite"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CtmError::config("mixture: weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CtmError::config(format!("mixture: weights sum to {total}, not 1")));
        }
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CtmError::config("mixture: component stds must be finite and >= 0"));
        }
        Ok(Self {
            weights,
            means,
            stds,
            dim,
        })
    }

    pub fn single(mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::single(vec![0.0; dim], 1.0).expect("valid standard normal")
    }

    /// Equal-weight 1-D modes at `±offset` with common std.
    pub fn symmetric_pair(offset: f64, std: f64) -> Result<Self> {
        Self::new(vec![0.5, 0.5], vec![vec![-offset], vec![offset]], vec![std, std])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn is_single(&self) -> bool {
        self.weights.len() == 1
    }

    /// Per-coordinate mean of `p_t` (independent of t).
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    /// Per-coordinate variance of `p_t`.
    pub fn variance_t(&self, t: f64) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; self.dim];
        for ((w, m), s) in self.weights.iter().zip(&self.means).zip(&self.stds) {
            for d in 0..self.dim {
                out[d] += w * (s * s + t * t + (m[d] - mean[d]).powi(2));
            }
        }
        out
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(CtmError::Shape {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `log w_k + log N(x; μ_k, (σ_k² + t²) I)` per component. A zero-variance
    /// component contributes `+∞` at its mean and `−∞` elsewhere.
    fn component_log_terms(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((w, mu), s)| {
                let var = s * s + t * t;
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
                let log_w = w.ln();
                if var == 0.0 {
                    if sq == 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    log_w - 0.5 * self.dim as f64 * (LN_2PI + var.ln()) - sq / (2.0 * var)
                }
            })
            .collect()
    }

    pub fn log_density_t(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_point(x)?;
        if !(t >= 0.0) {
            return Err(CtmError::domain(format!("noise level must be >= 0, got {t}")));
        }
        Ok(log_sum_exp(&self.component_log_terms(x, t)))
    }

    /// Bayes posterior `p(k | x, t)` over components.
    pub fn class_posterior(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if !(t >= 0.0) {
            return Err(CtmError::domain(format!("noise level must be >= 0, got {t}")));
        }
        let terms = self.component_log_terms(x, t);
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(CtmError::numeric(format!("zero density at x={x:?}, t={t}")));
        }
        if max == f64::INFINITY {
            let hits = terms.iter().filter(|v| **v == f64::INFINITY).count() as f64;
            return Ok(terms
                .iter()
                .map(|v| if *v == f64::INFINITY { 1.0 / hits } else { 0.0 })
                .collect());
        }
        let mut post: Vec<f64> = terms.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= z);
        Ok(post)
    }

    /// `∇_x log p_t(x)`, responsibility-weighted component scores.
    pub fn score_t(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let post = self.class_posterior(x, t)?;
        let mut out = vec![0.0; self.dim];
        for ((r, mu), s) in post.iter().zip(&self.means).zip(&self.stds) {
            if *r == 0.0 {
                continue;
            }
            let var = s * s + t * t;
            if var == 0.0 {
                return Err(CtmError::numeric(format!(
                    "score undefined on a point mass at t=0 (x={x:?})"
                )));
            }
            for d in 0..self.dim {
                out[d] += r * (mu[d] - x[d]) / var;
            }
        }
        Ok(out)
    }

    /// Posterior mean `E[x_0 | x_t = x]`, computed from the component
    /// posterior means (Tweedie: equals `x + t²·score_t`).
    pub fn denoiser_t(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(CtmError::domain(format!("denoiser needs t > 0, got {t}")));
        }
        let post = self.class_posterior(x, t)?;
        let mut out = vec![0.0; self.dim];
        for ((r, mu), s) in post.iter().zip(&self.means).zip(&self.stds) {
            let shrink = s * s / (s * s + t * t);
            for d in 0..self.dim {
                out[d] += r * (mu[d] + shrink * (x[d] - mu[d]));
            }
        }
        Ok(out)
    }

    pub fn sample_component(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    /// `n` i.i.d. draws from `p_t` together with their component labels.
    pub fn sample_labeled(&self, t: f64, n: usize, rng: &mut Rng) -> (Array2<f64>, Vec<usize>) {
        let mut out = Array2::zeros((n, self.dim));
        let mut labels = Vec::with_capacity(n);
        for mut row in out.rows_mut() {
            let k = self.sample_component(rng);
            let std = (self.stds[k].powi(2) + t * t).sqrt();
            for (d, v) in row.iter_mut().enumerate() {
                *v = self.means[k][d] + std * standard_normal(rng);
            }
            labels.push(k);
        }
        (out, labels)
    }

    pub fn sample_marginal(&self, t: f64, n: usize, rng: &mut Rng) -> Array2<f64> {
        self.sample_labeled(t, n, rng).0
    }

    /// Global Lipschitz bound of the PF ODE velocity for a single isotropic
    /// Gaussian, `sup_t 1/(σ₀² + t²) = 1/σ₀²`.
    pub fn single_lipschitz(&self) -> Result<f64> {
        if !self.is_single() {
            return Err(CtmError::Unsupported(
                "Lipschitz bound is only available for a single Gaussian".into(),
            ));
        }
        let s = self.stds[0];
        if s == 0.0 {
            return Err(CtmError::numeric("point mass has no finite Lipschitz bound"));
        }
        Ok(1.0 / (s * s))
    }

    /// Exact PF ODE transition; only available for one component.
    pub fn exact_transition(&self, x: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
        if !self.is_single() {
            return Err(CtmError::Unsupported(
                "closed-form transition needs a single component; use solvers::reference_solution"
                    .into(),
            ));
        }
        self.check_point(x)?;
        if !(t > 0.0 && (0.0..=t).contains(&s)) {
            return Err(CtmError::domain(format!("need t > 0 and 0 <= s <= t, got t={t}, s={s}")));
        }
        Ok(exact_transition_single_gaussian(&self.means[0], self.stds[0], x, t, s))
    }
}

/// Closed-form PF ODE solution for `N(μ, σ₀² I)` data:
/// `μ + (x − μ)·√((σ₀² + s²)/(σ₀² + t²))`.
pub fn exact_transition_single_gaussian(mu: &[f64], sigma0: f64, x: &[f64], t: f64, s: f64) -> Vec<f64> {
    if s == t {
        return x.to_vec();
    }
    let v0 = sigma0 * sigma0;
    let ratio = ((v0 + s * s) / (v0 + t * t)).sqrt();
    x.iter().zip(mu).map(|(xi, m)| m + (xi - m) * ratio).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Denoiser for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise_rows(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        // Same arithmetic as `denoiser_t`, without per-row allocation.
        let k = self.n_components();
        let mut logw = vec![0.0; k];
        let ln_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (row, mut o)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let ti = t[i];
            if !(ti > 0.0) {
                return Err(CtmError::domain(format!("denoiser needs t > 0, got {ti}")));
            }
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                let var = self.stds[c] * self.stds[c] + ti * ti;
                let sq: f64 = row.iter().zip(&self.means[c]).map(|(a, b)| (a - b) * (a - b)).sum();
                logw[c] = ln_w[c] - 0.5 * self.dim as f64 * var.ln() - sq / (2.0 * var);
                max = max.max(logw[c]);
            }
            if !max.is_finite() {
                let d = self.denoiser_t(&row.to_vec(), ti)?;
                o.iter_mut().zip(d).for_each(|(a, b)| *a = b);
                continue;
            }
            let mut z = 0.0;
            for lw in logw.iter_mut() {
                *lw = (*lw - max).exp();
                z += *lw;
            }
            o.fill(0.0);
            for c in 0..k {
                let r = logw[c] / z;
                let s2 = self.stds[c] * self.stds[c];
                let shrink = s2 / (s2 + ti * ti);
                for (d, (ov, xv)) in o.iter_mut().zip(row).enumerate() {
                    let mu = self.means[c][d];
                    *ov += r * (mu + shrink * (xv - mu));
                }
            }
        }
        Ok(out)
    }
}
