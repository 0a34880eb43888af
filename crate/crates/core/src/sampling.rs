//! γ-sampling, the EDM stochastic sampler, classifier rejection and
//! loss-guided trajectory correction.
//!
//! All samplers work on a batch of independent chains stored as rows.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::model::CtmView;
use crate::oracle::{exact_transition_single_gaussian, GaussianMixture};
use crate::schedule::standard_normal;
use crate::solvers::{solve_rows, Denoiser, Method, ReferenceSolver};
use crate::{CtmError, Result, Rng};

/// Anything that maps `x` at time `t` to time `s ≤ t`, row-wise.
pub trait TrajectoryMap {
    fn dim(&self) -> usize;

    fn map_rows(&self, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>>;

    /// Same `(t, s)` for every row.
    fn map_all(&self, x: ArrayView2<f64>, t: f64, s: f64) -> Result<Array2<f64>> {
        let n = x.nrows();
        self.map_rows(x, &vec![t; n], &vec![s; n])
    }
}

impl<M: TrajectoryMap + ?Sized> TrajectoryMap for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn map_rows(&self, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        (**self).map_rows(x, t, s)
    }
}

impl TrajectoryMap for CtmView<'_> {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn map_rows(&self, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        self.net.big_g_forward(self.params, x, t, s)
    }
}

/// Per-point closure as a [`TrajectoryMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, f64) -> Vec<f64>> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, f64) -> Vec<f64>> TrajectoryMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn map_rows(&self, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (row, mut o)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let v = (self.f)(&row.to_vec(), t[i], s[i]);
            o.iter_mut().zip(v).for_each(|(a, b)| *a = b);
        }
        Ok(out)
    }
}

/// The teacher's exact flow map: closed form for one Gaussian component,
/// otherwise the fine-grid reference solver.
#[derive(Debug, Clone)]
pub struct OracleFlow {
    pub mixture: GaussianMixture,
    pub solver: ReferenceSolver,
}

impl OracleFlow {
    pub fn new(mixture: GaussianMixture) -> Self {
        Self {
            mixture,
            solver: ReferenceSolver::default(),
        }
    }
}

impl TrajectoryMap for OracleFlow {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn map_rows(&self, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        check_pairs(t, s)?;
        if self.mixture.is_single() {
            let mu = &self.mixture.means()[0];
            let sd = self.mixture.stds()[0];
            let mut out = Array2::zeros(x.raw_dim());
            for (i, (row, mut o)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
                let v = exact_transition_single_gaussian(mu, sd, &row.to_vec(), t[i], s[i]);
                o.iter_mut().zip(v).for_each(|(a, b)| *a = b);
            }
            Ok(out)
        } else {
            self.solver.solve_rows(&self.mixture, x, t, s)
        }
    }
}

/// `G(x, t, s) + (1 − s/t)·ε·c·(1 + ½ sin(x/c))` per coordinate, with `c`
/// the data scale: a smooth, biased error in `g` of relative size ε that
/// keeps `G(x, t, t) = x`.
pub struct PerturbedMap<M> {
    pub base: M,
    pub eps: f64,
    pub scale: f64,
}

impl<M: TrajectoryMap> TrajectoryMap for PerturbedMap<M> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn map_rows(&self, x: ArrayView2<f64>, t: &[f64], s: &[f64]) -> Result<Array2<f64>> {
        let mut out = self.base.map_rows(x, t, s)?;
        let sd = self.scale;
        for (i, (mut o, row)) in out.rows_mut().into_iter().zip(x.rows()).enumerate() {
            let w = (1.0 - s[i] / t[i]) * self.eps * sd;
            for (v, xv) in o.iter_mut().zip(row) {
                *v += w * (1.0 + 0.5 * (xv / sd).sin());
            }
        }
        Ok(out)
    }
}

fn check_pairs(t: &[f64], s: &[f64]) -> Result<()> {
    for (&ti, &si) in t.iter().zip(s) {
        if !(si >= 0.0 && si <= ti && (ti > 0.0 || ti == si)) {
            return Err(CtmError::domain(format!("need 0 <= s <= t, got t={ti}, s={si}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerVariant {
    CtmGamma,
    EdmStochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub gamma: f64,
    /// Descending, ending in exactly 0.
    pub times: Vec<f64>,
    pub variant: SamplerVariant,
    pub seed: u64,
    #[serde(default)]
    pub record_trace: bool,
}

impl SamplerSpec {
    pub fn new(gamma: f64, times: Vec<f64>, variant: SamplerVariant, seed: u64) -> Result<Self> {
        let spec = Self {
            gamma,
            times,
            variant,
            seed,
            record_trace: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gamma;
        let ok = match self.variant {
            SamplerVariant::CtmGamma => (0.0..=1.0).contains(&g),
            SamplerVariant::EdmStochastic => g.is_finite() && g >= 0.0,
        };
        if !ok {
            return Err(CtmError::config(format!("sampler.gamma out of range for {:?}: {g}", self.variant)));
        }
        if self.times.len() < 2 {
            return Err(CtmError::config("sampler grid needs at least two times"));
        }
        if self.times.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CtmError::config("sampler grid must be strictly decreasing"));
        }
        if *self.times.last().expect("non-empty") != 0.0 {
            return Err(CtmError::config("sampler grid must end at exactly 0"));
        }
        if !self.times[0].is_finite() {
            return Err(CtmError::config("sampler grid must start at a finite time"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub samples: Array2<f64>,
    /// Model evaluations per chain.
    pub nfe: usize,
    /// States after every step (only with `record_trace`).
    pub trace: Option<Vec<Array2<f64>>>,
}

/// `n` prior draws from `N(0, T² I)`.
pub fn prior_samples(dim: usize, t_max: f64, n: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || t_max * standard_normal(rng))
}

fn noise_like(x: &Array2<f64>, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(x.raw_dim(), || standard_normal(rng))
}

/// One γ-step: denoise to `√(1 − γ²)·t_next`, then re-noise to `t_next`.
/// The step onto 0 injects nothing.
fn gamma_step<G: TrajectoryMap + ?Sized>(
    g: &G,
    x: ArrayView2<f64>,
    t: f64,
    t_next: f64,
    gamma: f64,
) -> Result<(Array2<f64>, f64)> {
    if t_next == 0.0 {
        return Ok((g.map_all(x, t, 0.0)?, 0.0));
    }
    let target = (1.0 - gamma * gamma).sqrt() * t_next;
    Ok((g.map_all(x, t, target)?, target))
}

fn diffuse(x: &mut Array2<f64>, std: f64, rng: &mut Rng) {
    if std > 0.0 {
        let z = noise_like(x, rng);
        x.zip_mut_with(&z, |v, e| *v += std * e);
    }
}

pub fn gamma_sample<G: TrajectoryMap + ?Sized>(g: &G, spec: &SamplerSpec, x_t: ArrayView2<f64>, rng: &mut Rng) -> Result<SampleRun> {
    spec.validate()?;
    let mut x = x_t.to_owned();
    let mut trace = spec.record_trace.then(Vec::new);
    for w in spec.times.windows(2) {
        let (next, _) = gamma_step(g, x.view(), w[0], w[1], spec.gamma)?;
        x = next;
        if w[1] > 0.0 {
            diffuse(&mut x, spec.gamma * w[1], rng);
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(SampleRun {
        samples: x,
        nfe: spec.steps(),
        trace,
    })
}

/// Diffuse to `t̂ = (1 + γ)t` (capped at the first grid time), then one
/// Heun step to the next time (Euler onto 0).
pub fn edm_stochastic_sample<D: Denoiser + ?Sized>(
    den: &D,
    spec: &SamplerSpec,
    x_t: ArrayView2<f64>,
    rng: &mut Rng,
) -> Result<SampleRun> {
    spec.validate()?;
    let ceiling = spec.times[0];
    let n = x_t.nrows();
    let mut x = x_t.to_owned();
    let mut trace = spec.record_trace.then(Vec::new);
    let mut evals = 0;
    for w in spec.times.windows(2) {
        let (t, next) = (w[0], w[1]);
        let mut t_hat = (1.0 + spec.gamma) * t;
        if t_hat > ceiling {
            if t_hat > ceiling * (1.0 + 1e-12) {
                log::warn!("t_hat = {t_hat} exceeds {ceiling}; clamped");
            }
            t_hat = ceiling;
        }
        diffuse(&mut x, (t_hat * t_hat - t * t).max(0.0).sqrt(), rng);
        let (y, used) = solve_rows(Method::Heun, den, x.view(), &vec![t_hat; n], &vec![next; n], &vec![1; n], 1.0)?;
        x = y;
        evals += used;
        if let Some(tr) = trace.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(SampleRun {
        samples: x,
        nfe: evals.checked_div(n).unwrap_or(0),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionResult {
    pub kept: Array2<f64>,
    pub kept_scores: Vec<f64>,
    pub candidate_scores: Vec<f64>,
    pub n_candidates: usize,
    /// Model evaluations per kept sample.
    pub avg_nfe: f64,
}

/// Number of candidates generated to keep `n_keep` at rejection ratio `r`.
pub fn rejection_candidates(n_keep: usize, r: f64) -> usize {
    ((n_keep as f64 / (1.0 - r)) - 1e-9).ceil() as usize
}

/// Draws `⌈n_keep/(1 − r)⌉` γ-samples from the prior, scores each by
/// `posterior(x)[class_k]`, and keeps the `n_keep` best (ties keep the
/// earlier candidate).
#[allow(clippy::too_many_arguments)]
pub fn classifier_rejection_sample<G, P>(
    g: &G,
    spec: &SamplerSpec,
    posterior: P,
    class_k: usize,
    r: f64,
    n_keep: usize,
    rng: &mut Rng,
) -> Result<RejectionResult>
where
    G: TrajectoryMap + ?Sized,
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(0.0..1.0).contains(&r) {
        return Err(CtmError::config(format!("rejection ratio must lie in [0, 1), got {r}")));
    }
    let n_cand = rejection_candidates(n_keep, r);
    let x_t = prior_samples(g.dim(), spec.times[0], n_cand, rng);
    let run = gamma_sample(g, spec, x_t.view(), rng)?;
    let mut scores = Vec::with_capacity(n_cand);
    for row in run.samples.rows() {
        let p = posterior(&row.to_vec())?;
        let v = *p
            .get(class_k)
            .ok_or_else(|| CtmError::config(format!("class {class_k} out of range")))?;
        scores.push(v);
    }
    let mut order: Vec<usize> = (0..n_cand).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n_keep);
    order.sort_unstable();
    Ok(RejectionResult {
        kept: run.samples.select(ndarray::Axis(0), &order),
        kept_scores: order.iter().map(|&i| scores[i]).collect(),
        candidate_scores: scores,
        n_candidates: n_cand,
        avg_nfe: if n_keep > 0 {
            (run.nfe * n_cand) as f64 / n_keep as f64
        } else {
            0.0
        },
    })
}

/// Knobs of the loss-guided corrector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guidance {
    pub corrector_steps: usize,
    pub zeta: f64,
    pub scale: f64,
}

/// γ-sampling from `x_ref + t_0 ε`, with `M` Langevin corrector steps
/// `x ← x + (ζ/2)(∇log p(x) − c·∇L(x, x_ref + t̃ε)) + √ζ ε′` at every
/// intermediate time `t̃ > 0`. Returns the run and the starting point.
#[allow(clippy::too_many_arguments)]
pub fn guided_trajectory_sample<G, S, L>(
    g: &G,
    score: S,
    spec: &SamplerSpec,
    x_ref: ArrayView2<f64>,
    loss_grad: L,
    guide: Guidance,
    rng: &mut Rng,
) -> Result<(SampleRun, Array2<f64>)>
where
    G: TrajectoryMap + ?Sized,
    S: Fn(ArrayView2<f64>, f64) -> Result<Array2<f64>>,
    L: Fn(ArrayView2<f64>, ArrayView2<f64>) -> Array2<f64>,
{
    spec.validate()?;
    if !(guide.zeta >= 0.0 && guide.zeta.is_finite()) {
        return Err(CtmError::config("corrector step size must be >= 0"));
    }
    let mut x = x_ref.to_owned();
    diffuse(&mut x, spec.times[0], rng);
    let start = x.clone();
    let mut trace = spec.record_trace.then(Vec::new);
    for w in spec.times.windows(2) {
        let (next, t_tilde) = gamma_step(g, x.view(), w[0], w[1], spec.gamma)?;
        x = next;
        if t_tilde > 0.0 {
            for _ in 0..guide.corrector_steps {
                let mut reference = x_ref.to_owned();
                diffuse(&mut reference, t_tilde, rng);
                let grad_l = loss_grad(x.view(), reference.view());
                let sc = score(x.view(), t_tilde)?;
                let kick = noise_like(&x, rng);
                let half = 0.5 * guide.zeta;
                let root = guide.zeta.sqrt();
                for ((v, (s, gl)), k) in x.iter_mut().zip(sc.iter().zip(&grad_l)).zip(&kick) {
                    *v += half * (s - guide.scale * gl) + root * k;
                }
            }
        }
        if w[1] > 0.0 {
            diffuse(&mut x, spec.gamma * w[1], rng);
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok((
        SampleRun {
            samples: x,
            nfe: spec.steps(),
            trace,
        },
        start,
    ))
}

/// Gradient of `‖x − y‖²` in `x`.
pub fn squared_distance_grad(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    (&x - &y).mapv(|v| 2.0 * v)
}

/// Score of the mixture at level `t`, row-wise.
pub fn mixture_score(mix: &GaussianMixture, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x.raw_dim());
    for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
        let s = mix.score_t(&row.to_vec(), t)?;
        o.iter_mut().zip(s).for_each(|(a, b)| *a = b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;
    use ndarray::array;

    fn normal_flow() -> OracleFlow {
        OracleFlow::new(GaussianMixture::standard_normal(1))
    }

    fn spec(gamma: f64, times: Vec<f64>) -> SamplerSpec {
        SamplerSpec::new(gamma, times, SamplerVariant::CtmGamma, 0).unwrap()
    }

    #[test]
    fn deterministic_two_step_example() {
        let g = normal_flow();
        let mut sp = spec(0.0, vec![1.0, 0.5, 0.0]);
        sp.record_trace = true;
        let x = array![[2.0]];
        let run = gamma_sample(&g, &sp, x.view(), &mut rng_for(1, 0)).unwrap();
        let tr = run.trace.unwrap();
        assert!((tr[0][[0, 0]] - 1.581_138_830_084_189_8).abs() < 1e-15);
        assert!((tr[1][[0, 0]] - std::f64::consts::SQRT_2).abs() < 1e-15);
        let direct = g.map_all(x.view(), 1.0, 0.0).unwrap();
        assert!((run.samples[[0, 0]] - direct[[0, 0]]).abs() < 1e-15);
        assert_eq!(run.nfe, 2);
    }

    #[test]
    fn gamma_one_is_multistep_consistency_sampling() {
        let g = normal_flow();
        let sp = spec(1.0, vec![2.0, 0.7, 0.0]);
        let x = array![[1.5], [-0.3]];
        let mut rng = rng_for(2, 0);
        let mut copy = rng.clone();
        let run = gamma_sample(&g, &sp, x.view(), &mut rng).unwrap();
        let mut manual = g.map_all(x.view(), 2.0, 0.0).unwrap();
        diffuse(&mut manual, 0.7, &mut copy);
        let manual = g.map_all(manual.view(), 0.7, 0.0).unwrap();
        assert_eq!(run.samples, manual);
    }

    #[test]
    fn single_jump_ignores_gamma() {
        let g = normal_flow();
        let x = array![[3.0], [-1.0]];
        let a = gamma_sample(&g, &spec(0.0, vec![80.0, 0.0]), x.view(), &mut rng_for(3, 0)).unwrap();
        let b = gamma_sample(&g, &spec(0.9, vec![80.0, 0.0]), x.view(), &mut rng_for(4, 0)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn spec_validation() {
        assert!(SamplerSpec::new(1.5, vec![1.0, 0.0], SamplerVariant::CtmGamma, 0).is_err());
        assert!(SamplerSpec::new(1.5, vec![1.0, 0.0], SamplerVariant::EdmStochastic, 0).is_ok());
        assert!(SamplerSpec::new(0.0, vec![1.0, 0.5], SamplerVariant::CtmGamma, 0).is_err());
        assert!(SamplerSpec::new(0.0, vec![1.0, 1.0, 0.0], SamplerVariant::CtmGamma, 0).is_err());
    }

    #[test]
    fn edm_sampler_examples() {
        let m = GaussianMixture::standard_normal(1);
        let mut sp = SamplerSpec::new(0.0, vec![1.0, 0.5, 0.0], SamplerVariant::EdmStochastic, 0).unwrap();
        sp.record_trace = true;
        let run = edm_stochastic_sample(&m, &sp, array![[2.0]].view(), &mut rng_for(5, 0)).unwrap();
        assert!((run.trace.unwrap()[0][[0, 0]] - 1.6).abs() < 1e-15);
        assert_eq!(run.nfe, 3);
        // γ = 0 is plain Heun stepping.
        let heun = crate::solvers::solve_ode(Method::Heun, &m, &[2.0], 1.0, 0.5, 1).unwrap().0;
        let heun = crate::solvers::solve_ode(Method::Euler, &m, &heun, 0.5, 0.0, 1).unwrap().0;
        assert_eq!(run.samples[[0, 0]], heun[0]);
    }

    #[test]
    fn edm_noise_variance() {
        let gamma: f64 = 0.3;
        let t = 2.0;
        let t_hat = (1.0 + gamma) * t;
        assert!(((t_hat * t_hat - t * t) - (2.0 * gamma + gamma * gamma) * t * t).abs() < 1e-12);
    }

    #[test]
    fn rejection_counts_and_ranking() {
        let m = GaussianMixture::symmetric_pair(1.0, 0.2).unwrap();
        let g = OracleFlow::new(m.clone());
        let sp = spec(0.0, vec![80.0, 0.0]);
        let post = |x: &[f64]| m.class_posterior(x, 0.0);
        let res = classifier_rejection_sample(&g, &sp, post, 1, 0.5, 50, &mut rng_for(6, 0)).unwrap();
        assert_eq!(res.n_candidates, 100);
        assert_eq!(res.kept.nrows(), 50);
        assert_eq!(res.avg_nfe, 2.0);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&res.kept_scores) >= mean(&res.candidate_scores));
        let plain = classifier_rejection_sample(&g, &sp, post, 1, 0.0, 50, &mut rng_for(6, 0)).unwrap();
        assert_eq!(plain.n_candidates, 50);
        assert_eq!(plain.kept_scores, plain.candidate_scores);
        assert!(classifier_rejection_sample(&g, &sp, post, 1, 1.0, 50, &mut rng_for(6, 0)).is_err());
    }

    #[test]
    fn guided_reduces_to_gamma_sampling() {
        let m = GaussianMixture::standard_normal(1);
        let g = OracleFlow::new(m.clone());
        let sp = spec(0.5, vec![5.0, 1.0, 0.3, 0.0]);
        let x_ref = array![[0.4], [-1.2]];
        let score = |x: ArrayView2<f64>, t: f64| mixture_score(&m, x, t);
        let guide = Guidance { corrector_steps: 0, zeta: 0.1, scale: 1.0 };
        let mut rng = rng_for(7, 0);
        let mut copy = rng.clone();
        let (run, start) = guided_trajectory_sample(&g, score, &sp, x_ref.view(), squared_distance_grad, guide, &mut rng).unwrap();
        let mut x_t = x_ref.clone();
        diffuse(&mut x_t, 5.0, &mut copy);
        assert_eq!(start, x_t);
        let plain = gamma_sample(&g, &sp, x_t.view(), &mut copy).unwrap();
        assert_eq!(run.samples, plain.samples);
    }

    #[test]
    fn zero_step_corrector_is_identity_on_drift() {
        // ζ = 0: the corrector adds nothing, though it still draws noise.
        let m = GaussianMixture::standard_normal(1);
        let g = OracleFlow::new(m.clone());
        let sp = spec(0.0, vec![5.0, 1.0, 0.0]);
        let x_ref = array![[0.4]];
        let score = |x: ArrayView2<f64>, t: f64| mixture_score(&m, x, t);
        let guide = Guidance { corrector_steps: 3, zeta: 0.0, scale: 1.0 };
        let mut rng = rng_for(8, 0);
        let (run, start) = guided_trajectory_sample(&g, score, &sp, x_ref.view(), squared_distance_grad, guide, &mut rng).unwrap();
        let plain = gamma_sample(&g, &sp, start.view(), &mut rng_for(0, 0)).unwrap();
        assert_eq!(run.samples, plain.samples);
    }

    #[test]
    fn corrector_fixed_point_at_mode() {
        // Score vanishes at the mode; with no loss gradient and no noise the
        // update leaves x in place.
        let m = GaussianMixture::single(vec![0.7], 1.0).unwrap();
        let x = array![[0.7]];
        let s = mixture_score(&m, x.view(), 0.5).unwrap();
        let zeta: f64 = 0.2;
        let next = x[[0, 0]] + 0.5 * zeta * (s[[0, 0]] - 1.0 * 0.0) + zeta.sqrt() * 0.0;
        assert_eq!(next, 0.7);
    }

    #[test]
    fn perturbed_map_keeps_initial_condition() {
        let p = PerturbedMap {
            base: normal_flow(),
            eps: 0.01,
            scale: 0.5,
        };
        let x = array![[0.3], [2.0]];
        assert_eq!(p.map_rows(x.view(), &[1.0, 4.0], &[1.0, 4.0]).unwrap(), x);
        let moved = p.map_all(x.view(), 1.0, 0.0).unwrap();
        let exact = normal_flow().map_all(x.view(), 1.0, 0.0).unwrap();
        assert!((&moved - &exact).iter().all(|d| *d > 0.0 && *d < 0.01));
    }

    #[test]
    fn oracle_flow_mixture_semigroup() {
        let g = OracleFlow::new(GaussianMixture::symmetric_pair(1.0, 0.2).unwrap());
        let x = array![[3.0], [-0.2]];
        let direct = g.map_all(x.view(), 5.0, 0.0).unwrap();
        let mid = g.map_all(x.view(), 5.0, 0.8).unwrap();
        let two = g.map_all(mid.view(), 0.8, 0.0).unwrap();
        assert!((&direct - &two).iter().all(|d| d.abs() < 1e-6));
    }
}
