//! The combined trajectory / denoising / adversarial objective and the
//! optimizer loop around it.
//!
//! Every random quantity of one step lives in a [`TrainBatch`], so loss
//! values and gradients are deterministic functions of `(state, batch)`.

use std::io::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::model::{loss_gradient, Activation, Architecture, CtmNetwork, CtmParams, CtmView, EmaState, Mlp, Tape, TapeNet, Var};
use crate::oracle::GaussianMixture;
use crate::sampling::TrajectoryMap;
use crate::schedule::{build_time_grid, sample_dsm_time, standard_normal, ScheduleConfig, Triplet, TripletSampler};
use crate::solvers::{solve_rows, Method, ReferenceSolver};
use crate::{rng_for, CtmError, Result, Rng};

/// Floor applied inside every GAN logarithm.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    Oracle,
    PretrainedFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_dsm: f64,
    pub lambda_gan: f64,
    /// Defaults to half of `total_iters`.
    pub gan_warmup_iters: Option<u64>,
    pub learning_rate: f64,
    pub disc_learning_rate: f64,
    pub batch_size: usize,
    pub total_iters: u64,
    pub teacher: TeacherMode,
    pub max_ode_steps: usize,
    pub ema_decay: f64,
    pub disc_width: usize,
    pub disc_depth: usize,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_dsm: 1.0,
            lambda_gan: 1.0,
            gan_warmup_iters: None,
            learning_rate: 4e-4,
            disc_learning_rate: 2e-3,
            batch_size: 128,
            total_iters: 20_000,
            teacher: TeacherMode::Oracle,
            max_ode_steps: 17,
            ema_decay: 0.999,
            disc_width: 128,
            disc_depth: 3,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !nonneg(self.lambda_dsm) || !nonneg(self.lambda_gan) {
            return Err(CtmError::config("training: lambda_dsm and lambda_gan must be >= 0"));
        }
        if !pos(self.learning_rate) || !pos(self.disc_learning_rate) {
            return Err(CtmError::config("training: learning rates must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(CtmError::config("training.batch_size must be positive"));
        }
        if self.max_ode_steps == 0 {
            return Err(CtmError::config("training.max_ode_steps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(CtmError::config("training.ema_decay must lie in [0, 1]"));
        }
        if self.disc_width == 0 || self.disc_depth == 0 {
            return Err(CtmError::config("training: discriminator width and depth must be positive"));
        }
        Ok(())
    }

    pub fn warmup(&self) -> u64 {
        self.gan_warmup_iters.unwrap_or(self.total_iters / 2)
    }

    /// `λ_GAN` in force at `iteration` (zero during warm-up).
    pub fn lambda_gan_at(&self, iteration: u64) -> f64 {
        if iteration < self.warmup() {
            0.0
        } else {
            self.lambda_gan
        }
    }
}

/// Adam with bias correction, β = (0.9, 0.999), ε = 1e-8, no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    /// Returns the updated parameters and optimizer without mutating `self`;
    /// `ascend` flips the update direction.
    pub fn proposed(&self, params: &[f64], grad: &[f64], ascend: bool) -> (Vec<f64>, Adam) {
        let mut next = self.clone();
        next.steps += 1;
        let bc1 = 1.0 - Self::BETA1.powi(next.steps as i32);
        let bc2 = 1.0 - Self::BETA2.powi(next.steps as i32);
        let sign = if ascend { 1.0 } else { -1.0 };
        let mut out = params.to_vec();
        for i in 0..params.len() {
            let g = grad[i];
            next.m[i] = Self::BETA1 * next.m[i] + (1.0 - Self::BETA1) * g;
            next.v[i] = Self::BETA2 * next.v[i] + (1.0 - Self::BETA2) * g * g;
            let mh = next.m[i] / bc1;
            let vh = next.v[i] / bc2;
            out[i] += sign * self.lr * mh / (vh.sqrt() + Self::EPS);
        }
        (out, next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: CtmParams,
    pub ema: EmaState,
    pub disc: Vec<f64>,
    pub opt_theta: Adam,
    pub opt_disc: Adam,
    pub iteration: u64,
    pub rng: Rng,
    /// Rejected (non-finite) steps so far.
    pub incidents: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub ctm: f64,
    pub dsm: f64,
    pub gan_g: f64,
    pub gan_d: f64,
    pub lambda_dsm: f64,
    pub lambda_gan: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recomposed(&self) -> f64 {
        self.ctm + self.lambda_dsm * self.dsm + self.lambda_gan * self.gan_g
    }
}

/// All randomness consumed by one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x0: Array2<f64>,
    pub eps: Array2<f64>,
    pub triplets: Vec<Triplet>,
    pub dsm_x0: Array2<f64>,
    pub dsm_t: Vec<f64>,
    pub dsm_eps: Array2<f64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.nrows() == 0
    }

    fn column(&self, f: impl Fn(&Triplet) -> f64) -> Vec<f64> {
        self.triplets.iter().map(f).collect()
    }

    pub fn t(&self) -> Vec<f64> {
        self.column(|tr| tr.t)
    }

    pub fn s(&self) -> Vec<f64> {
        self.column(|tr| tr.s)
    }

    pub fn u(&self) -> Vec<f64> {
        self.column(|tr| tr.u)
    }

    /// `x_t = x_0 + t·ε` row-wise.
    pub fn x_t(&self) -> Array2<f64> {
        &self.x0 + &(&self.eps * &Array1::from(self.t()).insert_axis(Axis(1)))
    }

    pub fn dsm_input(&self) -> Array2<f64> {
        &self.dsm_x0 + &(&self.dsm_eps * &Array1::from(self.dsm_t.clone()).insert_axis(Axis(1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Accepted(LossBreakdown),
    Rejected { iteration: u64, reason: String },
}

/// Result of a full loss evaluation: breakdown plus gradients for θ and η.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub breakdown: LossBreakdown,
    pub grad_theta: Vec<f64>,
    pub grad_disc: Vec<f64>,
}

/// Owns the static pieces of a run: network, discriminator, schedule,
/// triplet law and teacher.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: CtmNetwork,
    pub disc: Mlp,
    pub schedule: ScheduleConfig,
    pub cfg: TrainConfig,
    pub mixture: GaussianMixture,
    triplets: TripletSampler,
    teacher_solver: ReferenceSolver,
}

impl Trainer {
    pub fn new(mixture: GaussianMixture, schedule: ScheduleConfig, arch: Architecture, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = CtmNetwork::new(mixture.dim(), arch, &schedule)?;
        let grid = build_time_grid(&schedule)?;
        let triplets = TripletSampler::new(&grid, cfg.max_ode_steps)?;
        let disc = Mlp::new(mixture.dim(), cfg.disc_width, cfg.disc_depth, 1, Activation::Silu);
        Ok(Self {
            net,
            disc,
            schedule,
            teacher_solver: ReferenceSolver::training(schedule),
            cfg,
            mixture,
            triplets,
        })
    }

    pub fn init_state(&self, seed: u64) -> Result<TrainState> {
        let params = self.net.init_params(seed);
        let disc = self.disc.init(&mut rng_for(seed, 0x646973), false);
        Ok(TrainState {
            ema: EmaState::new(&params, self.cfg.ema_decay)?,
            opt_theta: Adam::new(params.n_params(), self.cfg.learning_rate),
            opt_disc: Adam::new(disc.len(), self.cfg.disc_learning_rate),
            params,
            disc,
            iteration: 0,
            rng: rng_for(seed, 0x747261696e),
            incidents: 0,
        })
    }

    pub fn sample_batch(&self, rng: &mut Rng) -> TrainBatch {
        let b = self.cfg.batch_size;
        let d = self.mixture.dim();
        let x0 = self.mixture.sample_marginal(0.0, b, rng);
        let triplets = (0..b).map(|_| self.triplets.sample(rng)).collect();
        let eps = Array2::from_shape_simple_fn((b, d), || standard_normal(rng));
        let dsm_x0 = self.mixture.sample_marginal(0.0, b, rng);
        let dsm_t = (0..b).map(|_| sample_dsm_time(&self.schedule, rng)).collect();
        let dsm_eps = Array2::from_shape_simple_fn((b, d), || standard_normal(rng));
        TrainBatch {
            x0,
            eps,
            triplets,
            dsm_x0,
            dsm_t,
            dsm_eps,
        }
    }

    /// `Solver(x_t, t, u)` for the configured teacher.
    pub fn teacher_solve(&self, state: &TrainState, x_t: ArrayView2<f64>, batch: &TrainBatch) -> Result<Array2<f64>> {
        let (t, u) = (batch.t(), batch.u());
        match self.cfg.teacher {
            TeacherMode::Oracle => self.teacher_solver.solve_rows(&self.mixture, x_t, &t, &u),
            TeacherMode::PretrainedFree => {
                let view = CtmView {
                    net: &self.net,
                    params: &state.ema.shadow,
                };
                let steps: Vec<usize> = batch.triplets.iter().map(|tr| tr.u_index - tr.t_index).collect();
                Ok(solve_rows(Method::Heun, &view, x_t, &t, &u, &steps, self.schedule.rho)?.0)
            }
        }
    }

    /// `x_target = G_sg(G_sg(Solver(x_t, t, u), u, s), s, 0)`.
    pub fn ctm_target(&self, state: &TrainState, batch: &TrainBatch) -> Result<Array2<f64>> {
        let x_t = batch.x_t();
        let y_u = self.teacher_solve(state, x_t.view(), batch)?;
        let sg = CtmView {
            net: &self.net,
            params: &state.ema.shadow,
        };
        let (u, s) = (batch.u(), batch.s());
        let y_s = sg.map_rows(y_u.view(), &u, &s)?;
        sg.map_rows(y_s.view(), &s, &vec![0.0; s.len()])
    }

    /// The target built with the student's own frozen denoiser, whatever the
    /// configured teacher.
    pub fn pretrained_free_target(&self, state: &TrainState, batch: &TrainBatch) -> Result<Array2<f64>> {
        let mut free = self.clone();
        free.cfg.teacher = TeacherMode::PretrainedFree;
        free.ctm_target(state, batch)
    }

    fn sg_on_tape<'a>(&'a self, tape: &mut Tape, state: &'a TrainState) -> Result<TapeNet<'a>> {
        self.net.on_tape(tape, &state.ema.shadow, false)
    }

    /// Places `x_est = G_sg(G_θ(x_t, t, s), s, 0)` on the tape.
    fn x_est_on_tape(tape: &mut Tape, tn: &TapeNet<'_>, sg: &TapeNet<'_>, batch: &TrainBatch) -> Var {
        let (t, s) = (batch.t(), batch.s());
        let xt = tape.constant(batch.x_t());
        let inner = tn.big_g(tape, xt, &t, &s);
        sg.big_g(tape, inner, &s, &vec![0.0; s.len()])
    }

    fn dsm_on_tape(tape: &mut Tape, tn: &TapeNet<'_>, batch: &TrainBatch) -> Var {
        let input = tape.constant(batch.dsm_input());
        let clean = tape.constant(batch.dsm_x0.clone());
        let g = tn.g(tape, input, &batch.dsm_t, &batch.dsm_t);
        tape.mean_sq_dist(g, clean)
    }

    /// `mean log(1 − d_η(x))` with `η` frozen.
    fn gan_g_on_tape(&self, tape: &mut Tape, disc: &[f64], x_est: Var) -> Result<Var> {
        let layers = self.disc.register(tape, disc, false)?;
        let logits = self.disc.forward_tape(tape, &layers, x_est);
        let rows = tape.value(logits).nrows() as f64;
        let l = tape.log_sigmoid_clamped(logits, -1.0, LOG_CLAMP);
        let sum = tape.sum_all(l);
        Ok(tape.scale(sum, 1.0 / rows))
    }

    pub fn ctm_loss(&self, state: &TrainState, batch: &TrainBatch) -> Result<(f64, Vec<f64>)> {
        let target = self.ctm_target(state, batch)?;
        loss_gradient(&self.net, &state.params, |tape, tn| {
            let sg = self.sg_on_tape(tape, state)?;
            let est = Self::x_est_on_tape(tape, tn, &sg, batch);
            let tv = tape.constant(target);
            Ok(tape.mean_sq_dist(est, tv))
        })
    }

    pub fn dsm_loss(&self, state: &TrainState, batch: &TrainBatch) -> Result<(f64, Vec<f64>)> {
        loss_gradient(&self.net, &state.params, |tape, tn| Ok(Self::dsm_on_tape(tape, tn, batch)))
    }

    /// Discriminator objective `mean log d(x_0) + mean log(1 − d(x_est))`
    /// and its gradient in `η`.
    pub fn disc_objective(&self, disc: &[f64], real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let layers = self.disc.register(&mut tape, disc, true)?;
        let mut terms = Vec::new();
        for (x, sign) in [(real, 1.0), (fake, -1.0)] {
            let xv = tape.constant(x.to_owned());
            let logits = self.disc.forward_tape(&mut tape, &layers, xv);
            let l = tape.log_sigmoid_clamped(logits, sign, LOG_CLAMP);
            let sum = tape.sum_all(l);
            terms.push(tape.scale(sum, 1.0 / x.nrows() as f64));
        }
        let root = tape.add(terms[0], terms[1]);
        let value = tape.scalar(root);
        tape.backward(root);
        let grad = self.disc.collect_grad(&tape, &layers);
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(CtmError::NonFiniteGradient { index });
        }
        Ok((value, grad))
    }

    /// Generator term `mean log(1 − d(x_est))` with its θ-gradient, and the
    /// discriminator objective with its η-gradient.
    pub fn gan_losses(&self, state: &TrainState, batch: &TrainBatch) -> Result<GanTerms> {
        let mut fake = None;
        let (gen, grad_theta) = loss_gradient(&self.net, &state.params, |tape, tn| {
            let sg = self.sg_on_tape(tape, state)?;
            let est = Self::x_est_on_tape(tape, tn, &sg, batch);
            fake = Some(tape.value(est).clone());
            self.gan_g_on_tape(tape, &state.disc, est)
        })?;
        let fake = fake.expect("closure ran");
        let (disc, grad_disc) = self.disc_objective(&state.disc, batch.x0.view(), fake.view())?;
        Ok(GanTerms {
            generator: gen,
            discriminator: disc,
            grad_theta,
            grad_disc,
        })
    }

    /// `ctm + λ_DSM·dsm + λ_GAN·gan_g` with one reverse pass for θ, and the
    /// discriminator objective with its own pass for η.
    pub fn total_loss(&self, state: &TrainState, batch: &TrainBatch) -> Result<LossEval> {
        let lambda_gan = self.cfg.lambda_gan_at(state.iteration);
        let lambda_dsm = self.cfg.lambda_dsm;
        let target = self.ctm_target(state, batch)?;
        let mut parts = (0.0, 0.0, 0.0);
        let mut fake = None;
        let (total, grad_theta) = loss_gradient(&self.net, &state.params, |tape, tn| {
            let sg = self.sg_on_tape(tape, state)?;
            let est = Self::x_est_on_tape(tape, tn, &sg, batch);
            fake = Some(tape.value(est).clone());
            let tv = tape.constant(target);
            let ctm = tape.mean_sq_dist(est, tv);
            let dsm = Self::dsm_on_tape(tape, tn, batch);
            parts.0 = tape.scalar(ctm);
            parts.1 = tape.scalar(dsm);
            let weighted = tape.scale(dsm, lambda_dsm);
            let mut root = tape.add(ctm, weighted);
            if lambda_gan > 0.0 {
                let g = self.gan_g_on_tape(tape, &state.disc, est)?;
                parts.2 = tape.scalar(g);
                let wg = tape.scale(g, lambda_gan);
                root = tape.add(root, wg);
            }
            Ok(root)
        })?;
        let fake = fake.expect("closure ran");
        let (gan_d, grad_disc) = if self.gan_active(state.iteration) {
            self.disc_objective(&state.disc, batch.x0.view(), fake.view())?
        } else {
            (self.disc_value(&state.disc, batch.x0.view(), fake.view())?, vec![0.0; state.disc.len()])
        };
        if lambda_gan == 0.0 {
            parts.2 = self.generator_value(&state.disc, fake.view())?;
        }
        Ok(LossEval {
            breakdown: LossBreakdown {
                ctm: parts.0,
                dsm: parts.1,
                gan_g: parts.2,
                gan_d,
                lambda_dsm,
                lambda_gan,
                total,
            },
            grad_theta,
            grad_disc,
        })
    }

    /// η is trained only once the warm-up is over and λ_GAN > 0.
    pub fn gan_active(&self, iteration: u64) -> bool {
        iteration >= self.cfg.warmup() && self.cfg.lambda_gan > 0.0
    }

    fn disc_value(&self, disc: &[f64], real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<f64> {
        let mean_log = |x: ArrayView2<f64>, sign: f64| -> Result<f64> {
            let logits = self.disc.forward(disc, x)?;
            let n = logits.len() as f64;
            Ok(logits.iter().map(|z| log_sigmoid(sign * z).max(LOG_CLAMP.ln())).sum::<f64>() / n)
        };
        Ok(mean_log(real, 1.0)? + mean_log(fake, -1.0)?)
    }

    fn generator_value(&self, disc: &[f64], fake: ArrayView2<f64>) -> Result<f64> {
        let logits = self.disc.forward(disc, fake)?;
        let n = logits.len() as f64;
        Ok(logits.iter().map(|z| log_sigmoid(-z).max(LOG_CLAMP.ln())).sum::<f64>() / n)
    }

    /// One optimizer step on θ (descent) and η (ascent, after warm-up), then
    /// the EMA update. A non-finite loss, gradient or update leaves the
    /// parameters, optimizer moments and iteration untouched; the batch draw
    /// is still consumed.
    pub fn train_step(&self, state: &mut TrainState) -> Result<StepOutcome> {
        let batch = self.sample_batch(&mut state.rng);
        self.apply_batch(state, &batch)
    }

    pub fn apply_batch(&self, state: &mut TrainState, batch: &TrainBatch) -> Result<StepOutcome> {
        let eval = match self.total_loss(state, batch) {
            Ok(e) => e,
            Err(e @ (CtmError::NonFiniteGradient { .. } | CtmError::Numeric(_) | CtmError::Integration { .. })) => {
                return Ok(self.reject(state, e.to_string()));
            }
            Err(e) => return Err(e),
        };
        if !eval.breakdown.total.is_finite() {
            return Ok(self.reject(state, "non-finite loss".into()));
        }
        let (theta, opt_theta) = state.opt_theta.proposed(&state.params.weights, &eval.grad_theta, false);
        let (disc, opt_disc) = if self.gan_active(state.iteration) {
            state.opt_disc.proposed(&state.disc, &eval.grad_disc, true)
        } else {
            (state.disc.clone(), state.opt_disc.clone())
        };
        if theta.iter().chain(&disc).any(|v| !v.is_finite()) {
            return Ok(self.reject(state, "non-finite parameter update".into()));
        }
        state.params.weights = theta;
        state.opt_theta = opt_theta;
        state.disc = disc;
        state.opt_disc = opt_disc;
        state.ema.update(&state.params)?;
        state.iteration += 1;
        Ok(StepOutcome::Accepted(eval.breakdown))
    }

    fn reject(&self, state: &mut TrainState, reason: String) -> StepOutcome {
        state.incidents += 1;
        log::warn!("step {} rejected: {reason}", state.iteration);
        StepOutcome::Rejected {
            iteration: state.iteration,
            reason,
        }
    }

    /// Runs until `state.iteration` reaches `until`, calling `observe` after
    /// every accepted step. Gives up after `max_incidents` consecutive
    /// rejections.
    pub fn run<F>(&self, state: &mut TrainState, until: u64, mut observe: F) -> Result<()>
    where
        F: FnMut(&TrainState, &LossBreakdown) -> Result<()>,
    {
        const MAX_CONSECUTIVE: u32 = 20;
        let mut consecutive = 0;
        while state.iteration < until {
            match self.train_step(state)? {
                StepOutcome::Accepted(b) => {
                    consecutive = 0;
                    observe(state, &b)?;
                }
                StepOutcome::Rejected { iteration, reason } => {
                    consecutive += 1;
                    if consecutive >= MAX_CONSECUTIVE {
                        return Err(CtmError::numeric(format!(
                            "{MAX_CONSECUTIVE} consecutive rejected steps at iteration {iteration}: {reason}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GanTerms {
    pub generator: f64,
    pub discriminator: f64,
    pub grad_theta: Vec<f64>,
    pub grad_disc: Vec<f64>,
}

fn log_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// The composed CTM estimate and target for arbitrary trajectory maps:
/// `x_est = G_sg(G_θ(x_t, t, s), s, 0)` and
/// `x_target = G_sg(G_sg(y_u, u, s), s, 0)` where `y_u = Solver(x_t, t, u)`.
pub fn compose_ctm<A: TrajectoryMap, B: TrajectoryMap>(
    student: &A,
    frozen: &B,
    x_t: ArrayView2<f64>,
    y_u: ArrayView2<f64>,
    t: &[f64],
    s: &[f64],
    u: &[f64],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let zeros = vec![0.0; s.len()];
    let inner = student.map_rows(x_t, t, s)?;
    let est = frozen.map_rows(inner.view(), s, &zeros)?;
    let mid = frozen.map_rows(y_u, u, s)?;
    let target = frozen.map_rows(mid.view(), s, &zeros)?;
    Ok((est, target))
}

/// Batch mean of squared row distances.
pub fn mean_sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let rows = a.nrows().max(1) as f64;
    (&a - &b).mapv(|v| v * v).sum() / rows
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub loss: LossBreakdown,
}

pub fn write_curve_csv<W: std::io::Write>(out: &mut W, header: &str, points: &[CurvePoint]) -> Result<()> {
    writeln!(out, "# {header}")?;
    writeln!(out, "iteration,ctm,dsm,gan_g,gan_d,total")?;
    for p in points {
        let l = &p.loss;
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.iteration, l.ctm, l.dsm, l.gan_g, l.gan_d, l.total
        )?;
    }
    Ok(())
}

/// Convenience wrapper writing the curve to a file.
pub fn save_curve(path: &std::path::Path, header: &str, points: &[CurvePoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_curve_csv(&mut f, header, points)?;
    f.flush()?;
    Ok(())
}
