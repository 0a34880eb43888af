//! PF ODE and reverse-SDE integrators over any denoiser.
//!
//! The empirical PF ODE is `dx/dt = (x − D(x, t))/t`. Intermediate times
//! always come from the ρ-spaced restriction of the integration interval.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use crate::schedule::{rho_subgrid, standard_normal, ScheduleConfig};
use crate::{CtmError, Result, Rng};

/// Anything that can produce `D(x, t)` row-wise.
pub trait Denoiser {
    fn dim(&self) -> usize;

    /// Row `i` of the result is `D(x_i, t_i)`.
    fn denoise_rows(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>>;

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.denoise_rows(view, &[t])?.into_raw_vec_and_offset().0)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn denoise_rows(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        (**self).denoise_rows(x, t)
    }
}

/// Adapts a per-point closure to [`Denoiser`].
pub struct FnDenoiser<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> FnDenoiser<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> Denoiser for FnDenoiser<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise_rows(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (row, mut o)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let v = (self.f)(&row.to_vec(), t[i]);
            o.iter_mut().zip(v).for_each(|(a, b)| *a = b);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Heun,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Denoiser evaluations.
    pub nfe: usize,
}

fn euler_from(x: &[f64], d: &[f64], t: f64, s: f64) -> Vec<f64> {
    let r = s / t;
    x.iter().zip(d).map(|(xi, di)| r * xi + (1.0 - r) * di).collect()
}

/// One step from `t` to `s`. Returns the new state and the number of
/// denoiser calls used.
pub fn solver_step_counted<D: Denoiser + ?Sized>(
    method: Method,
    den: &D,
    x: &[f64],
    t: f64,
    s: f64,
) -> Result<(Vec<f64>, usize)> {
    if !(t > 0.0 && s >= 0.0 && s <= t) {
        return Err(CtmError::domain(format!("need t > 0 and 0 <= s <= t, got t={t}, s={s}")));
    }
    if s == t {
        return Ok((x.to_vec(), 0));
    }
    let d_t = den.denoise(x, t)?;
    let x_euler = euler_from(x, &d_t, t, s);
    match method {
        Method::Euler => Ok((x_euler, 1)),
        Method::Heun => {
            if s == 0.0 {
                return Err(CtmError::domain("Heun step onto s = 0 divides by s; use Euler"));
            }
            let d_s = den.denoise(&x_euler, s)?;
            let half = 0.5 * (t - s);
            let out = x
                .iter()
                .zip(&d_t)
                .zip(x_euler.iter().zip(&d_s))
                .map(|((xi, dt), (xe, ds))| xi - half * ((xi - dt) / t + (xe - ds) / s))
                .collect();
            Ok((out, 2))
        }
    }
}

pub fn solver_step<D: Denoiser + ?Sized>(method: Method, den: &D, x: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
    Ok(solver_step_counted(method, den, x, t, s)?.0)
}

/// Integrates from `t` down to `s` over `n_steps` ρ-spaced sub-intervals
/// (ρ from the default schedule). A Heun step that would land on `s = 0`
/// is taken as an Euler step.
pub fn solve_ode<D: Denoiser + ?Sized>(
    method: Method,
    den: &D,
    x: &[f64],
    t: f64,
    s: f64,
    n_steps: usize,
) -> Result<(Vec<f64>, SolveTrace)> {
    solve_ode_rho(method, den, x, t, s, n_steps, ScheduleConfig::default().rho)
}

pub fn solve_ode_rho<D: Denoiser + ?Sized>(
    method: Method,
    den: &D,
    x: &[f64],
    t: f64,
    s: f64,
    n_steps: usize,
    rho: f64,
) -> Result<(Vec<f64>, SolveTrace)> {
    if !(t > s && s >= 0.0) {
        return Err(CtmError::domain(format!("need t > s >= 0, got t={t}, s={s}")));
    }
    if n_steps == 0 {
        return Err(CtmError::config("n_steps must be at least 1"));
    }
    let times = rho_subgrid(t, s, rho, n_steps);
    let mut trace = SolveTrace {
        times: vec![t],
        states: vec![x.to_vec()],
        nfe: 0,
    };
    let mut state = x.to_vec();
    for w in times.windows(2) {
        let (hi, lo) = (w[0], w[1]);
        let m = if method == Method::Heun && lo == 0.0 { Method::Euler } else { method };
        let (next, used) = solver_step_counted(m, den, &state, hi, lo)?;
        trace.nfe += used;
        if next.iter().any(|v| !v.is_finite()) {
            trace.times.push(lo);
            trace.states.push(next);
            return Err(CtmError::Integration {
                time: lo,
                reason: "non-finite state".into(),
                trace: Box::new(trace),
            });
        }
        state = next;
        trace.times.push(lo);
        trace.states.push(state.clone());
    }
    Ok((state, trace))
}

/// Row-batched variant of [`solve_ode`]: row `i` is integrated from `t[i]`
/// to `s[i]` in `steps[i]` sub-steps (rows with `t[i] == s[i]` are left
/// untouched). Denoiser calls are batched over rows active at each step.
/// Returns the states and the total number of row-evaluations.
pub fn solve_rows<D: Denoiser + ?Sized>(
    method: Method,
    den: &D,
    x: ArrayView2<f64>,
    t: &[f64],
    s: &[f64],
    steps: &[usize],
    rho: f64,
) -> Result<(Array2<f64>, usize)> {
    let n = x.nrows();
    let mut state = x.to_owned();
    // Rows usually share (t, s), so each distinct sub-grid is built once.
    let mut distinct: HashMap<(u64, u64, usize), usize> = HashMap::new();
    let mut grids: Vec<Vec<f64>> = Vec::new();
    let row_grid: Vec<usize> = (0..n)
        .map(|i| {
            *distinct.entry((t[i].to_bits(), s[i].to_bits(), steps[i])).or_insert_with(|| {
                grids.push(if t[i] == s[i] {
                    vec![t[i]]
                } else {
                    rho_subgrid(t[i], s[i], rho, steps[i].max(1))
                });
                grids.len() - 1
            })
        })
        .collect();
    let max_steps = grids.iter().map(|g| g.len() - 1).max().unwrap_or(0);
    let mut evals = 0;
    for k in 0..max_steps {
        let active: Vec<usize> = (0..n).filter(|&i| k + 1 < grids[row_grid[i]].len()).collect();
        if active.is_empty() {
            break;
        }
        let hi: Vec<f64> = active.iter().map(|&i| grids[row_grid[i]][k]).collect();
        let lo: Vec<f64> = active.iter().map(|&i| grids[row_grid[i]][k + 1]).collect();
        let xa = state.select(ndarray::Axis(0), &active);
        let d_hi = den.denoise_rows(xa.view(), &hi)?;
        evals += active.len();
        let mut xe = xa.clone();
        for (r, mut row) in xe.rows_mut().into_iter().enumerate() {
            let ratio = lo[r] / hi[r];
            for (c, v) in row.iter_mut().enumerate() {
                *v = ratio * *v + (1.0 - ratio) * d_hi[[r, c]];
            }
        }
        let next = if method == Method::Heun {
            let heun_rows: Vec<usize> = (0..active.len()).filter(|&r| lo[r] > 0.0).collect();
            let mut next = xe.clone();
            if !heun_rows.is_empty() {
                let xe_h = xe.select(ndarray::Axis(0), &heun_rows);
                let lo_h: Vec<f64> = heun_rows.iter().map(|&r| lo[r]).collect();
                let d_lo = den.denoise_rows(xe_h.view(), &lo_h)?;
                evals += heun_rows.len();
                for (j, &r) in heun_rows.iter().enumerate() {
                    let (th, sl) = (hi[r], lo[r]);
                    let half = 0.5 * (th - sl);
                    for c in 0..xa.ncols() {
                        let x0 = xa[[r, c]];
                        let slope_t = (x0 - d_hi[[r, c]]) / th;
                        let slope_s = (xe_h[[j, c]] - d_lo[[j, c]]) / sl;
                        next[[r, c]] = x0 - half * (slope_t + slope_s);
                    }
                }
            }
            next
        } else {
            xe
        };
        for (r, &i) in active.iter().enumerate() {
            for c in 0..state.ncols() {
                let v = next[[r, c]];
                if !v.is_finite() {
                    return Err(CtmError::Integration {
                        time: lo[r],
                        reason: format!("non-finite state in row {i}"),
                        trace: Box::default(),
                    });
                }
                state[[i, c]] = v;
            }
        }
    }
    Ok((state, evals))
}

/// Fine-grid Heun integration standing in for the exact teacher flow.
///
/// Density is `factor` sub-steps per interval of the training grid
/// (measured in ρ-space), never fewer than `min_steps`. The default density
/// keeps the single-Gaussian error below 1e-6 relative over the full
/// `[0, σ_max]` range; [`ReferenceSolver::training`] is the cheaper teacher
/// used inside the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSolver {
    pub schedule: ScheduleConfig,
    pub factor: usize,
    pub min_steps: usize,
}

impl Default for ReferenceSolver {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            factor: 600,
            min_steps: 20,
        }
    }
}

impl ReferenceSolver {
    /// Ten sub-steps per grid interval.
    pub fn training(schedule: ScheduleConfig) -> Self {
        Self {
            schedule,
            factor: 10,
            min_steps: 20,
        }
    }

    /// Number of sub-steps used between `t` and `s`.
    pub fn steps_between(&self, t: f64, s: f64) -> usize {
        let cfg = &self.schedule;
        let inv = 1.0 / cfg.rho;
        let full = cfg.sigma_max.powf(inv) - cfg.sigma_min.powf(inv);
        let span = t.powf(inv) - s.powf(inv);
        let intervals = (cfg.n_grid - 1) as f64 * span / full;
        ((self.factor as f64 * intervals).ceil() as usize).max(self.min_steps)
    }

    pub fn solve<D: Denoiser + ?Sized>(&self, den: &D, x: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
        if !(t >= s && s >= 0.0) {
            return Err(CtmError::domain(format!("need t >= s >= 0, got t={t}, s={s}")));
        }
        if t == s {
            return Ok(x.to_vec());
        }
        let n = self.steps_between(t, s);
        Ok(solve_ode_rho(Method::Heun, den, x, t, s, n, self.schedule.rho)?.0)
    }

    pub fn solve_rows<D: Denoiser + ?Sized>(
        &self,
        den: &D,
        x: ArrayView2<f64>,
        t: &[f64],
        s: &[f64],
    ) -> Result<Array2<f64>> {
        let steps: Vec<usize> = t.iter().zip(s).map(|(a, b)| self.steps_between(*a, *b)).collect();
        Ok(solve_rows(Method::Heun, den, x, t, s, &steps, self.schedule.rho)?.0)
    }
}

/// High-accuracy stand-in for the exact teacher solution from `t` to `s`.
pub fn reference_solution<D: Denoiser + ?Sized>(den: &D, x: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
    ReferenceSolver::default().solve(den, x, t, s)
}

/// Reverse-SDE Euler–Maruyama step from `t` to `t − dt` with an explicit
/// standard-normal draw `z`.
pub fn sde_step_with_noise(score: &[f64], x: &[f64], t: f64, dt: f64, z: &[f64]) -> Vec<f64> {
    let noise_std = (2.0 * t * dt).sqrt();
    x.iter()
        .zip(score)
        .zip(z)
        .map(|((xi, si), zi)| xi + 2.0 * t * dt * si + noise_std * zi)
        .collect()
}

pub fn sde_euler_maruyama_step<F>(score_fn: F, x: &[f64], t: f64, dt: f64, rng: &mut Rng) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>>,
{
    if !(t > dt && dt > 0.0) {
        return Err(CtmError::domain(format!("need t > dt > 0, got t={t}, dt={dt}")));
    }
    let score = score_fn(x, t)?;
    let z: Vec<f64> = (0..x.len()).map(|_| standard_normal(rng)).collect();
    Ok(sde_step_with_noise(&score, x, t, dt, &z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    /// Fitted slope of −log(error) against log(steps); `None` when saturated.
    pub order: Option<f64>,
    pub step_counts: Vec<usize>,
    pub errors: Vec<f64>,
    /// All errors at machine-noise level.
    pub saturated: bool,
}

const SATURATION_LEVEL: f64 = 1e-13;

/// Least-squares slope of `log(error)` against `log(steps)`, negated.
pub fn fit_order(step_counts: &[usize], errors: &[f64]) -> Result<OrderEstimate> {
    if step_counts.len() != errors.len() || step_counts.len() < 2 {
        return Err(CtmError::DegenerateFit(format!(
            "need at least two (steps, error) pairs, got {} / {}",
            step_counts.len(),
            errors.len()
        )));
    }
    if errors.iter().all(|e| *e < SATURATION_LEVEL) {
        return Ok(OrderEstimate {
            order: None,
            step_counts: step_counts.to_vec(),
            errors: errors.to_vec(),
            saturated: true,
        });
    }
    if errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(CtmError::DegenerateFit(format!("errors must be positive and finite: {errors:?}")));
    }
    let xs: Vec<f64> = step_counts.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CtmError::DegenerateFit(format!("step counts are all equal: {step_counts:?}")));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(OrderEstimate {
        order: Some(-sxy / sxx),
        step_counts: step_counts.to_vec(),
        errors: errors.to_vec(),
        saturated: false,
    })
}

/// Empirical global order of `method` from `t` to `s` against a known
/// exact endpoint.
pub fn convergence_order_probe<D: Denoiser + ?Sized>(
    method: Method,
    den: &D,
    exact: &[f64],
    x: &[f64],
    t: f64,
    s: f64,
    step_counts: &[usize],
) -> Result<OrderEstimate> {
    let mut errors = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let (y, _) = solve_ode(method, den, x, t, s, n)?;
        errors.push(max_abs_diff(&y, exact));
    }
    fit_order(step_counts, &errors)
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_transition_single_gaussian, GaussianMixture};
    use crate::rng_for;

    fn normal() -> GaussianMixture {
        GaussianMixture::standard_normal(1)
    }

    #[test]
    fn euler_and_heun_hand_values() {
        let m = normal();
        let e = solver_step(Method::Euler, &m, &[2.0], 1.0, 0.5).unwrap()[0];
        assert!((e - 1.5).abs() < 1e-15);
        let h = solver_step(Method::Heun, &m, &[2.0], 1.0, 0.5).unwrap()[0];
        assert!((h - 1.6).abs() < 1e-15);
    }

    #[test]
    fn zero_length_step_is_identity() {
        let (y, nfe) = solver_step_counted(Method::Euler, &normal(), &[2.0], 0.7, 0.7).unwrap();
        assert_eq!((y, nfe), (vec![2.0], 0));
    }

    #[test]
    fn heun_onto_zero_is_rejected() {
        assert!(matches!(
            solver_step(Method::Heun, &normal(), &[2.0], 1.0, 0.0),
            Err(CtmError::Domain(_))
        ));
        assert!(solver_step(Method::Euler, &normal(), &[2.0], 1.0, 0.0).is_ok());
    }

    #[test]
    fn single_step_solve_is_solver_step() {
        let m = normal();
        for method in [Method::Euler, Method::Heun] {
            let (y, trace) = solve_ode(method, &m, &[2.0], 1.0, 0.5, 1).unwrap();
            assert_eq!(y, solver_step(method, &m, &[2.0], 1.0, 0.5).unwrap());
            assert_eq!(trace.times, vec![1.0, 0.5]);
        }
    }

    #[test]
    fn heun_solve_matches_closed_form() {
        let (y, _) = solve_ode(Method::Heun, &normal(), &[2.0], 1.0, 0.002, 100).unwrap();
        let exact = exact_transition_single_gaussian(&[0.0], 1.0, &[2.0], 1.0, 0.002);
        assert!((y[0] - exact[0]).abs() < 1e-4);
    }

    #[test]
    fn mixture_heun_self_consistency() {
        let m = GaussianMixture::symmetric_pair(1.0, 0.2).unwrap();
        for x0 in [-1.3, 0.4] {
            let a = solve_ode(Method::Heun, &m, &[x0], 1.0, 0.002, 200).unwrap().0;
            let b = solve_ode(Method::Heun, &m, &[x0], 1.0, 0.002, 400).unwrap().0;
            assert!((a[0] - b[0]).abs() < 1e-5, "{x0}: {} vs {}", a[0], b[0]);
        }
    }

    #[test]
    fn mixture_heun_full_range_gap() {
        // Over the whole schedule the 200/400 gap sits near 1e-4; recorded
        // here so regressions in step placement show up.
        let m = GaussianMixture::symmetric_pair(1.0, 0.2).unwrap();
        for x0 in [-52.0, 16.0, 100.0] {
            let a = solve_ode(Method::Heun, &m, &[x0], 80.0, 0.002, 200).unwrap().0;
            let b = solve_ode(Method::Heun, &m, &[x0], 80.0, 0.002, 400).unwrap().0;
            assert!((a[0] - b[0]).abs() < 2e-4, "{x0}: {} vs {}", a[0], b[0]);
        }
    }

    #[test]
    fn nfe_accounting() {
        let m = normal();
        let (_, tr) = solve_ode(Method::Euler, &m, &[1.0], 3.0, 0.1, 7).unwrap();
        assert_eq!(tr.nfe, 7);
        let (_, tr) = solve_ode(Method::Heun, &m, &[1.0], 3.0, 0.1, 7).unwrap();
        assert_eq!(tr.nfe, 14);
        let (_, tr) = solve_ode(Method::Heun, &m, &[1.0], 3.0, 0.0, 7).unwrap();
        assert_eq!(tr.nfe, 13);
        assert!(tr.times.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_finite_state_reports_trace() {
        let bad = FnDenoiser::new(1, |_x: &[f64], t: f64| vec![if t < 0.5 { f64::NAN } else { 0.0 }]);
        match solve_ode(Method::Euler, &bad, &[1.0], 1.0, 0.1, 4) {
            Err(CtmError::Integration { trace, .. }) => assert!(trace.times.len() >= 2),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn reference_solution_accuracy() {
        let m = normal();
        for (t, s) in [(80.0, 0.0), (1.0, 0.0), (5.0, 0.3), (0.5, 0.002)] {
            let y = reference_solution(&m, &[2.0], t, s).unwrap();
            let exact = exact_transition_single_gaussian(&[0.0], 1.0, &[2.0], t, s);
            assert!(((y[0] - exact[0]) / exact[0]).abs() < 1e-6, "({t},{s}): {} vs {}", y[0], exact[0]);
        }
        assert_eq!(reference_solution(&m, &[2.0], 1.0, 1.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn reference_solution_self_convergence() {
        let m = GaussianMixture::symmetric_pair(1.0, 0.2).unwrap();
        let base = ReferenceSolver::default();
        let fine = ReferenceSolver {
            factor: 2 * base.factor,
            min_steps: 2 * base.min_steps,
            ..base
        };
        for (x0, t, s) in [(0.7, 1.0, 0.0), (-3.0, 5.0, 0.5), (12.0, 80.0, 0.002)] {
            let a = base.solve(&m, &[x0], t, s).unwrap()[0];
            let b = fine.solve(&m, &[x0], t, s).unwrap()[0];
            assert!((a - b).abs() < 1e-7, "({x0},{t},{s}): {a} vs {b}");
        }
    }

    #[test]
    fn batched_rows_match_single_solves() {
        let m = GaussianMixture::symmetric_pair(1.0, 0.2).unwrap();
        let x = ndarray::array![[0.3], [-2.0], [5.0], [1.0]];
        let t = [1.0, 3.0, 10.0, 0.5];
        let s = [0.1, 0.002, 0.0, 0.5];
        let steps = [3, 5, 4, 2];
        let (out, _) = solve_rows(Method::Heun, &m, x.view(), &t, &s, &steps, 7.0).unwrap();
        for i in 0..4 {
            let expect = if t[i] == s[i] {
                vec![x[[i, 0]]]
            } else {
                solve_ode(Method::Heun, &m, &[x[[i, 0]]], t[i], s[i], steps[i]).unwrap().0
            };
            assert!((out[[i, 0]] - expect[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn sde_step_examples() {
        let m = normal();
        let score = m.score_t(&[2.0], 1.0).unwrap();
        assert!((sde_step_with_noise(&score, &[2.0], 1.0, 0.5, &[0.0])[0] - 1.0).abs() < 1e-15);
        assert_eq!(sde_step_with_noise(&[0.0], &[2.0], 1.0, 0.5, &[0.0]), vec![2.0]);
        // Unit draw shifts the state by exactly √(2·t·dt) = 1.
        assert!((sde_step_with_noise(&[0.0], &[2.0], 1.0, 0.5, &[1.0])[0] - 3.0).abs() < 1e-15);
        let mut rng = rng_for(0, 0);
        assert!(sde_euler_maruyama_step(|x, t| m.score_t(x, t), &[2.0], 0.5, 0.5, &mut rng).is_err());
    }

    #[test]
    fn convergence_orders() {
        let m = normal();
        let (x, t, s) = ([2.0], 2.0, 0.2);
        let exact = exact_transition_single_gaussian(&[0.0], 1.0, &x, t, s);
        let counts = [8, 16, 32, 64, 128];
        let euler = convergence_order_probe(Method::Euler, &m, &exact, &x, t, s, &counts).unwrap();
        let heun = convergence_order_probe(Method::Heun, &m, &exact, &x, t, s, &counts).unwrap();
        let e = euler.order.unwrap();
        let h = heun.order.unwrap();
        assert!((0.8..=1.2).contains(&e), "euler {e}");
        assert!((1.8..=2.2).contains(&h), "heun {h}");
        // Heun error never grows as the grid is refined.
        assert!(heun.errors.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn exact_map_saturates_probe() {
        let exact = exact_transition_single_gaussian(&[0.0], 1.0, &[2.0], 2.0, 0.2);
        let errs: Vec<f64> = [4usize, 8, 16]
            .iter()
            .map(|_| max_abs_diff(&exact_transition_single_gaussian(&[0.0], 1.0, &[2.0], 2.0, 0.2), &exact))
            .collect();
        let fit = fit_order(&[4, 8, 16], &errs).unwrap();
        assert!(fit.saturated && fit.order.is_none());
        assert!(matches!(fit_order(&[4], &[0.1]), Err(CtmError::DegenerateFit(_))));
        assert!(matches!(fit_order(&[4, 4], &[0.1, 0.2]), Err(CtmError::DegenerateFit(_))));
    }

    #[test]
    fn flow_semigroup_converges() {
        let m = GaussianMixture::symmetric_pair(1.0, 0.2).unwrap();
        let x = [0.8];
        let direct = solve_ode(Method::Heun, &m, &x, 3.0, 0.05, 400).unwrap().0;
        let mut prev = f64::INFINITY;
        for n in [10, 40, 160] {
            let mid = solve_ode(Method::Heun, &m, &x, 3.0, 0.6, n).unwrap().0;
            let end = solve_ode(Method::Heun, &m, &mid, 0.6, 0.05, n).unwrap().0;
            let gap = (end[0] - direct[0]).abs();
            assert!(gap < prev, "{n}: {gap}");
            prev = gap;
        }
        assert!(prev < 1e-6);
    }
}
