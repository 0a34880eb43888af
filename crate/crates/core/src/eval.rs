//! Sample-quality distances, PF ODE likelihoods, variance probes and the
//! γ/NFE error-accumulation table.
//!
//! W1 stands in for FID at this scale; the numbers are not comparable to
//! image-benchmark FIDs.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use crate::oracle::GaussianMixture;
use crate::sampling::{gamma_sample, prior_samples, SamplerSpec, SamplerVariant, TrajectoryMap};
use crate::schedule::{rho_subgrid, standard_normal, ScheduleConfig};
use crate::solvers::SolveTrace;
use crate::{rng_for, CtmError, Result, Rng};

pub mod checks;

/// Seed used when two samples of different size must be matched.
pub const RESAMPLE_SEED: u64 = 0x5731;

/// Number of random directions added to the coordinate axes for sliced W1.
pub const SLICED_PROJECTIONS: usize = 32;

/// 1D W1 between empirical distributions via the sorted coupling. Unequal
/// sizes are matched by subsampling the larger set without replacement,
/// seeded with [`RESAMPLE_SEED`].
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CtmError::domain("W1 needs non-empty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CtmError::numeric("W1 input contains non-finite values"));
    }
    let (mut x, mut y) = (a.to_vec(), b.to_vec());
    if x.len() != y.len() {
        let n = x.len().min(y.len());
        let mut rng = rng_for(RESAMPLE_SEED, 0);
        let shrink = |v: &mut Vec<f64>, rng: &mut Rng| {
            let mut idx = sample_indices(rng, v.len(), n).into_vec();
            idx.sort_unstable();
            *v = idx.into_iter().map(|i| v[i]).collect();
        };
        if x.len() > n {
            shrink(&mut x, &mut rng);
        } else {
            shrink(&mut y, &mut rng);
        }
    }
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64)
}

/// W1 per coordinate.
pub fn coordinate_w1(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_cols(a, b)?;
    (0..a.ncols())
        .map(|d| wasserstein1(&a.column(d).to_vec(), &b.column(d).to_vec()))
        .collect()
}

/// Mean 1D W1 over the coordinate axes plus [`SLICED_PROJECTIONS`] fixed
/// random unit directions. Equals plain W1 in one dimension.
pub fn sliced_w1(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_cols(a, b)?;
    let d = a.ncols();
    if d == 1 {
        return wasserstein1(&a.column(0).to_vec(), &b.column(0).to_vec());
    }
    let mut dirs: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rng = rng_for(RESAMPLE_SEED, 1);
    for _ in 0..SLICED_PROJECTIONS {
        let v: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        dirs.push(v.into_iter().map(|c| c / norm).collect());
    }
    let project = |m: ArrayView2<f64>, dir: &[f64]| -> Vec<f64> {
        m.rows().into_iter().map(|r| r.iter().zip(dir).map(|(x, w)| x * w).sum()).collect()
    };
    let mut acc = 0.0;
    for dir in &dirs {
        acc += wasserstein1(&project(a, dir), &project(b, dir))?;
    }
    Ok(acc / dirs.len() as f64)
}

fn check_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(CtmError::Shape {
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    Ok(())
}

/// `−log p(x)` in nats by integrating the augmented PF ODE
/// `dx/dt = −t·score(x, t)`, `d(log p)/dt = −div` from `t_min` up to `t_max`
/// (Heun on a ρ-spaced grid), then adding the `N(0, t_max² I)` prior
/// log-density. The divergence is taken by central differences with
/// `h = 1e-4·(1 + |x_i|)` per coordinate.
pub fn nll_pf_ode<S>(score: S, x: &[f64], schedule: &ScheduleConfig, n_steps: usize) -> Result<f64>
where
    S: Fn(&[f64], f64) -> Result<Vec<f64>>,
{
    let d = x.len();
    if d == 0 || d > 4 {
        return Err(CtmError::Unsupported(format!("exact divergence supports 1 to 4 dimensions, got {d}")));
    }
    if n_steps < 100 {
        return Err(CtmError::config(format!("nll needs at least 100 steps, got {n_steps}")));
    }
    let velocity = |y: &[f64], t: f64| -> Result<Vec<f64>> { Ok(score(y, t)?.into_iter().map(|s| -t * s).collect()) };
    let divergence = |y: &[f64], t: f64| -> Result<f64> {
        let mut div = 0.0;
        let mut probe = y.to_vec();
        for i in 0..d {
            let h = 1e-4 * (1.0 + y[i].abs());
            probe[i] = y[i] + h;
            let up = velocity(&probe, t)?[i];
            probe[i] = y[i] - h;
            let down = velocity(&probe, t)?[i];
            probe[i] = y[i];
            div += (up - down) / (2.0 * h);
        }
        Ok(div)
    };
    let mut times = rho_subgrid(schedule.sigma_max, schedule.sigma_min, schedule.rho, n_steps);
    times.reverse();
    let mut state = x.to_vec();
    let mut integral = 0.0;
    let fail = |time: f64, state: &[f64]| CtmError::Integration {
        time,
        reason: "non-finite divergence or state in likelihood integration".into(),
        trace: Box::new(SolveTrace {
            times: vec![time],
            states: vec![state.to_vec()],
            nfe: 0,
        }),
    };
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let v0 = velocity(&state, t0)?;
        let div0 = divergence(&state, t0)?;
        let pred: Vec<f64> = state.iter().zip(&v0).map(|(s, v)| s + h * v).collect();
        let v1 = velocity(&pred, t1)?;
        let div1 = divergence(&pred, t1)?;
        state = state.iter().zip(v0.iter().zip(&v1)).map(|(s, (a, b))| s + 0.5 * h * (a + b)).collect();
        integral += 0.5 * h * (div0 + div1);
        if !integral.is_finite() || state.iter().any(|v| !v.is_finite()) {
            return Err(fail(t1, &state));
        }
    }
    let t_max = schedule.sigma_max;
    let sq: f64 = state.iter().map(|v| v * v).sum();
    let log_prior = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * t_max * t_max).ln() - sq / (2.0 * t_max * t_max);
    Ok(-(log_prior + integral))
}

/// Oracle score as a closure for [`nll_pf_ode`].
pub fn oracle_score(mix: &GaussianMixture) -> impl Fn(&[f64], f64) -> Result<Vec<f64>> + '_ {
    move |x, t| mix.score_t(x, t)
}

/// Score implied by any denoiser: `(D(x, t) − x)/t²`.
pub fn denoiser_score<D: crate::solvers::Denoiser>(den: &D) -> impl Fn(&[f64], f64) -> Result<Vec<f64>> + '_ {
    move |x, t| {
        let d = den.denoise(x, t)?;
        Ok(d.iter().zip(x).map(|(dv, xv)| (dv - xv) / (t * t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceStep {
    pub step: usize,
    pub t: f64,
    pub var: f64,
    pub stderr: f64,
    pub expected: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl VarianceStep {
    /// Bound check with `sigmas` Monte-Carlo standard errors of slack; at
    /// γ = 1 the lower bound is the noise variance itself, so an exact
    /// comparison would fail half the time on sampling noise alone.
    pub fn within_bounds(&self, sigmas: f64) -> bool {
        let slack = sigmas * self.stderr;
        self.lower_bound - slack <= self.var && self.var <= self.upper_bound + slack
    }

    pub fn matches_expected(&self, sigmas: f64) -> bool {
        (self.var - self.expected).abs() <= sigmas * self.stderr
    }
}

/// `ζ(t_n, t_{n+1}, γ) = exp(2L(t_n − √(1 − γ²)·t_{n+1}))`.
pub fn variance_factor(lipschitz: f64, t: f64, t_next: f64, gamma: f64) -> f64 {
    (2.0 * lipschitz * (t - (1.0 - gamma * gamma).sqrt() * t_next)).exp()
}

/// Sample variance and its standard error `√((m₄ − s⁴)/n)`.
pub fn variance_with_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var).max(0.0) / n).sqrt())
}

/// Runs `n_chains` γ-samplers started on-distribution at `times[0]` and
/// records the per-step variance (first coordinate) with the two-sided
/// ζ-bounds around the previous step's empirical variance.
pub fn variance_probe<G: TrajectoryMap + ?Sized>(
    g: &G,
    mix: &GaussianMixture,
    times: &[f64],
    gamma: f64,
    n_chains: usize,
    rng: &mut Rng,
) -> Result<Vec<VarianceStep>> {
    let lip = mix.single_lipschitz()?;
    if n_chains < 2 {
        return Err(CtmError::domain("variance needs at least two chains"));
    }
    let mut spec = SamplerSpec::new(gamma, times.to_vec(), SamplerVariant::CtmGamma, 0)?;
    spec.record_trace = true;
    let s0 = mix.stds()[0];
    let x0 = mix.sample_marginal(times[0], n_chains, rng);
    let run = gamma_sample(g, &spec, x0.view(), rng)?;
    let mut prev = variance_with_stderr(&x0.column(0).to_vec()).0;
    let mut out = Vec::new();
    for (n, state) in run.trace.expect("trace requested").iter().enumerate() {
        let (t, t_next) = (times[n], times[n + 1]);
        let (var, se) = variance_with_stderr(&state.column(0).to_vec());
        let g2 = if t_next > 0.0 { (gamma * t_next).powi(2) } else { 0.0 };
        let zeta = variance_factor(lip, t, if t_next > 0.0 { t_next } else { 0.0 }, gamma);
        out.push(VarianceStep {
            step: n + 1,
            t: t_next,
            var,
            stderr: se,
            expected: s0 * s0 + t_next * t_next,
            lower_bound: prev / zeta + g2,
            upper_bound: zeta * prev + g2,
        });
        prev = var;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccumulationCell {
    pub gamma: f64,
    pub nfe: usize,
    pub w1: f64,
    pub stderr: f64,
    /// One W1 value per replicate (common random numbers across cells).
    pub replicates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccumulationTable {
    pub cells: Vec<AccumulationCell>,
    /// Per γ: whether W1 is non-decreasing in NFE.
    pub monotone_in_nfe: Vec<(f64, bool)>,
}

impl AccumulationTable {
    pub fn cell(&self, gamma: f64, nfe: usize) -> Option<&AccumulationCell> {
        self.cells.iter().find(|c| c.gamma == gamma && c.nfe == nfe)
    }

    /// Mean and standard error of the paired replicate gap `W1(b) − W1(a)`.
    pub fn paired_gap(a: &AccumulationCell, b: &AccumulationCell) -> (f64, f64) {
        let d: Vec<f64> = a.replicates.iter().zip(&b.replicates).map(|(x, y)| y - x).collect();
        mean_stderr(&d)
    }
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Terminal W1-to-data for every `(γ, NFE)`. Replicate `r` uses the same
/// prior draws, data sample and noise stream in every cell.
#[allow(clippy::too_many_arguments)]
pub fn accumulation_study<G: TrajectoryMap + ?Sized>(
    g: &G,
    mix: &GaussianMixture,
    schedule: &ScheduleConfig,
    gammas: &[f64],
    nfes: &[usize],
    n_samples: usize,
    replicates: usize,
    seed: u64,
) -> Result<AccumulationTable> {
    if replicates == 0 || n_samples == 0 {
        return Err(CtmError::config("accumulation study needs samples and replicates"));
    }
    let mut cells = Vec::new();
    for &gamma in gammas {
        for &nfe in nfes {
            let times = crate::schedule::sampling_times(schedule, nfe)?;
            let spec = SamplerSpec::new(gamma, times, SamplerVariant::CtmGamma, seed)?;
            let mut reps = Vec::with_capacity(replicates);
            for r in 0..replicates {
                let mut rng = rng_for(seed, r as u64);
                let data = mix.sample_marginal(0.0, n_samples, &mut rng);
                let x_t = prior_samples(mix.dim(), schedule.sigma_max, n_samples, &mut rng);
                let run = gamma_sample(g, &spec, x_t.view(), &mut rng)?;
                reps.push(sliced_w1(run.samples.view(), data.view())?);
            }
            let (w1, stderr) = mean_stderr(&reps);
            cells.push(AccumulationCell {
                gamma,
                nfe,
                w1,
                stderr,
                replicates: reps,
            });
        }
    }
    let monotone_in_nfe = gammas
        .iter()
        .map(|&gm| {
            let row: Vec<f64> = cells.iter().filter(|c| c.gamma == gm).map(|c| c.w1).collect();
            (gm, row.windows(2).all(|w| w[1] >= w[0]))
        })
        .collect();
    Ok(AccumulationTable { cells, monotone_in_nfe })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub w1: f64,
    pub mean_error: Vec<f64>,
    pub var_error: Vec<f64>,
    pub nll: Option<f64>,
    pub nfe: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// W1 and moment errors of `samples` against `reference` draws from the data.
pub fn evaluate_samples(samples: ArrayView2<f64>, mix: &GaussianMixture, reference: ArrayView2<f64>, nfe: usize, seed: u64) -> Result<EvalReport> {
    let w1 = sliced_w1(samples, reference)?;
    let n = samples.nrows() as f64;
    let mean = samples.mean_axis(ndarray::Axis(0)).ok_or_else(|| CtmError::domain("no samples"))?;
    let var: Vec<f64> = (0..samples.ncols())
        .map(|d| samples.column(d).iter().map(|v| (v - mean[d]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
        .collect();
    let (true_mean, true_var) = (mix.mean(), mix.variance_t(0.0));
    let report = EvalReport {
        w1,
        mean_error: mean.iter().zip(&true_mean).map(|(a, b)| a - b).collect(),
        var_error: var.iter().zip(&true_var).map(|(a, b)| a - b).collect(),
        nll: None,
        nfe,
        n_samples: samples.nrows(),
        seed,
    };
    if !report.w1.is_finite() || report.mean_error.iter().chain(&report.var_error).any(|v| !v.is_finite()) {
        return Err(CtmError::numeric("evaluation produced non-finite metrics"));
    }
    Ok(report)
}

/// Fixed 17-significant-digit float formatting used by every CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_accumulation_csv<W: Write>(out: &mut W, header: &str, table: &AccumulationTable) -> Result<()> {
    writeln!(out, "# {header}")?;
    writeln!(out, "gamma,nfe,w1,stderr")?;
    for c in &table.cells {
        writeln!(out, "{},{},{},{}", fmt_f64(c.gamma), c.nfe, fmt_f64(c.w1), fmt_f64(c.stderr))?;
    }
    Ok(())
}

pub fn write_variance_csv<W: Write>(out: &mut W, header: &str, steps: &[VarianceStep]) -> Result<()> {
    writeln!(out, "# {header}")?;
    writeln!(out, "step,t,var,lower_bound,upper_bound")?;
    for s in steps {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.step,
            fmt_f64(s.t),
            fmt_f64(s.var),
            fmt_f64(s.lower_bound),
            fmt_f64(s.upper_bound)
        )?;
    }
    Ok(())
}

/// One row per sample: coordinates, then seed, γ and NFE.
pub fn write_samples_csv<W: Write>(out: &mut W, header: &str, samples: ArrayView2<f64>, seed: u64, gamma: f64, nfe: usize) -> Result<()> {
    writeln!(out, "# {header}")?;
    let cols: Vec<String> = (0..samples.ncols()).map(|d| format!("x{d}")).collect();
    writeln!(out, "{},seed,gamma,nfe", cols.join(","))?;
    for row in samples.rows() {
        let vals: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{},{seed},{},{nfe}", vals.join(","), fmt_f64(gamma))?;
    }
    Ok(())
}

/// Rows of `x` as owned points, handy for lattice evaluations.
pub fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Sup-norm error of a denoiser against the oracle on an `(x, t)` lattice
/// (1D mixtures), with the location of the worst point.
pub fn denoiser_sup_error<D: crate::solvers::Denoiser>(
    den: &D,
    mix: &GaussianMixture,
    xs: &[f64],
    ts: &[f64],
) -> Result<(f64, f64, f64)> {
    let mut worst = (0.0, f64::NAN, f64::NAN);
    for &t in ts {
        let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column");
        let got = den.denoise_rows(x.view(), &vec![t; xs.len()])?;
        for (i, &xv) in xs.iter().enumerate() {
            let e = (got[[i, 0]] - mix.denoiser_t(&[xv], t)?[0]).abs();
            if !(e <= worst.0) {
                worst = (e, xv, t);
            }
        }
    }
    Ok(worst)
}
