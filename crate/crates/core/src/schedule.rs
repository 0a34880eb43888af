//! Noise-level conventions, the ρ-spaced grid, and training-time sampling.
//!
//! Time and noise level coincide (`x_t = x_0 + t·ε`). Grids are stored in
//! descending order, `t_0 = σ_max > … > t_{N−1} = σ_min`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{CtmError, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub sigma_data: f64,
    pub n_grid: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            sigma_data: 0.5,
            n_grid: 18,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma_min, self.sigma_max, self.rho, self.sigma_data]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(CtmError::config("schedule: all values must be finite"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(CtmError::config(format!(
                "schedule.sigma_min/sigma_max: need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.rho < 1.0 {
            return Err(CtmError::config(format!("schedule.rho: need rho >= 1, got {}", self.rho)));
        }
        if self.n_grid < 2 {
            return Err(CtmError::config(format!(
                "schedule.n_grid: need at least 2 levels, got {}",
                self.n_grid
            )));
        }
        if self.sigma_data <= 0.0 {
            return Err(CtmError::config(format!(
                "schedule.sigma_data: need > 0, got {}",
                self.sigma_data
            )));
        }
        Ok(())
    }
}

/// `(σ_max^{1/ρ} + ξ(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`, with the endpoints
/// returned exactly.
pub fn time_from_fraction(cfg: &ScheduleConfig, xi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(CtmError::domain(format!("fraction must lie in [0, 1], got {xi}")));
    }
    Ok(rho_interpolate(cfg.sigma_max, cfg.sigma_min, cfg.rho, xi))
}

/// ρ-interpolation between `hi` (at ξ=0) and `lo` (at ξ=1). `lo` may be 0.
pub(crate) fn rho_interpolate(hi: f64, lo: f64, rho: f64, xi: f64) -> f64 {
    if xi == 0.0 {
        return hi;
    }
    if xi == 1.0 {
        return lo;
    }
    let a = hi.powf(1.0 / rho);
    let b = lo.powf(1.0 / rho);
    (a + xi * (b - a)).powf(rho)
}

/// `n + 1` descending times from `hi` to `lo` on the ρ-spaced restriction of
/// `[lo, hi]`. Endpoints are exact.
pub fn rho_subgrid(hi: f64, lo: f64, rho: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| rho_interpolate(hi, lo, rho, k as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.times[index]
    }
}

pub fn build_time_grid(cfg: &ScheduleConfig) -> Result<TimeGrid> {
    cfg.validate()?;
    let last = (cfg.n_grid - 1) as f64;
    let times = (0..cfg.n_grid)
        .map(|i| rho_interpolate(cfg.sigma_max, cfg.sigma_min, cfg.rho, i as f64 / last))
        .collect();
    Ok(TimeGrid { times })
}

/// Sampling schedule for an `nfe`-step run: the ρ-spaced times at fractions
/// `i/nfe` for `i < nfe`, followed by an exact 0.
pub fn sampling_times(cfg: &ScheduleConfig, nfe: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if nfe == 0 {
        return Err(CtmError::config("nfe must be at least 1"));
    }
    let mut times: Vec<f64> = (0..nfe)
        .map(|i| rho_interpolate(cfg.sigma_max, cfg.sigma_min, cfg.rho, i as f64 / nfe as f64))
        .collect();
    times.push(0.0);
    Ok(times)
}

/// Denoising-score-matching time: half the draws are log-normal
/// `exp(N(−1.2, 1.2²))` clamped to `[σ_min, σ_max]`, the other half are
/// `time_from_fraction(ξ)` with `ξ ~ U[0, 0.7]`.
pub fn sample_dsm_time(cfg: &ScheduleConfig, rng: &mut Rng) -> f64 {
    if rng.random::<bool>() {
        let z: f64 = Normal::new(-1.2, 1.2).expect("valid normal").sample(rng);
        lognormal_branch(cfg, z)
    } else {
        let xi = rng.random_range(0.0..=0.7);
        rho_interpolate(cfg.sigma_max, cfg.sigma_min, cfg.rho, xi)
    }
}

pub(crate) fn lognormal_branch(cfg: &ScheduleConfig, z: f64) -> f64 {
    z.exp().clamp(cfg.sigma_min, cfg.sigma_max)
}

/// A training triplet `s ≤ u < t`, with grid indices (larger index = smaller time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub t: f64,
    pub s: f64,
    pub u: f64,
    pub t_index: usize,
    pub s_index: usize,
    pub u_index: usize,
}

/// Enumerates every admissible `(t, s, u)` index triple once so draws are
/// uniform over them.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    grid: TimeGrid,
    admissible: Vec<(usize, usize, usize)>,
}

impl TripletSampler {
    pub fn new(grid: &TimeGrid, max_ode_steps: usize) -> Result<Self> {
        if max_ode_steps < 1 {
            return Err(CtmError::config("max_ode_steps must be at least 1"));
        }
        if grid.len() < 2 {
            return Err(CtmError::config("triplet sampling needs at least two grid levels"));
        }
        let n = grid.len();
        let mut admissible = Vec::new();
        for ti in 0..n {
            for si in ti + 1..n {
                for ui in ti + 1..=si {
                    if ui - ti <= max_ode_steps {
                        admissible.push((ti, si, ui));
                    }
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            admissible,
        })
    }

    pub fn admissible(&self) -> &[(usize, usize, usize)] {
        &self.admissible
    }

    pub fn sample(&self, rng: &mut Rng) -> Triplet {
        let (ti, si, ui) = self.admissible[rng.random_range(0..self.admissible.len())];
        Triplet {
            t: self.grid.get(ti),
            s: self.grid.get(si),
            u: self.grid.get(ui),
            t_index: ti,
            s_index: si,
            u_index: ui,
        }
    }
}

pub fn sample_training_triplet(
    grid: &TimeGrid,
    max_ode_steps: usize,
    rng: &mut Rng,
) -> Result<Triplet> {
    Ok(TripletSampler::new(grid, max_ode_steps)?.sample(rng))
}

/// Standard normal draw; shared so every module consumes randomness the same way.
pub(crate) fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
