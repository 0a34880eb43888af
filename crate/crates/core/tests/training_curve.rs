//! DSM behaviour of λ_GAN = 0 runs: 5k iterations on the two-mode mixture
//! (about two minutes) and 20k on N(0, 1) (about five).

use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::StandardNormal;

use ctm_core::eval::{denoiser_sup_error, lattice};
use ctm_core::model::{Architecture, CtmView};
use ctm_core::oracle::GaussianMixture;
use ctm_core::rng_for;
use ctm_core::schedule::{sample_dsm_time, ScheduleConfig};
use ctm_core::training::{TrainConfig, TrainState, Trainer};

struct Run {
    trainer: Trainer,
    state: TrainState,
    dsm: Vec<f64>,
}

fn train(mix: GaussianMixture, iters: u64, width: usize) -> Run {
    let cfg = TrainConfig {
        total_iters: iters,
        lambda_gan: 0.0,
        ..Default::default()
    };
    let arch = Architecture {
        hidden_width: width,
        ..Default::default()
    };
    let trainer = Trainer::new(mix, ScheduleConfig::default(), arch, cfg).unwrap();
    let mut state = trainer.init_state(3).unwrap();
    let mut dsm = Vec::new();
    trainer
        .run(&mut state, iters, |_, b| {
            dsm.push(b.dsm);
            Ok(())
        })
        .unwrap();
    Run { trainer, state, dsm }
}

fn two_mode_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| train(GaussianMixture::symmetric_pair(1.0, 0.2).unwrap(), 5_000, 128))
}

/// Monte-Carlo value of the DSM objective at the exact denoiser, i.e.
/// `E‖x_0 − E[x_0 | x_t]‖²` under the DSM time distribution.
fn bayes_floor(mix: &GaussianMixture, n: usize) -> f64 {
    let sched = ScheduleConfig::default();
    let mut rng = rng_for(77, 0);
    let x0 = mix.sample_marginal(0.0, n, &mut rng);
    let mut total = 0.0;
    for row in x0.rows() {
        let t = sample_dsm_time(&sched, &mut rng);
        let xt: Vec<f64> = row.iter().map(|v| v + t * rng.sample::<f64, _>(StandardNormal)).collect();
        let d = mix.denoiser_t(&xt, t).unwrap();
        total += row.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    total / n as f64
}

fn tail_mean(v: &[f64], k: usize) -> f64 {
    v[v.len() - k..].iter().sum::<f64>() / k as f64
}

#[test]
fn dsm_term_settles_at_the_bayes_floor() {
    let run = two_mode_run();
    let floor = bayes_floor(&run.trainer.mixture, 200_000);
    let end = tail_mean(&run.dsm, 500);
    eprintln!("dsm: iteration 10 {:.4}, last-500 mean {end:.4}, exact-denoiser floor {floor:.4}", run.dsm[9]);
    assert!((end - floor).abs() <= 0.1 * floor, "end {end} vs floor {floor}");
}

#[test]
fn dsm_term_drops_tenfold_over_5k_steps() {
    let run = two_mode_run();
    let (start, end) = (run.dsm[9], tail_mean(&run.dsm, 100));
    assert!(end <= 0.1 * start, "dsm went {start:.4} -> {end:.4}; the exact denoiser itself scores {:.4}", bayes_floor(&run.trainer.mixture, 200_000));
}

#[test]
fn dsm_optimum_on_single_gaussian() {
    let run = train(GaussianMixture::standard_normal(1), 20_000, 64);
    let view = CtmView {
        net: &run.trainer.net,
        params: &run.state.ema.shadow,
    };
    let xs = lattice(-3.0, 3.0, 25);
    let ts: Vec<f64> = lattice(0.1f64.ln(), 5f64.ln(), 12).into_iter().map(f64::exp).collect();
    let (err, x, t) = denoiser_sup_error(&view, &GaussianMixture::standard_normal(1), &xs, &ts).unwrap();
    assert!(err <= 0.05, "sup |g - x/(1+t^2)| = {err} at x={x}, t={t}");
}
