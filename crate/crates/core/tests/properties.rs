use ndarray::Array2;
use proptest::prelude::*;

use ctm_core::cli::RunConfig;
use ctm_core::eval::wasserstein1;
use ctm_core::model::{Architecture, Checkpoint, CtmNetwork};
use ctm_core::oracle::{exact_transition_single_gaussian, GaussianMixture};
use ctm_core::schedule::{rho_subgrid, sampling_times, time_from_fraction, ScheduleConfig};

fn samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric_on_equal_size_samples(a in samples(12), b in samples(12), c in samples(12)) {
        let ab = wasserstein1(&a, &b).unwrap();
        let ba = wasserstein1(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        let ac = wasserstein1(&a, &c).unwrap();
        let cb = wasserstein1(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn w1_of_a_shift_is_the_shift(a in samples(20), shift in -5.0f64..5.0) {
        let moved: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let w = wasserstein1(&a, &moved).unwrap();
        prop_assert!((w - shift.abs()).abs() <= 1e-9, "{} vs {}", w, shift);
    }

    #[test]
    fn big_g_is_identity_on_the_diagonal(seed in 0u64..1000, x in -50.0f64..50.0, t in 0.002f64..80.0) {
        let arch = Architecture { hidden_width: 16, depth: 2, ..Default::default() };
        let net = CtmNetwork::new(1, arch, &ScheduleConfig::default()).unwrap();
        let mut params = net.init_params(seed);
        // Random last layer too, so g is not just c_skip·x.
        let mut rng = ctm_core::rng_for(seed, 9);
        for w in params.weights.iter_mut() {
            *w += 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
        let xs = Array2::from_elem((1, 1), x);
        let out = net.big_g_forward(&params, xs.view(), &[t], &[t]).unwrap();
        prop_assert_eq!(out[[0, 0]], x);
    }

    #[test]
    fn single_gaussian_flow_composes(mu in -2.0f64..2.0, sd in 0.1f64..2.0, x in -20.0f64..20.0,
                                     a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let mut ts = [0.01 + 79.99 * a, 0.01 + 79.99 * b, 79.99 * c];
        ts.sort_by(|p, q| q.partial_cmp(p).unwrap());
        let [t, u, s] = ts;
        let via = exact_transition_single_gaussian(&[mu], sd, &exact_transition_single_gaussian(&[mu], sd, &[x], t, u), u, s);
        let direct = exact_transition_single_gaussian(&[mu], sd, &[x], t, s);
        prop_assert!((via[0] - direct[0]).abs() <= 1e-9 * (1.0 + direct[0].abs()));
    }

    #[test]
    fn oracle_denoiser_matches_score(x in -4.0f64..4.0, t in 0.01f64..10.0, offset in 0.2f64..2.0, sd in 0.1f64..1.0) {
        let mix = GaussianMixture::symmetric_pair(offset, sd).unwrap();
        let d = mix.denoiser_t(&[x], t).unwrap()[0];
        let score = mix.score_t(&[x], t).unwrap()[0];
        prop_assert!((d - (x + t * t * score)).abs() <= 1e-9 * (1.0 + x.abs()));
        let post = mix.class_posterior(&[x], t).unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rho_schedule_is_monotone(xi in 0.0f64..1.0, dxi in 1e-6f64..0.5, rho in 1.0f64..12.0) {
        let cfg = ScheduleConfig { rho, ..Default::default() };
        let hi = time_from_fraction(&cfg, xi).unwrap();
        let lo = time_from_fraction(&cfg, (xi + dxi).min(1.0)).unwrap();
        prop_assert!(lo < hi);
        prop_assert!(hi <= cfg.sigma_max && lo >= cfg.sigma_min);
    }

    #[test]
    fn sampling_and_sub_grids_descend_with_exact_ends(nfe in 1usize..64, n in 1usize..300, rho in 1.0f64..12.0) {
        let cfg = ScheduleConfig { rho, ..Default::default() };
        let times = sampling_times(&cfg, nfe).unwrap();
        prop_assert_eq!(times.len(), nfe + 1);
        prop_assert_eq!(times[0], cfg.sigma_max);
        prop_assert_eq!(*times.last().unwrap(), 0.0);
        prop_assert!(times.windows(2).all(|w| w[0] > w[1]));
        let sub = rho_subgrid(5.0, 0.1, rho, n);
        prop_assert_eq!((sub[0], sub[n]), (5.0, 0.1));
        prop_assert!(sub.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000, width in 2usize..12, iteration in 0u64..1_000_000, extra in samples(5)) {
        let arch = Architecture { hidden_width: width, depth: 2, ..Default::default() };
        let schedule = ScheduleConfig::default();
        let net = CtmNetwork::new(1, arch, &schedule).unwrap();
        let params = net.init_params(seed);
        let ema = net.init_params(seed + 1);
        let mut ck = Checkpoint::from_model(&net, &schedule, &params, &ema, iteration, seed, "0123abcd");
        ck.push_block("disc", extra);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(&back, &ck);
        let (net2, p2, e2) = back.to_model().unwrap();
        prop_assert_eq!(net2.n_params(), net.n_params());
        prop_assert_eq!((p2.weights, e2.weights), (params.weights, ema.weights));
    }

    #[test]
    fn config_hash_ignores_layout_but_not_content(seed in 0u64..1_000_000, lr in 1e-5f64..1e-2) {
        let plain = format!("seed = {seed}\n[training]\nlearning_rate = {lr:e}\n");
        let spaced = format!("# comment\n\nseed   =   {seed}\n\n[training]\n  learning_rate = {lr:e}  # trailing\n");
        let a = RunConfig::from_toml(&plain).unwrap();
        let b = RunConfig::from_toml(&spaced).unwrap();
        prop_assert_eq!(a.config_hash(), b.config_hash());
        let round = RunConfig::from_toml(&toml::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(round.config_hash(), a.config_hash());
        let other = RunConfig::from_toml(&format!("seed = {}\n", seed + 1)).unwrap();
        prop_assert_ne!(other.config_hash(), a.config_hash());
    }
}
