use annealed_posterior::diagnostics::{analytic_mode_weights_1d, empirical_divergences, mode_weights, DivergenceKind, Region};
use annealed_posterior::sampler::{anneal, lmc_step, run_algorithm, warm_start, CheckpointMode};
use annealed_posterior::{Error, GaussianMixture, QuadraticPotential, SampleBatch, SamplerConfig, SmoothTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn zero_potential() -> QuadraticPotential {
    QuadraticPotential::new(vec![vec![0.0]], vec![0.0], 1.0).unwrap()
}

fn shifted_potential() -> QuadraticPotential {
    // R = (x - 1)²/2
    QuadraticPotential::new(vec![vec![1.0]], vec![1.0], 1.0).unwrap()
}

fn two_mode() -> (GaussianMixture, QuadraticPotential) {
    let prior = GaussianMixture::univariate(&[(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]).unwrap();
    let r = QuadraticPotential::new(vec![vec![1.0]], vec![3.0], 4.5).unwrap();
    (prior, r)
}

fn tv(batch: &SampleBatch, target: &GaussianMixture) -> f64 {
    empirical_divergences(batch, target, 200)
        .unwrap()
        .into_iter()
        .find(|r| r.kind == DivergenceKind::Tv)
        .unwrap()
        .value
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn lmc_step_examples() {
    assert_eq!(lmc_step(&[1.5, -2.0], &[0.0, 0.0], 0.3, &[0.0, 0.0], 0).unwrap(), vec![1.5, -2.0]);
    let x = lmc_step(&[3.0], &[-3.0], 0.1, &[0.0], 0).unwrap();
    assert!((x[0] - 2.7).abs() < 1e-15);
    let x = lmc_step(&[0.0], &[0.0], 0.5, &[2.0], 0).unwrap();
    assert!((x[0] - 2.0).abs() < 1e-15);
    match lmc_step(&[0.0], &[f64::NAN], 0.1, &[0.0], 17) {
        Err(Error::NumericalBlowup { iteration, .. }) => assert_eq!(iteration, 17),
        other => panic!("expected blowup, got {other:?}"),
    }
    assert!(lmc_step(&[0.0, 1.0], &[0.0], 0.1, &[0.0], 0).is_err());
}

#[test]
fn lmc_on_a_standard_gaussian_is_stationary() {
    // a single chain's tail spans only ~50 autocorrelation times, so the
    // tails of 200 independent chains are pooled
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tail = Vec::with_capacity(200 * 5000);
    for _ in 0..200 {
        let mut x = vec![0.0];
        for i in 0..10_000u64 {
            let noise = [StandardNormal.sample(&mut rng)];
            let drift = [-x[0]];
            x = lmc_step(&x, &drift, 0.01, &noise, i).unwrap();
            if i >= 5000 {
                tail.push(x[0]);
            }
        }
    }
    let (_, var) = moments(&tail);
    assert!((0.9..=1.1).contains(&var), "variance {var}");
}

#[test]
fn defaults_follow_the_rate() {
    let cfg = SamplerConfig::new(16.0, 100, 2.0, 10, 1);
    assert!((cfg.step_size() - 0.5).abs() < 1e-15);
    let iters: f64 = 2.0 * 16.0 / 0.5;
    assert!((cfg.stop_time() - iters.powf(0.75) * 0.5 / 16.0).abs() < 1e-14);
    assert!((cfg.warm_start_step_size(&shifted_potential()) - 0.005).abs() < 1e-15);
    assert!((cfg.warm_start_step_size(&zero_potential()) - 0.01).abs() < 1e-15);
    cfg.validate().unwrap();
}

#[test]
fn invalid_configs_name_the_field() {
    let base = SamplerConfig::new(4.0, 100, 2.0, 10, 1);
    let field = |cfg: SamplerConfig| match cfg.validate() {
        Err(Error::Config { field, .. }) => field,
        other => panic!("expected config error, got {other:?}"),
    };
    assert_eq!(field(base.clone().with_step_size(-0.1)), "step_size");
    assert_eq!(field(SamplerConfig { rate: 0.5, ..base.clone() }), "rate");
    assert_eq!(field(SamplerConfig { warm_up_iters: 0, ..base.clone() }), "warm_up_iters");
    assert_eq!(field(SamplerConfig { chains: 0, ..base.clone() }), "chains");
    assert_eq!(field(base.clone().with_stop_time(3.0)), "stop_time");
    assert_eq!(
        field(base.clone().with_stop_time(0.5).with_checkpoints(vec![0.1], CheckpointMode::Instant)),
        "checkpoint_times"
    );
    assert_eq!(
        field(base.clone().with_stop_time(0.5).with_checkpoints(vec![1.5, 1.0], CheckpointMode::Instant)),
        "checkpoint_times"
    );
    let json = r#"{"rate":4,"warm_up_iters":10,"warm_start_time":1,"chains":2,"seed":3,"step_size":0.1}"#;
    let parsed: SamplerConfig = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.step_size(), 0.1);
    assert!(serde_json::from_str::<SamplerConfig>(r#"{"rate":4,"bogus":1}"#).is_err());
}

#[test]
fn schedule_bookkeeping() {
    for (rate, delta, tws) in [(1.0, 0.01, 2.0), (4.0, 0.3, 1.5), (64.0, 1e-3, 2.0), (16.0, 0.5, 2.0)] {
        let cfg = SamplerConfig::new(rate, 10, tws, 1, 0).with_step_size(delta);
        let s = cfg.schedule();
        let tau = cfg.stop_time();
        assert!((delta * s.iterations() as f64 - rate * (tws - tau)).abs() <= delta);
        assert!((s.target_time(s.start_index) - tws).abs() <= delta / rate);
    }
}

#[test]
fn warm_start_without_tilt_recovers_the_prior() {
    let cfg = SamplerConfig::new(1.0, 400, 1.0, 100_000, 5).with_warm_start_step_size(0.01);
    let chains = warm_start(&zero_potential(), &cfg).unwrap();
    let xs: Vec<f64> = chains.iter().map(|c| c.position[0]).collect();
    let (mean, var) = moments(&xs);
    let se_mean = (1.0 / xs.len() as f64).sqrt();
    let se_var = (2.0 / xs.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
    // LMC with step h targets variance 1/(1 - h/2)
    let biased = 1.0 / (1.0 - 0.005);
    assert!((var - biased).abs() < 3.0 * se_var, "var {var}");
}

#[test]
fn warm_start_reaches_the_conjugate_posterior() {
    let cfg = SamplerConfig::new(1.0, 2000, 1.0, 100_000, 9).with_warm_start_step_size(5e-3);
    let chains = warm_start(&shifted_potential(), &cfg).unwrap();
    let xs: Vec<f64> = chains.iter().map(|c| c.position[0]).collect();
    let (mean, var) = moments(&xs);
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    assert!((var - 0.5).abs() < 0.02, "var {var}");
    let target = GaussianMixture::univariate(&[(1.0, 0.5, 0.5)]).unwrap();
    let batch = SampleBatch::from_samples(1, xs, 1.0).unwrap();
    assert!(tv(&batch, &target) < 0.05);
    let s = cfg.schedule();
    assert!(chains.iter().all(|c| c.algorithm_iter == s.start_index));
}

#[test]
fn runs_are_reproducible_and_parallelism_invariant() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(4.0, 300, 1.0, 3000, 77)
        .with_stop_time(0.3)
        .with_checkpoints(vec![0.5, 0.8], CheckpointMode::Averaged);
    let a = run_algorithm(&prior, &r, &cfg).unwrap();
    let b = run_algorithm(&prior, &r, &cfg).unwrap();
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_algorithm(&prior, &r, &cfg).unwrap());
    let wide = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| run_algorithm(&prior, &r, &cfg).unwrap());
    for other in [&b, &serial, &wide] {
        assert_eq!(a.final_batch, other.final_batch);
        assert_eq!(a.checkpoints, other.checkpoints);
    }
    let other_seed = run_algorithm(&prior, &r, &SamplerConfig { seed: 78, ..cfg.clone() }).unwrap();
    assert_ne!(a.final_batch.samples, other_seed.final_batch.samples);
}

#[test]
fn chains_do_not_depend_on_the_chain_count() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(2.0, 200, 1.0, 2500, 3);
    let big = run_algorithm(&prior, &r, &cfg).unwrap();
    let small = run_algorithm(&prior, &r, &SamplerConfig { chains: 7, ..cfg }).unwrap();
    assert_eq!(&big.final_batch.samples[..7], &small.final_batch.samples[..]);
}

#[test]
fn batches_are_tagged_with_their_target_time() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(8.0, 100, 1.0, 50, 1).with_stop_time(0.2).with_checkpoints(
        vec![0.2, 0.35, 0.6, 1.0],
        CheckpointMode::Instant,
    );
    let out = run_algorithm(&prior, &r, &cfg).unwrap();
    let delta = cfg.step_size();
    let mut times = Vec::new();
    for b in out.checkpoints.iter().chain(std::iter::once(&out.final_batch)) {
        assert!((b.target_time - b.algorithm_iter as f64 * delta / cfg.rate).abs() <= delta / cfg.rate);
        assert_eq!(b.len(), 50);
        assert_eq!(b.seed, 1);
        assert_eq!(b.config_hash.len(), 64);
        times.push(b.target_time);
    }
    // emission order: decreasing target time, final batch at τ
    assert!(times.windows(2).all(|w| w[0] >= w[1]));
    assert!((out.final_batch.target_time - 0.2).abs() <= delta / cfg.rate);
    // a checkpoint at τ reproduces the final iterate
    assert_eq!(out.checkpoints.last().unwrap().samples, out.final_batch.samples);
    assert_eq!(out.checkpoints[0].algorithm_iter, cfg.schedule().start_index);
    assert_eq!(out.phases.len(), 2);
    assert_eq!(out.phases[0].iterations, 100);
    assert_eq!(out.phases[1].iterations, cfg.schedule().iterations());
}

#[test]
fn averaged_checkpoints_pool_interpolants() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(4.0, 100, 1.0, 40, 2)
        .with_stop_time(0.3)
        .with_checkpoints(vec![0.5, 1.0], CheckpointMode::Averaged);
    let out = run_algorithm(&prior, &r, &cfg).unwrap();
    let pooled = &out.checkpoints[1];
    assert!(pooled.averaged);
    assert_eq!(pooled.len(), 40 * cfg.averaging_points);
    // the first annealing iterate has no preceding step
    assert!(!out.checkpoints[0].averaged);
    assert_eq!(out.checkpoints[0].len(), 40);
    // the last pooled block is the iterate itself
    let instant = run_algorithm(&prior, &r, &cfg.clone().with_checkpoints(vec![0.5], CheckpointMode::Instant)).unwrap();
    let tail = &pooled.samples[pooled.samples.len() - 40..];
    assert_eq!(tail.len(), instant.checkpoints[0].samples.len());
    assert_eq!(out.final_batch.samples, instant.final_batch.samples);
}

#[test]
fn gaussian_prior_stays_on_the_tilt() {
    let r = shifted_potential();
    let prior = GaussianMixture::standard(1);
    let cfg = SamplerConfig::new(1.0, 2000, 1.0, 100_000, 4)
        .with_step_size(0.01)
        .with_warm_start_step_size(0.01);
    let out = run_algorithm(&prior, &r, &cfg).unwrap();
    let target = prior.tilt(&r).unwrap();
    assert!(tv(&out.final_batch, &target) < 0.05);
}

#[test]
fn annealing_tracks_mode_weights() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(64.0, 2000, 2.0, 5000, 21)
        .with_step_size(1e-3)
        .with_stop_time(0.05);
    let out = run_algorithm(&prior, &r, &cfg).unwrap();
    let tau = out.final_batch.target_time;
    let target = prior.ou_smooth(SmoothTime::new(tau).unwrap()).tilt(&r).unwrap();
    let cells = Region::split(vec![1.0], 0.0);
    let analytic = analytic_mode_weights_1d(&target, &cells).unwrap();
    let empirical = mode_weights(&out.final_batch, &cells).unwrap();
    assert!((analytic[0] - empirical.weights[0]).abs() < 0.05, "{analytic:?} vs {:?}", empirical.weights);
}

#[test]
fn anneal_rejects_chains_off_the_start_index() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(2.0, 10, 1.0, 4, 0);
    let mut chains = warm_start(&r, &cfg).unwrap();
    chains[0].algorithm_iter += 1;
    assert!(matches!(anneal(&chains, &prior, &r, &cfg), Err(Error::Input(_))));
}

#[test]
fn blowup_is_reported_with_chain_and_iteration() {
    let steep = QuadraticPotential::new(vec![vec![1.0]], vec![0.0], 1e-4).unwrap();
    let cfg = SamplerConfig::new(1.0, 500, 1.0, 10, 0).with_warm_start_step_size(1.0);
    match warm_start(&steep, &cfg) {
        Err(Error::NumericalBlowup { chain, iteration, phase, .. }) => {
            assert_eq!(chain, Some(0));
            assert_eq!(phase, "warm_start");
            assert!(iteration > 0 && iteration < 500);
        }
        other => panic!("expected blowup, got {other:?}"),
    }
    // the default warm-start step adapts to the curvature, the annealing step does not
    let cfg = SamplerConfig::new(1.0, 10, 1.0, 10, 0).with_step_size(0.1);
    assert!(matches!(
        run_algorithm(&GaussianMixture::standard(1), &steep, &cfg),
        Err(Error::NumericalBlowup { phase: "anneal", .. })
    ));
}

#[test]
fn csv_round_trip() {
    let (prior, r) = two_mode();
    let cfg = SamplerConfig::new(2.0, 20, 1.0, 25, 6);
    let out = run_algorithm(&prior, &r, &cfg).unwrap();
    let mut buf = Vec::new();
    out.final_batch.write_csv(&mut buf, &[("kind", "final".to_string())]).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("# seed=6\n"));
    assert!(text.contains("x_1\n"));
    let (back, meta) = SampleBatch::read_csv(&buf[..]).unwrap();
    assert_eq!(back.samples, out.final_batch.samples);
    assert_eq!(back.target_time, out.final_batch.target_time);
    assert_eq!(back.config_hash, out.final_batch.config_hash);
    assert!(meta.iter().any(|(k, v)| k == "kind" && v == "final"));
}
