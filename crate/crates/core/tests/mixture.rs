use std::f64::consts::PI;

use annealed_posterior::quadrature::integrate_1d;
use annealed_posterior::{Error, GaussianMixture, QuadraticPotential, SmoothTime};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(v: f64) -> SmoothTime {
    SmoothTime::new(v).unwrap()
}

fn normal_pdf(x: f64, m: f64, var: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Random mixture with 1..=3 components; covariances `LLᵀ + 0.2 I`.
fn random_mixture(rng: &mut ChaCha8Rng, d: usize) -> GaussianMixture {
    let k = rng.random_range(1..=3);
    let comps = (0..k)
        .map(|_| {
            let w = rng.random_range(0.2..1.0);
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let l: Vec<f64> = (0..d * d).map(|_| rng.random_range(-0.8..0.8)).collect();
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] = (0..d).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
                }
                cov[i * d + i] += 0.2;
            }
            (w, mean, cov)
        })
        .collect();
    GaussianMixture::normalized(d, comps).unwrap()
}

#[test]
fn log_density_examples() {
    let g = GaussianMixture::standard(1);
    assert!((g.log_density(&[0.0]).unwrap() + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);

    let sym = GaussianMixture::univariate(&[(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]).unwrap();
    assert!((sym.log_density(&[1.7]).unwrap() - sym.log_density(&[-1.7]).unwrap()).abs() < 1e-14);

    let p = GaussianMixture::univariate(&[(0.3, -2.0, 0.5), (0.7, 1.0, 2.0)]).unwrap();
    let naive = (0.3 * normal_pdf(0.4, -2.0, 0.5) + 0.7 * normal_pdf(0.4, 1.0, 2.0)).ln();
    assert!((p.log_density(&[0.4]).unwrap() - naive).abs() < 1e-12);
}

#[test]
fn log_density_survives_far_separated_components() {
    let p = GaussianMixture::univariate(&[(0.5, -60.0, 1.0), (0.5, 60.0, 1.0)]).unwrap();
    let v = p.log_density(&[0.0]).unwrap();
    assert!(v.is_finite());
    assert!((v - (-1800.0 - 0.5 * (2.0 * PI).ln())).abs() < 1e-9);
    let s = p.score(&[30.0]).unwrap();
    assert!((s[0] - 30.0).abs() < 1e-9);
}

#[test]
fn dimension_mismatch_is_reported() {
    let p = GaussianMixture::standard(2);
    assert!(matches!(
        p.log_density(&[1.0]),
        Err(Error::DimensionMismatch { expected: 2, found: 1 })
    ));
    assert!(p.score(&[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn invalid_mixtures_are_rejected() {
    assert!(GaussianMixture::new(1, vec![(0.5, vec![0.0], vec![1.0])]).is_err());
    assert!(GaussianMixture::new(1, vec![(1.0, vec![0.0], vec![0.0])]).is_err());
    assert!(GaussianMixture::new(1, vec![(1.0, vec![0.0], vec![1e-13])]).is_err());
    assert!(GaussianMixture::new(2, vec![(1.0, vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0])]).is_err());
    assert!(GaussianMixture::new(2, vec![(1.0, vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0])]).is_err());
    assert!(GaussianMixture::new(1, vec![(1.2, vec![0.0], vec![1.0]), (-0.2, vec![1.0], vec![1.0])]).is_err());
    assert!(GaussianMixture::new(1, vec![(1.0, vec![f64::NAN], vec![1.0])]).is_err());
}

#[test]
fn score_examples() {
    let g = GaussianMixture::standard(3);
    let x = [0.3, -1.2, 2.5];
    let s = g.score(&x).unwrap();
    for i in 0..3 {
        assert!((s[i] + x[i]).abs() < 1e-15);
    }

    let p = GaussianMixture::new(2, vec![(1.0, vec![1.0, -1.0], vec![2.0, 0.0, 0.0, 0.5])]).unwrap();
    let s = p.score(&[0.0, 0.0]).unwrap();
    assert!((s[0] - 0.5).abs() < 1e-14 && (s[1] + 2.0).abs() < 1e-14);

    let sym = GaussianMixture::univariate(&[(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]).unwrap();
    let h = 1e-5;
    let fd = (sym.log_density(&[0.1 + h]).unwrap() - sym.log_density(&[0.1 - h]).unwrap()) / (2.0 * h);
    assert!(rel_err(sym.score(&[0.1]).unwrap()[0], fd) < 1e-6);
}

#[test]
fn score_matches_finite_differences_on_random_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 1000 {
        let d = rng.random_range(1..=3);
        let p = random_mixture(&mut rng, d);
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let s = p.score(&x).unwrap();
            for i in 0..d {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (p.log_density(&xp).unwrap() - p.log_density(&xm).unwrap()) / (2.0 * h);
                let scale = s.iter().map(|v| v.abs()).fold(1.0, f64::max);
                assert!((s[i] - fd).abs() / scale < 1e-6, "score {} vs fd {}", s[i], fd);
            }
            checked += 1;
        }
    }
}

#[test]
fn score_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let p = random_mixture(&mut rng, 2);
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let jac = p.score_jacobian(&x).unwrap();
        for j in 0..2 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let sp = p.score(&xp).unwrap();
            let sm = p.score(&xm).unwrap();
            for i in 0..2 {
                let fd = (sp[i] - sm[i]) / (2.0 * h);
                assert!((jac[i * 2 + j] - fd).abs() < 1e-5 * fd.abs().max(1.0));
            }
        }
    }
}

#[test]
fn ou_smoothing_fixed_point_and_limit() {
    let g = GaussianMixture::standard(2);
    assert_eq!(g.ou_smooth(t(0.7)), g);
    let p = GaussianMixture::univariate(&[(0.4, -3.0, 0.3), (0.6, 3.0, 2.0)]).unwrap();
    assert_eq!(p.ou_smooth(SmoothTime::ZERO), p);
    let far = p.ou_smooth(t(20.0));
    for c in far.components() {
        assert!(c.mean()[0].abs() < 1e-8);
        assert!((c.cov()[0] - 1.0).abs() < 1e-8);
    }
}

/// `p_t(x) = ∫ e^{t} p(e^{t} y) γ_{1-e^{-2t}}(x - y) dy` by adaptive quadrature.
fn convolution_density(p: &GaussianMixture, tt: f64, x: f64) -> f64 {
    let s2 = 1.0 - (-2.0 * tt).exp();
    let scale = tt.exp();
    let (lo, hi) = p.bounding_box(14.0)[0];
    let (lo, hi) = (lo / scale, hi / scale);
    integrate_1d(
        |y| scale * p.density(&[scale * y]).unwrap() * normal_pdf(x - y, 0.0, s2),
        lo.min(x - 14.0 * s2.sqrt()),
        hi.max(x + 14.0 * s2.sqrt()),
        64,
        1e-12,
        0.0,
    )
}

#[test]
fn ou_smoothing_matches_convolution() {
    let p = GaussianMixture::univariate(&[(1.0, 2.0, 0.25)]).unwrap();
    let sm = p.ou_smooth(t(2f64.ln()));
    assert!((sm.components()[0].mean()[0] - 1.0).abs() < 1e-14);
    assert!((sm.components()[0].cov()[0] - 0.8125).abs() < 1e-14);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let x = -3.0 + 8.0 * i as f64 / 99.0;
        let oracle = convolution_density(&p, 2f64.ln(), x);
        worst = worst.max(rel_err(sm.density(&[x]).unwrap(), oracle));
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn ou_semigroup_holds_in_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p = random_mixture(&mut rng, 2);
        let (s, u) = (rng.random_range(0.01..2.0), rng.random_range(0.01..2.0));
        let twice = p.ou_smooth(t(s)).ou_smooth(t(u));
        let once = p.ou_smooth(t(s + u));
        for (a, b) in twice.components().iter().zip(once.components()) {
            assert!((a.weight() - b.weight()).abs() < 1e-12);
            for (x, y) in a.mean().iter().zip(b.mean()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.cov().iter().zip(b.cov()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn smoothed_density_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let p = random_mixture(&mut rng, 1);
        for &tt in &[0.1f64, 0.5, 1.0] {
            let bound = (2.0 * PI * (1.0 - (-2.0 * tt).exp())).powf(-0.5);
            let sm = p.ou_smooth(t(tt));
            for i in 0..400 {
                let x = -6.0 + 12.0 * i as f64 / 399.0;
                assert!(sm.density(&[x]).unwrap() <= bound + 1e-12);
            }
        }
    }
}

#[test]
fn dt_log_density_examples() {
    let g = GaussianMixture::standard(2);
    assert_eq!(g.dt_log_density(t(0.3), &[1.0, -2.0]).unwrap(), 0.0);
    assert!(matches!(g.dt_log_density(SmoothTime::ZERO, &[0.0, 0.0]), Err(Error::Domain(_))));

    let p = GaussianMixture::univariate(&[(1.0, 2.0, 0.25)]).unwrap();
    let h = 1e-5;
    let fd = (p.ou_smooth(t(0.5 + h)).log_density(&[0.0]).unwrap()
        - p.ou_smooth(t(0.5 - h)).log_density(&[0.0]).unwrap())
        / (2.0 * h);
    assert!(rel_err(p.dt_log_density(t(0.5), &[0.0]).unwrap(), fd) < 1e-5);

    let two = GaussianMixture::univariate(&[(0.5, -2.0, 0.1), (0.5, 2.0, 0.1)]).unwrap();
    let near = two.dt_log_density(t(0.05), &[1.0]).unwrap().abs();
    let far = two.dt_log_density(t(1.0), &[1.0]).unwrap().abs();
    assert!(near > far, "{near} vs {far}");
}

#[test]
fn dt_log_density_matches_finite_differences_in_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let p = random_mixture(&mut rng, 2);
        let tt = rng.random_range(0.2..2.0);
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let h = 1e-5;
        let fd = (p.ou_smooth(t(tt + h)).log_density(&x).unwrap() - p.ou_smooth(t(tt - h)).log_density(&x).unwrap())
            / (2.0 * h);
        let v = p.dt_log_density(t(tt), &x).unwrap();
        assert!((v - fd).abs() <= 1e-5 * fd.abs().max(1e-2), "{v} vs {fd}");
    }
}

#[test]
fn posterior_mean_examples() {
    let g = GaussianMixture::standard(2);
    let x = [1.5, -0.5];
    let m = g.posterior_mean(t(0.4), &x).unwrap();
    for i in 0..2 {
        assert!((m[i] - (-0.4f64).exp() * x[i]).abs() < 1e-14);
    }
    assert!(matches!(g.posterior_mean(SmoothTime::ZERO, &x), Err(Error::Domain(_))));

    let narrow = GaussianMixture::univariate(&[(1.0, 5.0, 1e-4)]).unwrap();
    for &xt in &[-10.0, 0.0, 1.8, 30.0] {
        assert!((narrow.posterior_mean(t(1.0), &[xt]).unwrap()[0] - 5.0).abs() < 1e-2);
    }
}

/// `(1 - e^{-2t}) ∇log p_t(x_t) = e^{-t} E[x₀|x_t] - x_t`.
fn tweedie_gap(p: &GaussianMixture, tt: f64, x: &[f64]) -> f64 {
    let s = p.ou_smooth(t(tt)).score(x).unwrap();
    let m = p.posterior_mean(t(tt), x).unwrap();
    let s2 = 1.0 - (-2.0 * tt).exp();
    let a = (-tt).exp();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let lhs = s2 * s[i];
        let rhs = a * m[i] - x[i];
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(lhs.abs()).max(1e-3));
    }
    worst
}

#[test]
fn tweedie_identity_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 0..1000 {
        let d = 1 + n % 2;
        let p = random_mixture(&mut rng, d);
        let tt = rng.random_range(0.01..3.0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let gap = tweedie_gap(&p, tt, &x);
        assert!(gap < 1e-8, "gap {gap} at t={tt}");
    }
}

#[test]
fn tilt_examples() {
    let g = GaussianMixture::standard(1);
    let r = QuadraticPotential::new(vec![vec![1.0]], vec![1.0], 1.0).unwrap();
    let post = g.tilt(&r).unwrap();
    assert_eq!(post.components().len(), 1);
    assert!((post.components()[0].mean()[0] - 0.5).abs() < 1e-14);
    assert!((post.components()[0].cov()[0] - 0.5).abs() < 1e-14);
}

#[test]
fn tilt_of_symmetric_pair_has_the_closed_form_weights() {
    for &l in &[2.0, 3.0, 4.0] {
        let l2: f64 = l * l;
        let prior = GaussianMixture::univariate(&[(0.5, -l, 1.0), (0.5, l, 1.0)]).unwrap();
        // R = (x + ℓ)²/ℓ²
        let r = QuadraticPotential::new(vec![vec![1.0]], vec![-l], l2 / 2.0).unwrap();
        let post = prior.tilt(&r).unwrap();
        let c = post.components();
        let var = l2 / (l2 + 2.0);
        assert!((c[0].mean()[0] + l).abs() < 1e-12);
        assert!((c[1].mean()[0] - l * (l2 - 2.0) / (l2 + 2.0)).abs() < 1e-12);
        assert!((c[0].cov()[0] - var).abs() < 1e-12 && (c[1].cov()[0] - var).abs() < 1e-12);
        let ratio = c[1].weight() / c[0].weight();
        assert!(rel_err(ratio, (-4.0 + 8.0 / (l2 + 2.0)).exp()) < 1e-10);

        // the mirrored potential mirrors the posterior
        let r = QuadraticPotential::new(vec![vec![1.0]], vec![l], l2 / 2.0).unwrap();
        let mirror = prior.tilt(&r).unwrap();
        let m = mirror.components();
        assert!((m[1].mean()[0] - l).abs() < 1e-12);
        assert!(rel_err(m[0].weight() / m[1].weight(), ratio) < 1e-10);
    }
}

#[test]
fn tilt_density_ratio_is_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let p = random_mixture(&mut rng, 2);
        let a = vec![
            vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        ];
        let y = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let r = QuadraticPotential::new(a, y, rng.random_range(0.5..2.0)).unwrap();
        let post = p.tilt(&r).unwrap();
        let ratios: Vec<f64> = (0..100)
            .map(|i| {
                let x = [-2.0 + 0.4 * (i % 10) as f64, -2.0 + 0.4 * (i / 10) as f64];
                post.log_density(&x).unwrap() - p.log_density(&x).unwrap() + r.potential(&x).unwrap()
            })
            .collect();
        for v in &ratios {
            assert!((v - ratios[0]).abs() < 1e-10, "log ratio varies: {v} vs {}", ratios[0]);
        }
    }
}

#[test]
fn tail_of_the_posterior_path_contracts() {
    let p = GaussianMixture::univariate(&[(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]).unwrap();
    let r = QuadraticPotential::new(vec![vec![1.0]], vec![3.0], 9.0 / 2.0).unwrap();
    let limit = GaussianMixture::standard(1).tilt(&r).unwrap();
    let sup = |tt: f64| {
        let mu = p.ou_smooth(t(tt)).tilt(&r).unwrap();
        (0..201)
            .map(|i| {
                let x = -5.0 + 0.05 * i as f64;
                (mu.log_density(&[x]).unwrap() - limit.log_density(&[x]).unwrap()).abs()
            })
            .fold(0.0, f64::max)
    };
    for tt in [2.0, 3.0, 4.0] {
        assert!(sup(tt + 1.0) <= 0.5 * sup(tt));
    }
}

#[test]
fn smoothing_does_not_increase_score_lipschitz_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let p = random_mixture(&mut rng, 1);
        let max_slope = |q: &GaussianMixture| {
            let h = 1e-3;
            (0..4000)
                .map(|i| {
                    let x = -8.0 + 16.0 * i as f64 / 3999.0;
                    ((q.score(&[x + h]).unwrap()[0] - q.score(&[x - h]).unwrap()[0]) / (2.0 * h)).abs()
                })
                .fold(0.0, f64::max)
        };
        let base = max_slope(&p);
        for tt in [0.25, 1.0] {
            assert!(max_slope(&p.ou_smooth(t(tt))) <= base * (1.0 + 1e-3));
        }
    }
}

#[test]
fn json_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for d in 1..=3 {
        let p = random_mixture(&mut rng, d);
        let text = serde_json::to_string(&p).unwrap();
        let back: GaussianMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
    let parsed: GaussianMixture =
        serde_json::from_str(r#"{"dim":1,"components":[{"weight":1.0,"mean":[0.5],"cov":[[2.0]]}]}"#).unwrap();
    assert_eq!(parsed.components()[0].cov(), &[2.0]);
    assert!(serde_json::from_str::<GaussianMixture>(r#"{"dim":1,"components":[{"weight":1.0,"mean":[0.5],"cov":[[-2.0]]}]}"#).is_err());
}

#[test]
fn sampling_matches_moments() {
    let p = GaussianMixture::univariate(&[(0.3, -2.0, 0.5), (0.7, 1.0, 2.0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let xs = p.sample_n(&mut rng, 200_000);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
    assert!((mean - p.mean()[0]).abs() < 0.02);
    assert!((m2 - p.second_moment()).abs() < 0.05);
    let q = p.quantile_1d(0.3).unwrap();
    assert!((p.cdf_1d(q).unwrap() - 0.3).abs() < 1e-12);
}

proptest! {
    #[test]
    fn tweedie_holds_for_arbitrary_univariate_pairs(
        m1 in -5.0f64..5.0, m2 in -5.0f64..5.0,
        v1 in 0.05f64..3.0, v2 in 0.05f64..3.0,
        w in 0.05f64..0.95, tt in 0.01f64..4.0, x in -6.0f64..6.0,
    ) {
        let p = GaussianMixture::univariate(&[(w, m1, v1), (1.0 - w, m2, v2)]).unwrap();
        prop_assert!(tweedie_gap(&p, tt, &[x]) < 1e-8);
    }

    #[test]
    fn responsibilities_are_a_distribution(
        m1 in -5.0f64..5.0, m2 in -5.0f64..5.0, w in 0.05f64..0.95, x in -50.0f64..50.0,
    ) {
        let p = GaussianMixture::univariate(&[(w, m1, 1.0), (1.0 - w, m2, 0.3)]).unwrap();
        let r = p.responsibilities(&[x]).unwrap();
        prop_assert!(r.iter().all(|v| *v >= 0.0));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_preserves_weights_and_validity(tt in 0.0f64..10.0, m in -5.0f64..5.0, v in 1e-6f64..5.0) {
        let p = GaussianMixture::univariate(&[(0.25, m, v), (0.75, -m, 1.0)]).unwrap();
        let s = p.ou_smooth(t(tt));
        prop_assert_eq!(s.weights(), p.weights());
        prop_assert!(s.components().iter().all(|c| c.cov()[0] > 0.0));
    }
}
