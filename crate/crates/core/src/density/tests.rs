use super::*;
use rand::Rng;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn two_blobs(n_each: usize, centers: [[f64; 2]; 2], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_each);
    for c in centers {
        for _ in 0..n_each {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            out.push(vec![c[0] + a, c[1] + b]);
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Straightforward mixture evaluation: product of univariate normal pdfs
/// (diagonal) or an explicit 2x2 inverse (full), no logs anywhere.
fn brute_force_density(model: &MixtureModel<f64>, x: &[f64]) -> f64 {
    let mut rho = 0.0;
    for k in 0..model.weights().len() {
        let mu = &model.means()[k];
        let cov = &model.covariances()[k];
        let pdf = match model.covariance_kind() {
            CovarianceKind::Diagonal => x
                .iter()
                .zip(mu)
                .zip(cov)
                .map(|((&xi, &m), &v)| {
                    (-(xi - m) * (xi - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
                })
                .product::<f64>(),
            CovarianceKind::Full => {
                assert_eq!(x.len(), 2);
                let (a, b, c, d) = (cov[0], cov[1], cov[2], cov[3]);
                let det = a * d - b * c;
                let (i00, i01, i10, i11) = (d / det, -b / det, -c / det, a / det);
                let e0 = x[0] - mu[0];
                let e1 = x[1] - mu[1];
                let q = e0 * (i00 * e0 + i01 * e1) + e1 * (i10 * e0 + i11 * e1);
                (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
            }
        };
        rho += model.weights()[k] * pdf;
    }
    rho
}

fn trajectory_with_feature(feature: Vec<f64>) -> Trajectory<f64> {
    Trajectory {
        transitions: vec![],
        achieved_goal_feature: feature,
        raw_density: 1.0,
        log_density: 0.0,
        normalized_density: 0.0,
        complement: 0.0,
        priority: 0.0,
        episode_td_error: 0.0,
    }
}

#[test]
fn degenerate_data_collapses_to_one_component_at_the_floor() {
    let x = vec![0.3, -1.2, 4.0];
    let data = vec![x.clone(); 100];
    let model = fit(&data, &VgmmConfig::default()).unwrap();
    assert_eq!(model.effective_components(), 1);
    let k = model.weights().iter().enumerate().max_by(|a, b| f64::total_cmp(a.1, b.1)).unwrap().0;
    assert!(dist(&model.means()[k], &x) < 1e-12);
    for &v in &model.covariances()[k] {
        assert!(v >= 1e-6 && v < 1.05e-6, "variance {v}");
    }
}

#[test]
fn recovers_two_separated_clusters() {
    let data = two_blobs(500, [[0.0, 0.0], [5.0, 5.0]], 11);
    let cfg = VgmmConfig {
        max_components: 8,
        seed: 3,
        ..VgmmConfig::default()
    };
    let model = fit(&data, &cfg).unwrap();
    assert_eq!(model.effective_components(), 2);
    for truth in [[0.0, 0.0], [5.0, 5.0]] {
        let best = model
            .means()
            .iter()
            .zip(model.weights())
            .filter(|(_, &w)| w > 0.05)
            .map(|(m, _)| dist(m, &truth))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "mean error {best}");
    }
}

#[test]
fn bound_is_monotone_within_every_run() {
    for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
        for init in [InitStrategy::KmeansLike, InitStrategy::RandomResponsibility] {
            let data = two_blobs(200, [[0.0, 0.0], [3.0, 1.0]], 5);
            let cfg = VgmmConfig {
                max_components: 5,
                covariance_kind: kind,
                init_strategy: init,
                convergence_tol: 1e-9,
                max_iterations: 300,
                ..VgmmConfig::default()
            };
            let model = fit(&data, &cfg).unwrap();
            for run in &model.report().bound_trace {
                for w in run.windows(2) {
                    assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{kind:?} {init:?}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }
}

#[test]
fn bound_stays_monotone_after_deletions() {
    for seed in 0..5 {
        let data = two_blobs(500, [[0.0, 0.0], [5.0, 5.0]], 200 + seed);
        let cfg = VgmmConfig {
            max_components: 8,
            seed,
            ..VgmmConfig::default()
        };
        let model = fit(&data, &cfg).unwrap();
        assert!(model.report().deleted_components > 0);
        for run in &model.report().bound_trace {
            for w in run.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn diagonal_and_full_agree_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<Vec<f64>> = (0..300)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            vec![if i % 3 == 0 { 4.0 + 0.5 * z } else { z }]
        })
        .collect();
    let base = VgmmConfig {
        max_components: 4,
        ..VgmmConfig::default()
    };
    let diag = fit(&data, &base).unwrap();
    let full = fit(
        &data,
        &VgmmConfig {
            covariance_kind: CovarianceKind::Full,
            ..base
        },
    )
    .unwrap();
    let (a, b) = (diag.report(), full.report());
    assert_eq!(a.bound_trace.len(), b.bound_trace.len());
    for (ra, rb) in a.bound_trace.iter().zip(&b.bound_trace) {
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
    for probe in [-2.0, 0.0, 1.3, 4.0, 9.0] {
        let la = diag.log_density(&[probe]).unwrap();
        let lb = full.log_density(&[probe]).unwrap();
        assert!((la - lb).abs() < 1e-9);
    }
}

#[test]
fn fitting_is_deterministic() {
    let data = two_blobs(100, [[0.0, 0.0], [2.0, 2.0]], 1);
    for init in [InitStrategy::KmeansLike, InitStrategy::RandomResponsibility] {
        let cfg = VgmmConfig {
            max_components: 4,
            init_strategy: init,
            seed: 77,
            ..VgmmConfig::default()
        };
        let a = fit(&data, &cfg).unwrap().to_json().unwrap();
        let b = fit(&data, &cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn standard_normal_log_density() {
    let m = MixtureModel::from_parameters(CovarianceKind::Diagonal, vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
    let expected = -(2.0 * std::f64::consts::PI).sqrt().ln();
    assert!((m.log_density(&[0.0]).unwrap() - expected).abs() < 1e-12);
    assert!((expected + 0.9189).abs() < 1e-4);

    let twin = MixtureModel::from_parameters(
        CovarianceKind::Diagonal,
        vec![0.5, 0.5],
        vec![vec![0.0], vec![0.0]],
        vec![vec![1.0], vec![1.0]],
    )
    .unwrap();
    assert!((twin.log_density(&[0.0]).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn far_tail_stays_finite() {
    let m = MixtureModel::from_parameters(
        CovarianceKind::Diagonal,
        vec![0.3, 0.7],
        vec![vec![0.0], vec![1.0]],
        vec![vec![1.0], vec![0.5]],
    )
    .unwrap();
    let l: f64 = m.log_density(&[50.0]).unwrap();
    assert!(l.is_finite() && l < -500.0, "{l}");
    // exp underflows here, so the raw density clamps to the floor
    let rho = predict_raw_density(&m, &trajectory_with_feature(vec![50.0])).unwrap();
    assert_eq!(rho, m.density_floor());
}

#[test]
fn dimension_mismatch_is_rejected() {
    let m = MixtureModel::from_parameters(CovarianceKind::Diagonal, vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
    assert!(matches!(m.log_density(&[0.0, 1.0]), Err(CdpError::DimensionMismatch { .. })));
}

#[test]
fn raw_density_matches_brute_force_evaluation() {
    let data = two_blobs(150, [[0.0, 1.0], [2.5, -1.0]], 21);
    for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
        let model = fit(
            &data,
            &VgmmConfig {
                max_components: 3,
                covariance_kind: kind,
                ..VgmmConfig::default()
            },
        )
        .unwrap();
        for feature in [vec![0.1, 0.9], vec![2.0, -0.5], vec![-1.5, 3.0]] {
            let rho = predict_raw_density(&model, &trajectory_with_feature(feature.clone())).unwrap();
            let oracle = brute_force_density(&model, &feature);
            assert!(((rho - oracle) / oracle).abs() < 1e-10, "{kind:?}: {rho} vs {oracle}");
        }
    }
}

#[test]
fn mode_and_symmetry_of_raw_density() {
    let m = MixtureModel::from_parameters(
        CovarianceKind::Diagonal,
        vec![1.0],
        vec![vec![1.0, -1.0]],
        vec![vec![0.4, 0.4]],
    )
    .unwrap();
    let at = |x: Vec<f64>| predict_raw_density(&m, &trajectory_with_feature(x)).unwrap();
    let mode = at(vec![1.0, -1.0]);
    for probe in [vec![1.1, -1.0], vec![0.0, 0.0], vec![1.0, -0.99], vec![3.0, 2.0]] {
        assert!(at(probe) < mode);
    }
    assert_eq!(at(vec![1.5, -1.0]), at(vec![0.5, -1.0]));
    assert_eq!(at(vec![1.0, -0.7]), at(vec![1.0, -1.3]));
}

#[test]
fn density_integrates_to_one_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<Vec<f64>> = (0..400)
        .map(|_| vec![2.0 + 0.7 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)])
        .collect();
    let model = fit(&data, &VgmmConfig::default()).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (m, c) in model.means().iter().zip(model.covariances()) {
        let s = c[0].sqrt();
        lo = lo.min(m[0] - 10.0 * s);
        hi = hi.max(m[0] + 10.0 * s);
    }
    let steps = 20_000;
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| model.log_density(&[x]).unwrap().exp();
    let mut integral = 0.5 * (f(lo) + f(hi));
    for i in 1..steps {
        integral += f(lo + i as f64 * h);
    }
    integral *= h;
    assert!((0.999..=1.001).contains(&integral), "{integral}");
}

#[test]
fn pruning_from_ten_components() {
    let mut hits = 0;
    for seed in 0..5 {
        let data = two_blobs(300, [[0.0, 0.0], [5.0, 0.0]], 100 + seed);
        let model = fit(
            &data,
            &VgmmConfig {
                max_components: 10,
                seed,
                ..VgmmConfig::default()
            },
        )
        .unwrap();
        if model.effective_components() == 2 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}/5");
}

#[test]
fn fewer_samples_than_components_reduces_k() {
    let data = vec![vec![0.0], vec![1.0]];
    let model = fit(
        &data,
        &VgmmConfig {
            max_components: 5,
            ..VgmmConfig::default()
        },
    )
    .unwrap();
    assert_eq!(model.weights().len(), 2);
}

#[test]
fn json_round_trip_preserves_predictions() {
    let data = two_blobs(80, [[0.0, 0.0], [3.0, 3.0]], 2);
    for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
        let model = fit(
            &data,
            &VgmmConfig {
                covariance_kind: kind,
                ..VgmmConfig::default()
            },
        )
        .unwrap();
        let back = MixtureModel::from_json(&model.to_json().unwrap()).unwrap();
        for probe in [[0.2, -0.1], [3.1, 2.0]] {
            assert_eq!(model.log_density(&probe).unwrap(), back.log_density(&probe).unwrap());
        }
        let mut doc = model.to_document();
        doc.version = 99;
        assert!(matches!(MixtureModel::from_document(doc), Err(CdpError::UnsupportedVersion(99))));
    }
}

#[test]
fn estimator_requires_a_fit() {
    let mut est = DensityEstimator::new(VgmmConfig::<f64>::default()).unwrap();
    let t = trajectory_with_feature(vec![0.0]);
    assert!(matches!(est.predict_raw_density(&t), Err(CdpError::UnfittedModel)));
    est.fit(&[vec![0.0], vec![1.0], vec![0.5], vec![0.7]]).unwrap();
    assert!(est.predict_raw_density(&t).unwrap() > 0.0);
}

#[test]
fn config_validation() {
    let bad = VgmmConfig::<f64> {
        max_components: 0,
        ..VgmmConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = VgmmConfig::<f64> {
        covariance_floor: 0.0,
        ..VgmmConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn single_precision_fit_runs() {
    let data: Vec<Vec<f32>> = two_blobs(100, [[0.0, 0.0], [4.0, 4.0]], 8)
        .into_iter()
        .map(|v| v.into_iter().map(|x| x as f32).collect())
        .collect();
    let model = fit(&data, &VgmmConfig::<f32>::default()).unwrap();
    let total: f32 = model.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-5);
    assert!(model.log_density(&[0.0, 0.0]).unwrap().is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn weights_form_a_simplex(seed in 0u64..1000, n in 5usize..60, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() * 3.0, rng.random::<f64>()]).collect();
        let model = fit(&data, &VgmmConfig { max_components: k, seed, ..VgmmConfig::default() }).unwrap();
        let total: f64 = model.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(model.effective_components() <= k);
        for c in model.covariances() {
            for &v in c {
                prop_assert!(v >= 1e-6);
            }
        }
    }
}
