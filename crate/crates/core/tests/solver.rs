use ndarray::{Array1, Array2};
use psd::adam::AdamParams;
use psd::objective::{Objective, ResidualObjective1d};
use psd::periodic::SelfRepOperator;
use psd::{adam_minimize, ridge_solve_e, run_psd_1d, run_psd_2d, PeriodicPatternVector, PsdConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Array1<f64>, Array1<f64>, PeriodicPatternVector) {
    let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let a = Array1::from_shape_fn(n, |_| if rng.random_bool(0.1) { rng.random_range(-1.0..1.0) } else { 0.0 });
    let lam = PeriodicPatternVector::new(Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.0)), 4).unwrap();
    (y, a, lam)
}

fn assert_recombines<D: ndarray::Dimension>(sum: &ndarray::Array<f64, D>, y: &ndarray::Array<f64, D>) {
    for (s, v) in sum.iter().zip(y.iter()) {
        assert!((s - v).abs() <= 1e-15, "{s} vs {v}");
    }
}

#[test]
fn ridge_is_stationary_and_matches_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let beta2 = 10.0;
    for _ in 0..5 {
        let (y, a, lam) = random_instance(&mut rng, 64);
        let e_hat = ridge_solve_e(y.view(), a.view(), &lam, beta2).unwrap();
        let op = SelfRepOperator::new(&lam);
        let obj = ResidualObjective1d::noise(y.view(), a.view(), &op.r, beta2);
        let (_, grad) = obj.value_and_gradient(&e_hat);
        let gnorm = grad.dot(&grad).sqrt();
        assert!(gnorm <= 1e-8 * (1.0 + y.dot(&y).sqrt()), "gradient norm {gnorm}");

        // Adam with a decreasing step size until it settles.
        let mut e = Array1::zeros(64);
        for step_size in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let params = AdamParams {
                step_size,
                steps_per_block: 5000,
                ..AdamParams::default()
            };
            e = adam_minimize(&obj, e, &params, 1e-14, |_| {}).unwrap().x;
        }
        let gap = (&e - &e_hat).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gap <= 1e-5, "Adam vs ridge gap {gap}");
    }
}

#[test]
fn ridge_rejects_mismatched_lengths() {
    let lam = PeriodicPatternVector::zeros(8, 1);
    let y = Array1::zeros(8);
    let a = Array1::zeros(7);
    assert!(ridge_solve_e(y.view(), a.view(), &lam, 1.0).is_err());
}

#[test]
fn planted_spike_1d() {
    let n = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 0.01).unwrap();
    let clean = Array1::from_shape_fn(n, |i| (2.0 * std::f64::consts::PI * i as f64 / 16.0).sin());
    let mut y = clean.clone();
    for i in 60..64 {
        y[i] += 1.0;
    }
    y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    let dec = run_psd_1d(y.view(), &PsdConfig::default()).unwrap();

    assert_recombines(&(&dec.periodic + &dec.anomalies + &dec.noise), &y);
    let flagged: Vec<usize> = (0..n).filter(|&i| dec.anomalies[i].abs() > 0.3).collect();
    assert_eq!(flagged, vec![60, 61, 62, 63], "anomalies {:?}", dec.anomalies);
    let err = (0..n)
        .filter(|i| !(60..64).contains(i))
        .fold(0.0f64, |m, i| m.max((dec.periodic[i] - clean[i]).abs()));
    assert!(err < 0.15, "periodic error {err}");
    // The l1 penalty shrinks the recovered amplitude but keeps its sign.
    assert!((60..64).all(|i| (0.5..1.1).contains(&dec.anomalies[i])));
}

#[test]
fn planted_block_2d() {
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let normal = Normal::new(0.0, 0.01).unwrap();
    let tau = 2.0 * std::f64::consts::PI;
    let clean = Array2::from_shape_fn((n, n), |(i, j)| {
        0.5 + 0.25 * ((tau * i as f64 / 16.0).sin() + (tau * j as f64 / 16.0).cos())
    });
    let mut truth = Array2::from_elem((n, n), false);
    let mut y = clean.clone();
    for i in 20..30 {
        for j in 34..42 {
            y[[i, j]] += 0.5;
            truth[[i, j]] = true;
        }
    }
    y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    let dec = run_psd_2d(y.view(), &PsdConfig::default()).unwrap();
    assert_recombines(&(&dec.periodic + &dec.anomalies + &dec.noise), &y);

    let report = psd::scoring::threshold_mask(psd::scoring::score_direct(dec.anomalies.view()), 3.0)
        .evaluate(truth.view())
        .unwrap();
    let m = report.metrics.unwrap();
    assert!(m.dice >= 0.9, "{m:?}");
}

#[test]
fn solver_is_deterministic() {
    let y = Array1::from_shape_fn(64, |i| ((i % 8) as f64).sqrt());
    let cfg = PsdConfig::default();
    let a = run_psd_1d(y.view(), &cfg).unwrap();
    let b = run_psd_1d(y.view(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_inputs_are_rejected() {
    let cfg = PsdConfig::default();
    assert!(run_psd_1d(Array1::zeros(8).view(), &cfg).is_err());
    assert!(run_psd_2d(Array2::zeros((32, 31)).view(), &cfg).is_err());
    let mut y = Array1::zeros(64);
    y[3] = f64::NAN;
    assert!(run_psd_1d(y.view(), &cfg).is_err());
}
