use proptest::prelude::*;
use psd::bench::synth::random_sinusoidal_spec;
use psd::bench::{generate, reconstruction_stats, run_suite, AnomalyShape, AnomalySpec, Background, SynthSpec};
use psd::PsdConfig;

fn spec(background: Background) -> SynthSpec {
    SynthSpec {
        n: 64,
        background,
        angle_degrees: 0.0,
        shading: 0.0,
        noise_sigma: 0.01,
        anomalies: vec![AnomalySpec {
            shape: AnomalyShape::Disk,
            origin: [10, 12],
            size: [9, 9],
            amplitude: -0.5,
        }],
        seed: 3,
    }
}

#[test]
fn sinusoid_starts_at_one_before_rescaling() {
    let mut s = spec(Background::sinusoidal(20.0, 30.0));
    s.noise_sigma = 0.0;
    s.anomalies.clear();
    let (img, truth) = generate(&s).unwrap();
    // sin(0) + cos(0) = 1, mapped by (v + 2) / 4.
    assert_eq!(truth.clean[[0, 0]], 0.75);
    assert_eq!(img, truth.clean);
}

#[test]
fn integer_periods_repeat_exactly() {
    let mut s = spec(Background::sinusoidal(16.0, 8.0));
    s.noise_sigma = 0.0;
    s.anomalies.clear();
    let (_, truth) = generate(&s).unwrap();
    for i in 0..48 {
        for j in 0..56 {
            assert!((truth.clean[[i + 16, j]] - truth.clean[[i, j]]).abs() < 1e-12);
            assert!((truth.clean[[i, j + 8]] - truth.clean[[i, j]]).abs() < 1e-12);
        }
    }
}

#[test]
fn rectangles_use_bright_and_dark_cells() {
    let mut s = spec(Background::rectangles());
    s.noise_sigma = 0.0;
    s.anomalies.clear();
    let (_, truth) = generate(&s).unwrap();
    let mut values: Vec<f64> = truth.clean.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    assert_eq!(values, vec![0.2, 0.8]);
}

#[test]
fn grid_lines_repeat_with_their_period() {
    let mut s = spec(Background::grid());
    s.noise_sigma = 0.0;
    s.anomalies.clear();
    let (_, truth) = generate(&s).unwrap();
    assert_eq!(truth.clean[[0, 5]], 0.8);
    assert_eq!(truth.clean[[5, 5]], 0.2);
    assert_eq!(truth.clean[[5, 17]], 0.8);
    for i in 0..48 {
        for j in 0..48 {
            assert_eq!(truth.clean[[i + 16, j + 16]], truth.clean[[i, j]]);
        }
    }
}

#[test]
fn smooth_background_stays_in_unit_range() {
    let mut s = spec(Background::smooth());
    s.anomalies.clear();
    s.noise_sigma = 0.0;
    let (_, truth) = generate(&s).unwrap();
    assert!(truth.clean.iter().all(|v| (0.2..=0.8).contains(v)));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate(&spec(Background::sinusoidal(1.0, 30.0))).is_err());
    let mut s = spec(Background::rectangles());
    s.anomalies[0].origin = [60, 60];
    assert!(generate(&s).is_err());
    s = spec(Background::rectangles());
    s.noise_sigma = -1.0;
    assert!(generate(&s).is_err());
}

#[test]
fn suite_of_clean_image_follows_empty_class_conventions() {
    let mut s = spec(Background::sinusoidal(16.0, 16.0));
    s.anomalies.clear();
    let report = run_suite(&[s], &PsdConfig::default(), 1e9).unwrap();
    let m = report.images[0].metrics.unwrap();
    assert_eq!(m.false_negative_rate, 0.0);
    assert_eq!(m.false_omission_rate, 0.0);
    assert_eq!(m.balanced_accuracy, 1.0);
    assert!(run_suite(&[], &PsdConfig::default(), 3.0).is_err());
}

#[test]
fn suite_records_failures_and_continues() {
    let good = random_sinusoidal_spec(64, (12.0, 20.0), 0.01, 1);
    let mut bad = good.clone();
    bad.n = 4;
    let report = run_suite(&[bad, good], &PsdConfig::default(), 3.0).unwrap();
    assert_eq!(report.failures, 1);
    assert!(report.images[0].error.is_some());
    let mean = report.mean.unwrap();
    assert_eq!(mean.dice, report.images[1].metrics.unwrap().dice);
}

#[test]
fn reconstruction_stats_match_direct_formulas() {
    let (img, truth) = generate(&spec(Background::sinusoidal(20.0, 30.0))).unwrap();
    let s = reconstruction_stats(truth.clean.view(), img.view(), truth.noise.view()).unwrap();
    let diff: Vec<f64> = truth.clean.iter().zip(img.iter()).map(|(c, r)| c - r).collect();
    let count = diff.len() as f64;
    let mu = diff.iter().sum::<f64>() / count;
    let sigma = (diff.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / count).sqrt();
    assert!((s.mu_r - mu).abs() < 1e-15);
    assert!((s.sigma_r - sigma).abs() < 1e-15);
    assert_eq!(s.max_diff, diff.iter().fold(0.0f64, |m, d| m.max(d.abs())));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn generation_is_reproducible_and_exact(seed in any::<u64>(), angle in -30.0f64..30.0, shading in 0.0f64..0.2) {
        let mut s = random_sinusoidal_spec(48, (10.0, 20.0), 0.02, seed);
        s.angle_degrees = angle;
        s.shading = shading;
        let (a, ta) = generate(&s).unwrap();
        let (b, tb) = generate(&s).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&ta.anomaly_mask, &tb.anomaly_mask);
        for ((i, j), &v) in a.indexed_iter() {
            prop_assert_eq!(ta.clean[[i, j]] + ta.anomaly_values[[i, j]] + ta.noise[[i, j]], v);
            if !ta.anomaly_mask[[i, j]] {
                prop_assert_eq!(ta.anomaly_values[[i, j]], 0.0);
            } else {
                prop_assert!(ta.anomaly_values[[i, j]].abs() == 0.5);
            }
        }
        let planted = s.anomalies.len();
        prop_assert!((1..=3).contains(&planted));
        for a in &s.anomalies {
            prop_assert!((8..=20).contains(&a.size[0]) && (8..=20).contains(&a.size[1]));
        }
    }
}
