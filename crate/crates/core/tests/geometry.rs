use ndarray::{Array1, Array2};
use proptest::prelude::*;
use psd::bench::{generate, Background, SynthSpec};
use psd::geometry::{
    build_reference, estimate_direction, expand_reference, expand_sides, inscribed_size, rotate,
    ReferenceOptions,
};
use psd::{PeriodicPatternVector, PsdConfig};

fn in_phase_pattern(n: usize, period: usize, weights: &[f64]) -> PeriodicPatternVector {
    let mut lam = Array1::zeros(n);
    for (k, w) in (1..).zip(weights) {
        if k * period < n {
            lam[k * period] = *w;
        }
    }
    PeriodicPatternVector::unguarded(lam).unwrap()
}

fn tile_value(tile: &Array2<f64>, i: isize, j: isize) -> f64 {
    let (h, w) = tile.dim();
    tile[[i.rem_euclid(h as isize) as usize, j.rem_euclid(w as isize) as usize]]
}

fn check_continuation(tile: &Array2<f64>, n: usize, t1: usize, t2: usize, sides: [usize; 4]) -> f64 {
    let img = Array2::from_shape_fn((n, n), |(i, j)| tile_value(tile, i as isize, j as isize));
    let l1 = in_phase_pattern(n, t1, &[0.5, 1.0, 0.25, 2.0, 0.75]);
    let l2 = in_phase_pattern(n, t2, &[1.0, 0.3, 0.6, 0.1]);
    let e = expand_sides(img.view(), &l1, &l2, sides).unwrap();
    let [top, bottom, left, right] = sides;
    assert_eq!(e.data.dim(), (n + top + bottom, n + left + right));
    let mut worst = 0.0f64;
    for ((i, j), v) in e.data.indexed_iter() {
        let want = tile_value(tile, i as isize - e.top as isize, j as isize - e.left as isize);
        worst = worst.max((v - want).abs());
    }
    worst
}

#[test]
fn expansion_continues_exact_periodic_images() {
    for &period in &[16usize, 24] {
        let tile = Array2::from_shape_fn((period, period), |(i, j)| {
            let (x, y) = (i as f64 / period as f64, j as f64 / period as f64);
            0.5 + 0.3 * (6.283 * x).sin() * (6.283 * y).cos() + 0.1 * ((i * 7 + j * 3) % 5) as f64
        });
        let err = check_continuation(&tile, 96, period, period, [37, 29, 41, 30]);
        assert!(err <= 1e-6, "period {period}: error {err}");
    }
}

#[test]
fn expansion_to_target_centers_original() {
    let img = Array2::from_shape_fn((32, 32), |(i, j)| ((i % 8) * 8 + j % 8) as f64);
    let lam = in_phase_pattern(32, 8, &[1.0, 1.0]);
    let e = expand_reference(img.view(), &lam, &lam, 45, 40).unwrap();
    assert_eq!(e.data.dim(), (45, 40));
    assert_eq!((e.top, e.left), (7, 4));
    let inner = e.data.slice(ndarray::s![7..39, 4..36]);
    assert_eq!(inner, img);
}

#[test]
fn mismatched_pattern_lengths_are_rejected() {
    let img = Array2::<f64>::zeros((16, 16));
    let lam = PeriodicPatternVector::unguarded(Array1::ones(15)).unwrap();
    assert!(expand_reference(img.view(), &lam, &lam, 20, 20).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn expansion_of_random_tiles(
        t1 in 3usize..10,
        t2 in 3usize..10,
        reps in 4usize..6,
        seed in any::<u64>(),
        sides in prop::array::uniform4(0usize..20),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tile = Array2::from_shape_fn((t1, t2), |_| rng.random_range(0.0..1.0));
        let n = t1.max(t2) * reps;
        let err = check_continuation(&tile, n, t1, t2, sides);
        prop_assert!(err <= 1e-9, "error {}", err);
    }

    #[test]
    fn inscribed_square_fits(n in 16usize..200, angle in -45.0f64..45.0) {
        let m = inscribed_size(n, angle);
        prop_assert!(m >= 1 && m <= n);
        let (sin, cos) = angle.to_radians().sin_cos();
        prop_assert!(m as f64 <= n as f64 / (sin.abs() + cos.abs()) + 1e-9);
        // The next size up must already leave the input at some corner.
        prop_assert!(m + 2 > ((n as f64) / (sin.abs() + cos.abs())).floor() as usize);
    }
}

fn spec(background: Background, angle: f64) -> SynthSpec {
    SynthSpec {
        n: 128,
        background,
        angle_degrees: angle,
        shading: 0.0,
        noise_sigma: 0.0,
        anomalies: vec![],
        seed: 0,
    }
}

#[test]
fn direction_is_recovered() {
    for background in [Background::sinusoidal(32.0, 27.0), Background::rectangles()] {
        for angle in [-10.0, 10.0, 25.0, 40.0] {
            let (img, _) = generate(&spec(background.clone(), angle)).unwrap();
            let est = estimate_direction(img.view()).unwrap();
            assert!((est - angle).abs() <= 2.0, "{background:?} at {angle}: {est}");
        }
    }
}

#[test]
fn rotation_round_trip_is_accurate_inside() {
    let (img, _) = generate(&spec(Background::sinusoidal(32.0, 27.0), 0.0)).unwrap();
    let n = img.nrows();
    let c = (n as f64 - 1.0) / 2.0;
    for angle in [-10.0, 10.0, 25.0, 40.0] {
        let (there, _) = rotate(img.view(), angle, n);
        let (back, _) = rotate(there.view(), -angle, n);
        let mut worst = 0.0f64;
        for ((i, j), v) in back.indexed_iter() {
            let r = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
            if r < 0.45 * n as f64 {
                worst = worst.max((v - img[[i, j]]).abs());
            }
        }
        assert!(worst <= 0.02, "angle {angle}: {worst}");
    }
}

#[test]
fn reference_of_axis_aligned_image_matches_clean() {
    let mut s = spec(Background::sinusoidal(32.0, 32.0), 0.0);
    s.noise_sigma = 0.01;
    let (img, truth) = generate(&s).unwrap();
    let with = build_reference(img.view(), &PsdConfig::default(), &ReferenceOptions::default()).unwrap();
    let without = build_reference(
        img.view(),
        &PsdConfig::default(),
        &ReferenceOptions {
            enable_rotation: false,
            ..ReferenceOptions::default()
        },
    )
    .unwrap();
    assert!(with.plan.is_identity());
    assert!(with.estimated_angle.unwrap().abs() < 0.5);
    assert_eq!(with.reference, without.reference);
    let err = (&with.reference - &truth.clean).iter().map(|v| v.abs()).sum::<f64>() / (128.0 * 128.0);
    assert!(err < 0.02, "mean error {err}");
}

#[test]
fn reference_of_rotated_image_tracks_clean_background() {
    let mut s = spec(Background::sinusoidal(30.0, 36.0), 12.0);
    s.noise_sigma = 0.01;
    let (img, truth) = generate(&s).unwrap();
    let out = build_reference(img.view(), &PsdConfig::default(), &ReferenceOptions::default()).unwrap();
    assert!((out.plan.angle_degrees - 12.0).abs() < 2.0);
    assert_eq!(out.reference.dim(), img.dim());
    let mut total = 0.0;
    let mut count = 0.0;
    for ((i, j), v) in out.reference.indexed_iter() {
        if out.validity[[i, j]] {
            total += (v - truth.clean[[i, j]]).abs();
            count += 1.0;
        }
    }
    assert!(count > 0.9 * (128.0 * 128.0));
    assert!(total / count < 0.03, "mean error {}", total / count);
}

#[test]
fn failures_carry_their_stage() {
    let flat = Array2::from_elem((64, 64), 0.5);
    let err = build_reference(flat.view(), &PsdConfig::default(), &ReferenceOptions::default()).unwrap_err();
    match &err {
        psd::Error::Stage { stage, .. } => assert_eq!(stage, "direction estimation"),
        other => panic!("unexpected error {other:?}"),
    }
    assert!(matches!(err.root(), psd::Error::NoPeriodicity));
    assert!(err.to_string().starts_with("direction estimation failed"));
}
