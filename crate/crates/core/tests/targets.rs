mod common;

use bitvi::targets::{grid_eval, TargetSpec};
use bitvi::{Error, TargetDensity};
use common::*;
use rand::Rng;

const ZOO: [&str; 7] = [
    "gmm1d",
    "mixture2d",
    "neals_funnel",
    "two_modal_gaussian",
    "ring",
    "banana",
    "equidistant_gmm",
];

fn target(name: &str) -> impl TargetDensity {
    TargetSpec::by_name(name).unwrap().build().unwrap()
}

/// Midpoint rule over `[-4, 4)^D` with `n` points per axis.
fn mass_in_box(t: &impl TargetDensity, n: usize) -> f64 {
    let h = 8.0 / n as f64;
    let mid = |i: usize| -4.0 + (i as f64 + 0.5) * h;
    match t.dims() {
        1 => (0..n).map(|i| t.log_density(&[mid(i)]).exp() * h).sum(),
        2 => (0..n)
            .flat_map(|i| (0..n).map(move |k| (i, k)))
            .map(|(i, k)| t.log_density(&[mid(i), mid(k)]).exp() * h * h)
            .sum(),
        d => panic!("unexpected dims {d}"),
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for name in ZOO {
        let t = target(name);
        let mut r = rng(1);
        let dims = t.dims();
        for _ in 0..100 {
            let x: Vec<f64> = (0..dims).map(|_| r.random_range(-3.5..3.5)).collect();
            let mut g = vec![0.0; dims];
            assert!(t.gradient(&x, &mut g), "{name} has no gradient");
            let fd = central_diff(|y| t.log_density(y), &x, 1e-5);
            for d in 0..dims {
                let err = (g[d] - fd[d]).abs() / g[d].abs().max(fd[d].abs()).max(1.0);
                assert!(err < 1e-6, "{name} at {x:?}: {} vs {}", g[d], fd[d]);
            }
        }
    }
}

#[test]
fn default_targets_concentrate_in_the_plotting_box() {
    for name in ZOO {
        let t = target(name);
        assert!(t.is_normalized());
        let n = if t.dims() == 1 { 100_000 } else { 800 };
        let m = mass_in_box(&t, n);
        assert!(m >= 0.999, "{name}: {m}");
        assert!(m <= 1.0 + 1e-3, "{name}: {m}");
    }
}

#[test]
fn two_modal_gaussian_is_point_symmetric() {
    let t = target("two_modal_gaussian");
    let mut r = rng(2);
    for _ in 0..100 {
        let x = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)];
        assert_eq!(t.log_density(&x), t.log_density(&[-x[0], -x[1]]));
    }
}

#[test]
fn ring_is_radially_symmetric_and_peaks_on_the_circle() {
    let t = target("ring");
    let on = |a: f64| t.log_density(&[2.0 * a.cos(), 2.0 * a.sin()]);
    let peak = on(0.0);
    for k in 0..32 {
        let a = k as f64 * std::f64::consts::TAU / 32.0;
        assert!((on(a) - peak).abs() < 1e-12);
        for r in [1.5, 1.9, 2.1, 2.5] {
            assert!(t.log_density(&[r * a.cos(), r * a.sin()]) < peak);
        }
    }
}

#[test]
fn equidistant_components_carry_equal_mass() {
    let k = 4;
    let t = TargetSpec::EquidistantGmm {
        components: k,
        sigma: 0.05,
    }
    .build()
    .unwrap();
    let n = 10_000;
    let h = 1.0 / n as f64;
    let mut cells = vec![0.0; k];
    for i in 0..n {
        let x = (i as f64 + 0.5) * h;
        cells[(x * k as f64) as usize] += t.log_density(&[x]).exp() * h;
    }
    for m in cells {
        assert!((m - 1.0 / k as f64).abs() < 0.02, "{m}");
    }
}

#[test]
fn gaussian_grid_sums_to_one() {
    let t = TargetSpec::Gaussian {
        mean: vec![0.3, -0.2],
        std: vec![0.8, 1.1],
    }
    .build()
    .unwrap();
    let grid = grid_eval(&t, 200, &[(-4.0, 4.0); 2]).unwrap();
    assert_eq!(grid.values.len(), 200 * 200);
    assert!((grid.mass() - 1.0).abs() < 0.01);
}

#[test]
fn grid_rows_follow_the_first_axis() {
    let t = TargetSpec::Gaussian {
        mean: vec![1.0, 0.0],
        std: vec![0.5, 3.0],
    }
    .build()
    .unwrap();
    let grid = grid_eval(&t, 4, &[(-4.0, 4.0); 2]).unwrap();
    let csv = grid.to_csv_string().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,density"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&first[..2], &[-3.0, -3.0]);
    assert!((first[2] - t.log_density(&[-3.0, -3.0]).exp()).abs() < 1e-15);
    assert_eq!(csv.lines().count(), 17);
}

#[test]
fn grids_refuse_high_dimensions() {
    let t = TargetSpec::StandardNormal { dims: 3 }.build().unwrap();
    assert!(matches!(grid_eval(&t, 10, &[(-1.0, 1.0); 3]), Err(Error::Unsupported(_))));
    let t = TargetSpec::StandardNormal { dims: 1 }.build().unwrap();
    assert!(grid_eval(&t, 1, &[(-1.0, 1.0)]).is_err());
}

#[test]
fn bad_parameters_are_rejected() {
    let bad = [
        r#"{"name": "ring", "std": -1}"#,
        r#"{"name": "gmm1d", "weights": [1.0], "means": [0.0, 1.0], "stds": [1.0]}"#,
        r#"{"name": "equidistant_gmm", "components": 0}"#,
        r#"{"name": "uniform", "ranges": [[1.0, 0.0]]}"#,
    ];
    for json in bad {
        let spec: TargetSpec = serde_json::from_str(json).unwrap();
        assert!(spec.build().is_err(), "{json}");
    }
    assert!(TargetSpec::by_name("rosenbrock").is_err());
    assert!(serde_json::from_str::<TargetSpec>(r#"{"name": "ring", "radius": 1, "sd": 2}"#).is_err());
}
