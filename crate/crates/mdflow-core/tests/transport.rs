use mdflow_core::linalg::*;
use mdflow_core::transport::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_line(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    DiscreteMeasure::normalized(1, xs.iter().map(|&x| [x, 0.0, 0.0]).collect(), ws).unwrap()
}

fn random_cloud(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> DiscreteMeasure {
    let pts: Vec<Vecd> = (0..n)
        .map(|_| {
            let mut p = ZERO;
            for x in p.iter_mut().take(dim) {
                *x = rng.random_range(-2.0..2.0);
            }
            p
        })
        .collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    DiscreteMeasure::normalized(dim, pts, ws).unwrap()
}

#[test]
fn lp_matches_quantile_formula_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let m = rng.random_range(1..40);
        let mu = random_line(&mut rng, n);
        let nu = random_line(&mut rng, m);
        let (d, plan) = wasserstein(&mu, &nu).unwrap();
        let q = wasserstein_1d(&mu, &nu).unwrap();
        assert!((d * d - q * q).abs() <= 1e-10, "lp {d} vs quantile {q}");
        assert!(certify(&mu, &nu, &plan, 1e-9).passed);
    }
}

#[test]
fn lp_plans_are_certified_in_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(2..30), rng.random_range(2..30));
        let mu = random_cloud(&mut rng, 2, n);
        let nu = random_cloud(&mut rng, 2, m);
        let (_, plan) = wasserstein(&mu, &nu).unwrap();
        let cert = certify(&mu, &nu, &plan, 1e-9);
        assert!(cert.passed, "{cert:?}");
    }
}

#[test]
fn shift_example_pseudo_distance_is_four() {
    // base ½δ(-1,0) + ½δ(1,0); both targets are reflections of each other
    let eps = 0.01;
    let base =
        DiscreteMeasure::new(2, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], vec![0.5, 0.5]).unwrap();
    let mu1 =
        DiscreteMeasure::new(2, vec![[-eps, 1.0, 0.0], [eps, -1.0, 0.0]], vec![0.5, 0.5]).unwrap();
    let mu2 =
        DiscreteMeasure::new(2, vec![[eps, 1.0, 0.0], [-eps, -1.0, 0.0]], vec![0.5, 0.5]).unwrap();
    let t1 = vec![[-eps, 1.0, 0.0], [eps, -1.0, 0.0]];
    let t2 = vec![[-eps, -1.0, 0.0], [eps, 1.0, 0.0]];
    let d = pseudo_wasserstein_from_maps(&base, &t1, &t2);
    assert!((d * d - 4.0).abs() <= 1e-12);
    // the optimal plans pick the same maps
    let d_lp = pseudo_wasserstein(&base, &mu1, &mu2).unwrap();
    assert!((d_lp * d_lp - 4.0).abs() <= 1e-12);
    // while the measures themselves are close
    assert!(wasserstein(&mu1, &mu2).unwrap().0 <= 2.0 * eps + 1e-12);
}

#[test]
fn pseudo_distance_dominates_wasserstein_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<f64> = (0..200).map(|i| -1.0 + (i as f64 + 0.5) / 100.0).collect();
    let base = DiscreteMeasure::line(&xs, &[1.0 / 200.0; 200]).unwrap();
    for _ in 0..100 {
        let a = random_line(&mut rng, 12);
        let b = random_line(&mut rng, 9);
        let pd = pseudo_wasserstein(&base, &a, &b).unwrap();
        let w = wasserstein(&a, &b).unwrap().0;
        assert!(pd >= w - 1e-10);
    }
}

#[test]
fn geodesic_has_constant_speed_and_bounded_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // spiky measure against the uniform measure on [0, 1]
    let mu = DiscreteMeasure::normalized(
        1,
        (0..5)
            .map(|_| [rng.random_range(0.0..1.0), 0.0, 0.0])
            .collect(),
        vec![1.0; 5],
    )
    .unwrap();
    let k = 20_000;
    let ex: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
    let e = DiscreteMeasure::line(&ex, &vec![1.0 / k as f64; k]).unwrap();
    let base = e.clone();
    let full = wasserstein_1d(&mu, &e).unwrap();
    for s in [0.1, 0.2, 0.4] {
        let ms = generalized_geodesic(&base, &mu, &e, s).unwrap();
        let ds = pseudo_wasserstein(&base, &mu, &ms).unwrap();
        assert!((ds - s * full).abs() <= 1e-6 * s * full);
        for v in histogram(&ms, 0.0, 1.0, 50) {
            assert!(v <= (1.0 / s) * 1.05, "density {v} at s {s}");
        }
    }
}

#[test]
fn integer_masses_separate_tiny_weights() {
    let ws = [1.0 - 2e-30, 1e-30, 1e-30];
    let mu = DiscreteMeasure::new(
        1,
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        ws.to_vec(),
    )
    .unwrap();
    let nu = DiscreteMeasure::new(
        1,
        vec![[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [2.0, 0.0, 0.0]],
        ws.to_vec(),
    )
    .unwrap();
    let opts = LpOptions {
        mass_bits: Some(120),
        ..LpOptions::default()
    };
    let (d, _) = wasserstein_with(&mu, &nu, &opts).unwrap();
    // only the middle atom moves: cost 1e-30 * 0.25
    // only the middle atom moves; 1e-30 is carried with about 1e6 integer units
    assert!((d * d - 0.25e-30).abs() <= 1e-6 * 0.25e-30, "{d}");
}

#[test]
fn minkowski_inequality_on_convex_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let disk = |rng: &mut ChaCha8Rng, r: f64, c: f64| -> Vec<Vecd> {
        (0..4000)
            .filter_map(|_| {
                let p = [rng.random_range(-r..r), rng.random_range(-r..r), 0.0];
                (norm(&p) <= r).then_some([p[0] + c, p[1], 0.0])
            })
            .collect()
    };
    let a = disk(&mut rng, 1.0, 0.0);
    let b = disk(&mut rng, 0.5, 3.0);
    let check = minkowski_density_check(2, &a, &b, 0.05).unwrap();
    assert!(check.passed, "{check:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triangle_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, 2, 8);
        let b = random_cloud(&mut rng, 2, 8);
        let c = random_cloud(&mut rng, 2, 8);
        let ab = wasserstein(&a, &b).unwrap().0;
        let bc = wasserstein(&b, &c).unwrap().0;
        let ac = wasserstein(&a, &c).unwrap().0;
        prop_assert!(ac <= ab + bc + 1e-10);
    }

    #[test]
    fn distance_is_symmetric_and_translation_covariant(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, 2, 6);
        let b = random_cloud(&mut rng, 2, 7);
        let ab = wasserstein(&a, &b).unwrap().0;
        let ba = wasserstein(&b, &a).unwrap().0;
        prop_assert!((ab - ba).abs() <= 1e-10);
        let moved = DiscreteMeasure::new(2, a.points.iter().map(|p| [p[0] + shift, p[1], 0.0]).collect(), a.weights.clone()).unwrap();
        let d = wasserstein(&a, &moved).unwrap().0;
        prop_assert!((d - shift.abs()).abs() <= 1e-10);
    }
}
