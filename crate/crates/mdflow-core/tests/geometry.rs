use mdflow_core::geometry::*;
use mdflow_core::linalg::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(v: [f64; 3]) -> Option<Vecd> {
    let l = norm(&v);
    (l > 1e-3).then(|| scale(&v, 1.0 / l))
}

fn vec3() -> impl Strategy<Value = Vecd> {
    prop::array::uniform3(-10.0f64..10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn projection_is_idempotent(v in vec3(), n in vec3(), c in -5.0f64..5.0) {
        let Some(n) = unit(n) else { return Ok(()) };
        let p = project_with(&v, &n, c);
        let pp = project_with(&p, &n, c);
        prop_assert!(dist(&p, &pp) <= 1e-12 * (1.0 + norm(&v)));
    }

    #[test]
    fn projection_caps_normal_component(v in vec3(), n in vec3(), c in -5.0f64..5.0) {
        let Some(n) = unit(n) else { return Ok(()) };
        let p = project_with(&v, &n, c);
        prop_assert!(dot(&p, &n) <= c + 1e-12 * (1.0 + norm(&v)));
    }

    #[test]
    fn projection_preserves_tangential_part(v in vec3(), n in vec3(), c in -5.0f64..5.0) {
        let Some(n) = unit(n) else { return Ok(()) };
        let p = project_with(&v, &n, c);
        let tv = axpy(&v, -dot(&v, &n), &n);
        let tp = axpy(&p, -dot(&p, &n), &n);
        prop_assert!(dist(&tv, &tp) <= 1e-12 * (1.0 + norm(&v)));
    }

    #[test]
    fn boundary_energy_is_midpoint_convex(a in vec3(), b in vec3(), n in vec3(), c in -5.0f64..5.0) {
        let Some(n) = unit(n) else { return Ok(()) };
        let m = scale(&add(&a, &b), 0.5);
        let lhs = boundary_energy_density(&m, &n, c);
        let rhs = 0.5 * (boundary_energy_density(&a, &n, c) + boundary_energy_density(&b, &n, c));
        prop_assert!(lhs <= rhs + 1e-10 * (1.0 + norm2(&a) + norm2(&b)));
    }

    #[test]
    fn interior_velocities_pass_through(v in vec3(), r in 0.0f64..0.9, th in 0.0f64..std::f64::consts::TAU) {
        let ball = Ball::new(2, ZERO, 1.0).unwrap();
        let x = [r * th.cos(), r * th.sin(), 0.0];
        let v = [v[0], v[1], 0.0];
        prop_assert_eq!(project_velocity(&v, &x, 0.0, &ball).unwrap(), v);
    }
}

fn catalog() -> Vec<(&'static str, Domain, f64)> {
    let square = Polytope::new(
        2,
        vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [1.0, 1.0, 0.0],
        ],
        vec![1.0, 1.0, 1.0, 1.0, 1.6],
        vec![0.1, 0.1, -0.05, 0.0, 0.0],
        None,
    )
    .unwrap();
    vec![
        (
            "expanding ball",
            Domain::Ball(Ball::moving(2, [0.2, -0.1, 0.0], 1.0, 0.5, 1.0).unwrap()),
            0.05,
        ),
        (
            "shrinking ball",
            Domain::Ball(Ball::moving(3, ZERO, 1.0, -0.2, 0.5).unwrap()),
            0.05,
        ),
        (
            "moving box",
            Domain::Box(
                BoxDomain::moving(
                    2,
                    [-1.0, -1.0, 0.0],
                    [1.0, 1.0, 0.0],
                    [0.1, 0.0, 0.0],
                    [0.2, -0.1, 0.0],
                    None,
                )
                .unwrap(),
            ),
            0.05,
        ),
        (
            "shrinking interval",
            Domain::Box(
                BoxDomain::moving(
                    1,
                    [-1.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0],
                    [0.2, 0.0, 0.0],
                    [-0.2, 0.0, 0.0],
                    None,
                )
                .unwrap(),
            ),
            0.05,
        ),
        (
            "moving half-space",
            Domain::HalfSpace(HalfSpace::new(2, [1.0, 1.0, 0.0], 0.0, 0.3, 1.0).unwrap()),
            0.05,
        ),
        (
            "cosine epigraph",
            Domain::Cosine(CosineEpigraph::default()),
            0.05,
        ),
        ("moving polytope", Domain::Polytope(square), 0.05),
    ]
}

fn sample_inside(dom: &Domain, t: f64, rng: &mut ChaCha8Rng) -> Vecd {
    let (mut lo, mut hi) = dom.bounding_box(t);
    if let Domain::Cosine(_) = dom {
        lo = [-1.0, -1.0, 0.0];
        hi = [4.0, 2.0, 0.0];
    }
    loop {
        let mut x = ZERO;
        for i in 0..dom.dim() {
            x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
        }
        if dom.signed_distance(&x, t) <= 0.0 {
            return x;
        }
    }
}

#[test]
fn retraction_stays_inside_over_the_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, dom, tau) in catalog() {
        for &t in &[0.0, 0.4] {
            for _ in 0..10_000 {
                let x = sample_inside(&dom, t, &mut rng);
                let y = retraction_map(&x, t, tau, &dom).unwrap();
                for s in [t, t + 0.5 * tau, t + tau] {
                    let sd = dom.signed_distance(&y, s);
                    assert!(
                        sd <= dom.boundary_band(s),
                        "{name}: x {x:?} at t {t} maps outside at s {s} (sd {sd:e})"
                    );
                }
            }
        }
    }
}

#[test]
fn catalog_domains_validate() {
    for (name, dom, _) in catalog() {
        let report = validate_domain(&dom, &[0.0, 0.25, 0.5], 400, 11);
        assert!(report.passed, "{name}: {report:?}");
    }
}

#[test]
fn oversized_retraction_step_is_rejected() {
    let dom = Ball::moving(2, ZERO, 1.0, 0.5, 1.0).unwrap();
    assert!(retraction_map(&[0.0; 3], 0.0, 1.0, &dom).is_err());
}

#[test]
fn projection_algebra_large_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        let v: Vecd = [
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ];
        let Some(n) = unit([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]) else {
            continue;
        };
        let c = rng.random_range(-5.0..5.0);
        let p = project_with(&v, &n, c);
        assert!(dist(&p, &project_with(&p, &n, c)) <= 1e-12 * (1.0 + norm(&v)));
        assert!(dot(&p, &n) <= c + 1e-12 * (1.0 + norm(&v)));
    }
}
