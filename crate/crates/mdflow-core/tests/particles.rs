use mdflow_core::geometry::*;
use mdflow_core::linalg::*;
use mdflow_core::particles::*;
use mdflow_core::potentials::*;
use mdflow_core::transport::*;

struct Scenario {
    name: &'static str,
    dom: Domain,
    pot: PotentialPair,
    ens: ParticleEnsemble,
    t_end: f64,
}

fn scenarios() -> Vec<Scenario> {
    let gauss = |a: f64| {
        PotentialPair::new(Potential::quadratic(a), Potential::Gaussian { c: 0.5 }).unwrap()
    };
    vec![
        Scenario {
            name: "expanding ball, outward drift",
            dom: Domain::Ball(Ball::moving(2, ZERO, 1.0, 0.5, 1.0).unwrap()),
            pot: PotentialPair::confinement(Potential::quadratic(-0.5)),
            ens: uniform_ball(2, 60, ZERO, 0.9, 1).unwrap(),
            t_end: 1.0,
        },
        Scenario {
            name: "stationary ball, attraction",
            dom: Domain::Ball(Ball::new(2, ZERO, 1.0).unwrap()),
            pot: gauss(0.5),
            ens: uniform_ball(2, 60, [0.2, 0.0, 0.0], 0.7, 2).unwrap(),
            t_end: 1.0,
        },
        Scenario {
            name: "moving box, off-center well",
            dom: Domain::Box(
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
            pot: PotentialPair::confinement(Potential::Quadratic {
                a: 1.0,
                center: [2.0, 0.0, 0.0],
            }),
            ens: uniform_ball(2, 60, ZERO, 0.8, 3).unwrap(),
            t_end: 1.0,
        },
        Scenario {
            name: "shrinking interval",
            dom: Domain::Box(
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
            pot: gauss(-0.3),
            ens: uniform_ball(1, 80, ZERO, 0.95, 4).unwrap(),
            t_end: 1.0,
        },
        Scenario {
            name: "moving half-space, saddle",
            dom: Domain::HalfSpace(HalfSpace::new(2, [1.0, 1.0, 0.0], 0.0, 0.3, 1.0).unwrap()),
            pot: PotentialPair::confinement(Potential::Saddle),
            ens: uniform_ball(2, 60, [-1.0, -1.0, 0.0], 0.5, 5).unwrap(),
            t_end: 1.0,
        },
    ]
}

#[test]
fn a_priori_estimates_hold_on_catalog() {
    for sc in scenarios() {
        for dt in [1e-2, 5e-3] {
            let opts = SimOptions {
                record_every: 5,
                metric: SpeedMetric::Pairing,
                keep_snapshots: true,
            };
            let (_, rec) = simulate(&sc.ens, &sc.pot, &sc.dom, sc.t_end, dt, &opts).unwrap();
            let m2_0 = sc.ens.second_moment();
            let k = EstimateConstants::new(&sc.pot, &sc.dom, m2_0, sc.t_end);
            assert_eq!(rec.masses, sc.ens.masses, "{}", sc.name);
            for (i, (&t, snap)) in rec.times.iter().zip(&rec.snapshots).enumerate() {
                for p in snap {
                    assert!(sc.dom.contains(p, t), "{}: escaped at t {t}", sc.name);
                }
                assert!(
                    rec.second_moment[i] <= k.moment_bound_at(m2_0, t),
                    "{}: m2 at t {t}",
                    sc.name
                );
                for (p, p0) in snap.iter().zip(&sc.ens.positions) {
                    assert!(
                        norm2(p) <= k.position_bound(norm2(p0)),
                        "{}: growth",
                        sc.name
                    );
                }
                for (j, snap_j) in rec.snapshots.iter().enumerate().take(i) {
                    // pairing cost bounds the distance from above
                    let pair = ksum(
                        snap.iter()
                            .zip(snap_j)
                            .zip(&rec.masses)
                            .map(|((a, b), m)| m * dist2(a, b)),
                    );
                    let gap = t - rec.times[j];
                    assert!(pair.sqrt() <= k.holder * gap.sqrt(), "{}: Hölder", sc.name);
                }
            }
        }
    }
}

#[test]
fn interior_particle_under_quadratic_drift_is_explicit_euler() {
    let dom = Ball::new(2, ZERO, 5.0).unwrap();
    let pot = PotentialPair::confinement(Potential::quadratic(0.3));
    let e = ParticleEnsemble::new(2, vec![[0.5, 0.2, 0.0]], vec![1.0], 0.0).unwrap();
    let (end, _) = simulate(&e, &pot, &dom, 0.5, 0.01, &SimOptions::default()).unwrap();
    let f = (1.0f64 - 0.006).powi(50);
    assert!((end.positions[0][0] - 0.5 * f).abs() <= 1e-13);
    assert!((end.positions[0][1] - 0.2 * f).abs() <= 1e-13);
}

#[test]
fn particle_rides_the_boundary_of_an_expanding_ball() {
    let dom = Ball::moving(2, ZERO, 1.0, 0.25, 1.0).unwrap();
    let pot = PotentialPair::confinement(Potential::Quadratic {
        a: 1.0,
        center: [5.0, 0.0, 0.0],
    });
    let e = ParticleEnsemble::new(2, vec![[0.6, 0.8, 0.0]], vec![1.0], 0.0).unwrap();
    let mut cur = e.clone();
    for _ in 0..100 {
        cur = step(&cur, &pot, &dom, 0.01).unwrap();
        assert!((norm(&cur.positions[0]) - dom.radius(cur.time)).abs() <= 1e-12);
    }
    // dense reference: the angle relaxes towards the well on the x-axis
    let (dense, _) = simulate(
        &e,
        &pot,
        &dom,
        1.0,
        1e-4,
        &SimOptions {
            record_every: usize::MAX,
            ..SimOptions::default()
        },
    )
    .unwrap();
    assert!(dist(&cur.positions[0], &dense.positions[0]) <= 2e-2);
    assert!(cur.positions[0][1] < 0.8 * dom.radius(1.0) * 0.8);
}

#[test]
fn stationary_wall_keeps_tangential_drift() {
    let dom = BoxDomain::new(2, [-1.0, -1.0, 0.0], [1.0, 1.0, 0.0]).unwrap();
    let pot = PotentialPair::confinement(Potential::Quadratic {
        a: 0.5,
        center: [3.0, 2.0, 0.0],
    });
    let e = ParticleEnsemble::new(2, vec![[1.0, 0.0, 0.0]], vec![1.0], 0.0).unwrap();
    let e1 = step(&e, &pot, &dom, 0.01).unwrap();
    // w = (2, 2); the normal part is clipped, the tangential part survives
    assert!((e1.positions[0][0] - 1.0).abs() <= 1e-15);
    assert!((e1.positions[0][1] - 0.02).abs() <= 1e-15);
}

#[test]
fn interaction_velocity_matches_brute_force() {
    let pot = PotentialPair::new(Potential::Zero, Potential::quadratic(1.0)).unwrap();
    let pts = vec![[0.1, 0.2, 0.0], [-0.7, 0.4, 0.0], [0.3, -0.9, 0.0]];
    let ms = vec![0.2, 0.5, 0.3];
    let e = ParticleEnsemble::new(2, pts.clone(), ms.clone(), 0.0).unwrap();
    for x in &pts {
        let mut want = [0.0; 3];
        for (y, m) in pts.iter().zip(&ms) {
            for i in 0..2 {
                want[i] -= m * 2.0 * (x[i] - y[i]);
            }
        }
        let got = interaction_velocity(&e, &pot, x);
        assert!(dist(&got, &want) <= 1e-15);
    }
}

fn paired(dom: &Ball, shift: f64, seed: u64) -> (ParticleEnsemble, ParticleEnsemble) {
    let a = uniform_ball(2, 40, ZERO, 0.8, seed).unwrap();
    let moved: Vec<Vecd> = a
        .positions
        .iter()
        .map(|p| project_point(&[p[0] + shift, p[1] - 0.5 * shift, 0.0], 0.0, dom).unwrap())
        .collect();
    let b = ParticleEnsemble::new(2, moved, a.masses.clone(), 0.0).unwrap();
    (a, b)
}

#[test]
fn discrete_stability_on_convex_ball() {
    let dom = Ball::new(2, ZERO, 1.0).unwrap();
    let pot =
        PotentialPair::new(Potential::quadratic(0.5), Potential::Gaussian { c: 0.5 }).unwrap();
    let c = -pot.lambda_v() + (-pot.lambda_w()).max(0.0);
    for shift in [0.05, 0.2] {
        let (a, b) = paired(&dom, shift, 11);
        let d0 = wasserstein(&a.to_measure(), &b.to_measure()).unwrap().0;
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let opts = SimOptions {
                record_every: (0.1 / dt) as usize,
                metric: SpeedMetric::Pairing,
                keep_snapshots: true,
            };
            let (_, ra) = simulate(&a, &pot, &dom, 1.0, dt, &opts).unwrap();
            let (_, rb) = simulate(&b, &pot, &dom, 1.0, dt, &opts).unwrap();
            for ((t, sa), sb) in ra.times.iter().zip(&ra.snapshots).zip(&rb.snapshots) {
                let ma = DiscreteMeasure::new(2, sa.clone(), a.masses.clone()).unwrap();
                let mb = DiscreteMeasure::new(2, sb.clone(), b.masses.clone()).unwrap();
                let d = wasserstein(&ma, &mb).unwrap().0;
                assert!(
                    d / d0 <= (c * t).exp() * 1.1,
                    "shift {shift} dt {dt} t {t}: {}",
                    d / d0
                );
            }
        }
    }
}

#[test]
fn maximal_slope_residual_is_first_order_with_boundary_riding() {
    let dom = Ball::moving(2, ZERO, 1.0, 0.5, 1.0).unwrap();
    let pot =
        PotentialPair::new(Potential::quadratic(-2.0), Potential::Gaussian { c: 0.2 }).unwrap();
    let e = uniform_ball(2, 30, ZERO, 0.95, 8).unwrap();
    let mut ks = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3] {
        let opts = SimOptions {
            record_every: 1,
            metric: SpeedMetric::Exact,
            keep_snapshots: false,
        };
        let (end, rec) = simulate(&e, &pot, &dom, 0.5, dt, &opts).unwrap();
        // mass is on the moving boundary by the end of the run
        assert!(
            end.positions
                .iter()
                .filter(|p| (norm(p) - dom.radius(end.time)).abs() < 1e-9)
                .count()
                >= 20
        );
        assert!(rec.extra_term.iter().any(|&x| x > 0.0));
        let worst = maximal_slope_audit(&rec).into_iter().fold(0.0f64, f64::min);
        ks.push(-worst / dt);
    }
    // one constant serves every dt: refinement never needs a larger K
    let k0 = ks[0].max(1e-9);
    assert!(ks.iter().all(|&k| k <= 1.5 * k0), "{ks:?}");
}

#[test]
fn extra_term_vanishes_on_stationary_domains() {
    let dom = Ball::new(2, ZERO, 1.0).unwrap();
    let pot = PotentialPair::confinement(Potential::quadratic(-1.0));
    let e = uniform_ball(2, 30, ZERO, 0.9, 9).unwrap();
    let opts = SimOptions {
        record_every: 1,
        metric: SpeedMetric::Pairing,
        keep_snapshots: false,
    };
    let (_, rec) = simulate(&e, &pot, &dom, 1.0, 1e-2, &opts).unwrap();
    assert!(rec.extra_term.iter().all(|x| x.abs() <= 1e-12));
}
