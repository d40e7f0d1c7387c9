use empirical_wasserstein::exact_ot::{
    brute_force_wp, solve_wp, solve_wp_with, Solver, MARGINAL_TOL,
};
use empirical_wasserstein::measures::{DiscreteMeasure, Point};
use empirical_wasserstein::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let c: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    DiscreteMeasure::from_flat(d, c, vec![1.0 / n as f64; n]).unwrap()
}

fn weighted_line(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    DiscreteMeasure::from_flat(1, x, w.iter().map(|v| v / s).collect()).unwrap()
}

/// `W_p^p` on the line through the quantile coupling.
fn quantile_wpp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> f64 {
    let sorted = |m: &DiscreteMeasure| {
        let mut v: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.point(i)[0], m.weight(i))).collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        v
    };
    let (a, b) = (sorted(mu), sorted(nu));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let m = ra.min(rb);
        total += m * (a[i].0 - b[j].0).abs().powf(p);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
        }
    }
    total
}

#[test]
fn dirac_example() {
    let mu = DiscreteMeasure::new(vec![Point::new(vec![0.0, 0.0]).unwrap()], vec![1.0]).unwrap();
    let nu = DiscreteMeasure::new(vec![Point::new(vec![3.0, 0.0]).unwrap()], vec![1.0]).unwrap();
    let s = solve_wp(&mu, &nu, 2.0).unwrap();
    assert!((s.distance - 3.0).abs() < 1e-12);
    assert_eq!(s.plan.edges.len(), 1);
}

#[test]
fn identical_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mu = weighted_line(&mut rng, 9);
    let s = solve_wp(&mu, &mu, 1.5).unwrap();
    assert!(s.distance.abs() < 1e-12);
    assert!(s.plan.off_diagonal_mass(&mu, &mu) < 1e-12);
}

#[test]
fn brute_force_examples() {
    let a = DiscreteMeasure::new(vec![Point::new(vec![0.0, 1.0]).unwrap()], vec![1.0]).unwrap();
    let b = DiscreteMeasure::new(vec![Point::new(vec![3.0, 5.0]).unwrap()], vec![1.0]).unwrap();
    assert!((brute_force_wp(&a, &b, 1.0).unwrap() - 5.0).abs() < 1e-12);
    let l = DiscreteMeasure::from_flat(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    assert_eq!(brute_force_wp(&l, &l, 2.0).unwrap(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mu = uniform_cloud(&mut rng, 5, 2);
        let nu = uniform_cloud(&mut rng, 5, 2);
        let exact = solve_wp(&mu, &nu, 1.0).unwrap().distance;
        assert!((exact - brute_force_wp(&mu, &nu, 1.0).unwrap()).abs() < 1e-9);
    }
    let mu = uniform_cloud(&mut rng, 6, 3);
    let nu = uniform_cloud(&mut rng, 6, 3);
    let exact = solve_wp(&mu, &nu, 2.0).unwrap().distance;
    assert!((exact - brute_force_wp(&mu, &nu, 2.0).unwrap()).abs() < 1e-9);
}

#[test]
fn brute_force_guards() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let big = uniform_cloud(&mut rng, 9, 1);
    assert!(matches!(brute_force_wp(&big, &big, 1.0), Err(Error::TooLarge(_))));
    let w = weighted_line(&mut rng, 4);
    assert!(brute_force_wp(&w, &w, 1.0).is_err());
}

#[test]
fn input_errors() {
    let a = DiscreteMeasure::from_flat(1, vec![0.0], vec![1.0]).unwrap();
    let half = DiscreteMeasure::from_flat(1, vec![0.0], vec![0.5]).unwrap();
    assert!(matches!(solve_wp(&a, &half, 1.0), Err(Error::MassMismatch { .. })));
    let b = DiscreteMeasure::from_flat(2, vec![0.0, 0.0], vec![1.0]).unwrap();
    assert!(matches!(solve_wp(&a, &b, 1.0), Err(Error::DimensionMismatch { .. })));
    assert!(solve_wp(&a, &a, 0.5).is_err());
}

#[test]
fn weighted_line_matches_quantile_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..60 {
        let mu = weighted_line(&mut rng, 3 + k % 17);
        let nu = weighted_line(&mut rng, 2 + k % 13);
        for p in [1.0, 1.5, 2.0, 3.0] {
            let s = solve_wp(&mu, &nu, p).unwrap();
            let oracle = quantile_wpp(&mu, &nu, p);
            assert!(
                (s.plan.total_cost_p - oracle).abs() <= 1e-9 * oracle.max(1.0),
                "{} vs {oracle}",
                s.plan.total_cost_p
            );
            s.plan.check(&mu, &nu, MARGINAL_TOL).unwrap();
        }
    }
}

#[test]
fn solvers_agree_on_equal_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mu = uniform_cloud(&mut rng, 60, 3);
        let nu = uniform_cloud(&mut rng, 60, 3);
        let a = solve_wp_with(&mu, &nu, 1.0, Solver::Assignment).unwrap();
        let b = solve_wp_with(&mu, &nu, 1.0, Solver::NetworkSimplex).unwrap();
        assert!((a.distance - b.distance).abs() < 1e-9);
        assert!(a.certificate.relative_gap <= 1e-9 && b.certificate.relative_gap <= 1e-9);
    }
}

#[test]
fn rectangular_problem_is_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mu = uniform_cloud(&mut rng, 40, 2);
    let nu = uniform_cloud(&mut rng, 150, 2);
    let s = solve_wp(&mu, &nu, 1.0).unwrap();
    s.plan.check(&mu, &nu, MARGINAL_TOL).unwrap();
    assert!(s.certificate.relative_gap <= 1e-9);
    assert!(s.plan.edges.len() <= 40 + 150 - 1);
}

fn triple() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..9, 1usize..4).prop_flat_map(|(n, d)| {
        let c = || prop::collection::vec(-5.0f64..5.0, n * d);
        (Just(n), Just(d), c(), c(), c())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_properties((n, d, a, b, c) in triple(), p in 1.0f64..3.0, scale in -3.0f64..3.0) {
        let m = |x: Vec<f64>| DiscreteMeasure::from_flat(d, x, vec![1.0 / n as f64; n]).unwrap();
        let (x, y, z) = (m(a), m(b), m(c));
        let w = |u: &DiscreteMeasure, v: &DiscreteMeasure, p: f64| solve_wp(u, v, p).unwrap().distance;
        let xy = w(&x, &y, p);
        prop_assert!((xy - w(&y, &x, p)).abs() < 1e-9);
        prop_assert!(xy <= w(&x, &z, p) + w(&z, &y, p) + 1e-9);
        prop_assert!(w(&x, &y, 1.0) <= w(&x, &y, p) + 1e-9);
        prop_assert!(xy <= w(&x, &y, p + 1.0) + 1e-9);
        let scaled = w(&x.scaled(scale), &y.scaled(scale), p);
        prop_assert!((scaled - scale.abs() * xy).abs() < 1e-9 * (1.0 + xy * scale.abs()));
    }
}
