use empirical_wasserstein::covering::RhoFunctional;
use empirical_wasserstein::measures::Point;
use empirical_wasserstein::par::Execution;
use empirical_wasserstein::samplers::{
    estimate_moment, fpc_moment_bound, sample_gaussian, sample_heavy_tail, sample_heavy_tail_with,
    sample_kl, sample_kl_with, Decay, Distribution, KLSpec, ScoreDist, DEFAULT_TAIL_TOL,
};
use empirical_wasserstein::Error;
use std::f64::consts::PI;

fn column_var(pts: &[Point], m: usize) -> f64 {
    let n = pts.len() as f64;
    let mean = pts.iter().map(|p| p.coords()[m]).sum::<f64>() / n;
    pts.iter().map(|p| (p.coords()[m] - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn zero_spectrum_gives_zero_points() {
    let spec = KLSpec::new(Decay::Exp { gamma0: 2.0, c0: 0.0 }, ScoreDist::Gaussian, Some(5)).unwrap();
    let pts = sample_kl(&spec, 20, 1);
    assert!(pts.iter().all(|p| p.coords().iter().all(|&x| x == 0.0)));
}

#[test]
fn single_mode_variance() {
    let spec = KLSpec::new(Decay::Exp { gamma0: 3.0, c0: 2.0 }, ScoreDist::Gaussian, Some(1)).unwrap();
    let n = 10_000;
    let pts = sample_kl(&spec, n, 2);
    assert_eq!(pts[0].dim(), 1);
    let v = column_var(&pts, 0);
    let se = 4.0 * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((v - 4.0).abs() < 3.0 * se, "variance {v}");
}

#[test]
fn exp_decay_variance_ratio() {
    let spec = KLSpec::new(Decay::Exp { gamma0: 2.0, c0: 1.0 }, ScoreDist::Gaussian, Some(6)).unwrap();
    let n = 10_000;
    let pts = sample_kl(&spec, n, 3);
    // Relative standard error of a ratio of two independent variance estimates.
    let se = 4.0 * (4.0 / n as f64).sqrt();
    for m in 0..5 {
        let r = column_var(&pts, m) / column_var(&pts, m + 1);
        assert!((r - 4.0).abs() < 3.0 * se, "ratio {r} at m = {m}");
    }
}

#[test]
fn score_laws_are_standardised() {
    for s in [ScoreDist::Gaussian, ScoreDist::Uniform, ScoreDist::Laplace] {
        assert!((s.q_norm(2.0) - 1.0).abs() < 1e-12, "{s}");
    }
    assert!((ScoreDist::Uniform.q_norm(4.0) - 1.8f64.powf(0.25)).abs() < 1e-12);
    assert!((ScoreDist::Laplace.q_norm(4.0) - 6f64.powf(0.25)).abs() < 1e-12);
    assert!((ScoreDist::Gaussian.q_norm(4.0) - 3f64.powf(0.25)).abs() < 1e-12);
}

#[test]
fn fpc_closed_forms() {
    let zeta3: f64 = 1.202_056_903_159_594_3;
    let poly = KLSpec::new(Decay::Poly { b0: 2.0, c0: 1.0 }, ScoreDist::Gaussian, None).unwrap();
    let v = fpc_moment_bound(&poly, &RhoFunctional::Poly { b: 1.0 }, 2.0, 1.0).unwrap();
    assert!((v - zeta3.sqrt()).abs() < 1e-10);
    // sigma_m / tau_m = m^-1 once b0 - b = 1/2.
    let poly = KLSpec::new(Decay::Poly { b0: 1.5, c0: 1.0 }, ScoreDist::Gaussian, None).unwrap();
    let v = fpc_moment_bound(&poly, &RhoFunctional::Poly { b: 1.0 }, 2.0, 1.0).unwrap();
    assert!((v - (PI * PI / 6.0).sqrt()).abs() < 1e-10);

    let exp = KLSpec::new(Decay::Exp { gamma0: 4.0, c0: 1.0 }, ScoreDist::Uniform, None).unwrap();
    let qn = ScoreDist::Uniform.q_norm(3.0);
    let v = fpc_moment_bound(&exp, &RhoFunctional::Exp { gamma: 2.0 }, 3.0, qn).unwrap();
    assert!((v - (4.0f64 / 3.0).sqrt() * qn).abs() < 1e-12);
}

#[test]
fn fpc_divergence() {
    let poly = KLSpec::new(Decay::Poly { b0: 1.0, c0: 1.0 }, ScoreDist::Gaussian, None).unwrap();
    let e = fpc_moment_bound(&poly, &RhoFunctional::Poly { b: 1.0 }, 2.0, 1.0);
    assert!(matches!(e, Err(Error::Divergent(_))));
    let exp = KLSpec::new(Decay::Exp { gamma0: 2.0, c0: 1.0 }, ScoreDist::Gaussian, None).unwrap();
    assert!(fpc_moment_bound(&exp, &RhoFunctional::Exp { gamma: 2.5 }, 2.0, 1.0).is_err());
    assert!(fpc_moment_bound(&poly, &RhoFunctional::Exp { gamma: 2.0 }, 2.0, 1.0).is_err());
    assert!(fpc_moment_bound(&exp, &RhoFunctional::Exp { gamma: 1.5 }, 1.5, 1.0).is_err());
}

#[test]
fn moment_trivial_cases() {
    let zero = vec![Point::new(vec![0.0, 0.0]).unwrap()];
    assert_eq!(estimate_moment(&zero, &RhoFunctional::Euclidean, 3.0).unwrap().m_q_empirical, 0.0);
    let ones: Vec<Point> = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.6, 0.8]]
        .iter()
        .map(|x| Point::new(x.to_vec()).unwrap())
        .collect();
    for q in [1.0, 2.0, 7.5] {
        let c = estimate_moment(&ones, &RhoFunctional::Euclidean, q).unwrap();
        assert!((c.m_q_empirical - 1.0).abs() < 1e-12);
        assert_eq!(c.sample_size, 4);
    }
}

#[test]
fn gaussian_chi_moment() {
    // E|X|^3 for X ~ N(0, I_4) is 2^(3/2) Gamma(7/2) / Gamma(2).
    let gamma_7_2 = 15.0 * PI.sqrt() / 8.0;
    let analytic = (2f64.powf(1.5) * gamma_7_2).powf(1.0 / 3.0);
    let pts = sample_gaussian(4, 10_000, 5, Execution::Sequential);
    let c = estimate_moment(&pts, &RhoFunctional::Euclidean, 3.0).unwrap();
    assert!((c.m_q_empirical / analytic - 1.0).abs() < 0.05);
}

#[test]
fn heavy_tail_second_moment_stabilises() {
    // Radius index 10: E R^2 = 10 / 8.
    let q_finite = 9.5;
    for (n, seed) in [(10_000, 1), (40_000, 2), (160_000, 3)] {
        let pts = sample_heavy_tail(3, q_finite, n, seed).unwrap();
        let r2: Vec<f64> = pts.iter().map(|p| p.coords().iter().map(|x| x * x).sum()).collect();
        let mean = r2.iter().sum::<f64>() / n as f64;
        let var = r2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 1.25).abs() < 4.0 * (var / n as f64).sqrt(), "n = {n}: {mean}");
    }
}

#[test]
fn heavy_tail_directions_and_symmetry() {
    let n = 20_000;
    let d = 3;
    let pts = sample_heavy_tail(d, 3.0, n, 8).unwrap();
    for k in 0..d {
        let m = pts
            .iter()
            .map(|p| {
                let r = p.coords().iter().map(|x| x * x).sum::<f64>().sqrt();
                p.coords()[k] / r
            })
            .sum::<f64>()
            / n as f64;
        assert!(m.abs() < 4.0 / (d as f64 * n as f64).sqrt(), "coordinate {k}: {m}");
    }
    let line = sample_heavy_tail(1, 2.0, n, 9).unwrap();
    assert!(line.iter().all(|p| p.coords()[0].abs() >= 1.0));
    let pos = line.iter().filter(|p| p.coords()[0] > 0.0).count() as f64 / n as f64;
    assert!((pos - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    assert!(sample_heavy_tail(2, 1.0, 10, 1).is_err());
}

#[test]
fn class_membership() {
    let cases = [
        (Decay::Poly { b0: 2.0, c0: 1.0 }, RhoFunctional::Poly { b: 1.0 }),
        (Decay::Poly { b0: 1.5, c0: 0.7 }, RhoFunctional::Euclidean),
        (Decay::Exp { gamma0: 3.0, c0: 1.0 }, RhoFunctional::Exp { gamma: 2.0 }),
        (Decay::Exp { gamma0: 2.0, c0: 1.0 }, RhoFunctional::Poly { b: 1.0 }),
    ];
    for scores in [ScoreDist::Gaussian, ScoreDist::Uniform, ScoreDist::Laplace] {
        for (decay, rho) in cases {
            let spec = KLSpec::new(decay, scores, None).unwrap();
            let q = 3.0;
            let bound = fpc_moment_bound(&spec, &rho, q, scores.q_norm(q)).unwrap();
            let pts = sample_kl(&spec, 10_000, 4);
            let m = estimate_moment(&pts, &rho, q).unwrap().m_q_empirical;
            assert!(m <= 1.5 * bound, "{decay:?} {rho} {scores}: {m} vs {bound}");
        }
    }
}

#[test]
fn determinism_across_modes() {
    let spec = KLSpec::new(Decay::Poly { b0: 1.5, c0: 1.0 }, ScoreDist::Laplace, None).unwrap();
    let a = sample_kl_with(&spec, 500, 42, Execution::Sequential);
    let b = sample_kl_with(&spec, 500, 42, Execution::Parallel);
    assert_eq!(a, b);
    assert_eq!(a, sample_kl(&spec, 500, 42));
    assert_ne!(a, sample_kl(&spec, 500, 43));
    let h1 = sample_heavy_tail_with(2, 3.0, 100, 5, Execution::Sequential).unwrap();
    let h2 = sample_heavy_tail_with(2, 3.0, 100, 5, Execution::Parallel).unwrap();
    assert_eq!(h1, h2);
}

#[test]
fn truncation_control() {
    for decay in [Decay::Poly { b0: 1.5, c0: 1.0 }, Decay::Exp { gamma0: 2.0, c0: 1.0 }] {
        let spec = KLSpec::new(decay, ScoreDist::Gaussian, None).unwrap();
        let m = spec.truncation_dim;
        assert_eq!(m, decay.truncation_for(DEFAULT_TAIL_TOL));
        assert!(spec.relative_tail() <= DEFAULT_TAIL_TOL);
        assert!(decay.relative_tail(m - 1) > DEFAULT_TAIL_TOL || m == 1);
        let sigmas = spec.sigmas();
        assert!(sigmas.windows(2).all(|w| w[0] >= w[1]));

        let longer = KLSpec::new(decay, ScoreDist::Gaussian, Some(2 * m)).unwrap();
        let a = estimate_moment(&sample_kl(&spec, 5000, 6), &RhoFunctional::Euclidean, 2.0).unwrap();
        let b = estimate_moment(&sample_kl(&longer, 5000, 6), &RhoFunctional::Euclidean, 2.0).unwrap();
        let rel = (b.m_q_empirical - a.m_q_empirical).abs() / a.m_q_empirical;
        assert!(rel <= DEFAULT_TAIL_TOL, "{decay:?}: {rel}");
    }
}

#[test]
fn distribution_specs_parse() {
    let d = Distribution::parse("poly:b0=1.5,c0=1,m=68", ScoreDist::Gaussian).unwrap();
    assert_eq!(d.dim(), 68);
    assert_eq!(Distribution::parse("uniform:d=4", ScoreDist::Gaussian).unwrap(), Distribution::Uniform { d: 4 });
    assert_eq!(
        Distribution::parse("heavy:d=3,q=3", ScoreDist::Gaussian).unwrap(),
        Distribution::Heavy { d: 3, q: 3.0 }
    );
    let e = Distribution::parse("exp:gamma0=2", ScoreDist::Laplace).unwrap();
    let m = e.empirical(10, 1, Execution::Sequential).unwrap();
    assert_eq!(m.len(), 10);
    assert!(Distribution::parse("cauchy:d=2", ScoreDist::Gaussian).is_err());
}
