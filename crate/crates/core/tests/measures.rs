use empirical_wasserstein::covering::RhoFunctional;
use empirical_wasserstein::measures::{
    empirical_measure, read_points_csv, telescope_split, write_points_csv, DiscreteMeasure, Point,
};
use empirical_wasserstein::par::Execution;
use empirical_wasserstein::samplers::sample_uniform_cube;
use empirical_wasserstein::Error;
use proptest::prelude::*;

fn line(xs: &[f64]) -> Vec<Point> {
    xs.iter().map(|&x| Point::new(vec![x]).unwrap()).collect()
}

#[test]
fn empirical_examples() {
    let m = empirical_measure(&line(&[0.0, 1.0])).unwrap();
    assert_eq!(m.weights(), &[0.5, 0.5]);
    let one = empirical_measure(&[Point::new(vec![1.0, 2.0]).unwrap()]).unwrap();
    assert_eq!(one.weights(), &[1.0]);

    let u = sample_uniform_cube(1, 100, 4, Execution::Sequential);
    let m = empirical_measure(&u).unwrap();
    assert!(m.weights().iter().all(|&w| w == 0.01));
    assert!((m.total_mass() - 1.0).abs() < 1e-12);
}

#[test]
fn empirical_errors() {
    assert!(matches!(empirical_measure(&[]), Err(Error::Empty(_))));
    let mixed = vec![Point::new(vec![0.0]).unwrap(), Point::new(vec![0.0, 1.0]).unwrap()];
    assert!(empirical_measure(&mixed).is_err());
    assert!(Point::new(vec![f64::NAN]).is_err());
}

#[test]
fn duplicates_stay_separate() {
    let m = empirical_measure(&line(&[0.5, 0.5, 1.0])).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.merge_duplicates().len(), 2);
}

#[test]
fn telescope_examples() {
    let mu = empirical_measure(&line(&[0.5, 3.0, 10.0])).unwrap();
    let t = telescope_split(&mu, &RhoFunctional::Euclidean).unwrap();
    assert_eq!(t.layer_of, vec![0, 2, 4]);

    let inside = empirical_measure(&line(&[0.1, -0.7, 1.0])).unwrap();
    let t = telescope_split(&inside, &RhoFunctional::Euclidean).unwrap();
    assert_eq!(t.num_layers(), 1);
    let (layer, _) = t.rescaled_layer(&inside, 0).unwrap();
    assert_eq!(layer, inside);

    let edge = empirical_measure(&line(&[2.0])).unwrap();
    assert_eq!(telescope_split(&edge, &RhoFunctional::Euclidean).unwrap().layer_of, vec![1]);
}

#[test]
fn telescope_rejects_infinite_rho() {
    let mu = empirical_measure(&[Point::new(vec![1e308, 1e308]).unwrap()]).unwrap();
    assert!(telescope_split(&mu, &RhoFunctional::Euclidean).is_err());
}

#[test]
fn json_and_csv_roundtrip() {
    let mu = DiscreteMeasure::new(line(&[0.25, -3.5]), vec![0.75, 0.25]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    mu.save_json(&path).unwrap();
    assert_eq!(DiscreteMeasure::load_json(&path).unwrap(), mu);
    let raw = std::fs::read_to_string(&path).unwrap();
    assert!(raw.contains("\"points\"") && raw.contains("\"weights\""));

    let pts = sample_uniform_cube(3, 7, 9, Execution::Sequential);
    let mut buf = Vec::new();
    write_points_csv(&mut buf, &pts).unwrap();
    assert_eq!(read_points_csv(&buf[..]).unwrap(), pts);
    let with_header = b"x,y\n1,2\n3,4\n";
    assert_eq!(read_points_csv(&with_header[..]).unwrap().len(), 2);
}

#[test]
fn pareto_layer_masses_obey_markov() {
    // R with P(R > r) = r^-a for r >= 1: the layer masses are explicit and
    // E R^q = a / (a - q).
    let a: f64 = 4.0;
    let q: f64 = 3.0;
    let mq = a / (a - q);
    let tail = |r: f64| if r <= 1.0 { 1.0 } else { r.powf(-a) };
    for j in 1..30 {
        let lo = 2f64.powi(j - 1);
        let mass = tail(lo) - tail(2.0 * lo);
        assert!(mass <= mq * 2f64.powf(-q * (j - 1) as f64) + 1e-15);
    }
}

fn measure_strategy() -> impl Strategy<Value = DiscreteMeasure> {
    (1usize..12, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-20.0f64..20.0, n * d),
            prop::collection::vec(0.01f64..1.0, n),
        )
            .prop_map(move |(c, w)| {
                let s: f64 = w.iter().sum();
                DiscreteMeasure::from_flat(d, c, w.iter().map(|x| x / s).collect()).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn layers_reassemble(mu in measure_strategy(), kind in 0usize..3) {
        let rho = [RhoFunctional::Euclidean, RhoFunctional::Poly { b: 1.0 }, RhoFunctional::Exp { gamma: 2.0 }][kind];
        let t = telescope_split(&mu, &rho).unwrap();
        prop_assert!((t.layer_masses.iter().sum::<f64>() - mu.total_mass()).abs() < 1e-12);
        let mut weights = vec![0.0; mu.len()];
        let mut coords = vec![0.0; mu.coords().len()];
        for j in 0..t.num_layers() {
            if let Some((layer, idx)) = t.rescaled_layer(&mu, j) {
                prop_assert!((layer.total_mass() - 1.0).abs() < 1e-12);
                for (k, &i) in idx.iter().enumerate() {
                    let x = layer.point(k);
                    prop_assert!(rho.eval(x) <= 1.0 + 1e-12);
                    weights[i] = layer.weight(k) * t.layer_masses[j];
                    for (c, v) in x.iter().enumerate() {
                        coords[i * mu.dim() + c] = v * t.scale_factors[j];
                    }
                }
            }
        }
        for i in 0..mu.len() {
            prop_assert!((weights[i] - mu.weight(i)).abs() < 1e-12);
        }
        for (a, b) in coords.iter().zip(mu.coords()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
