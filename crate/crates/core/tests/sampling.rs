//! Monte Carlo checks of the random samplers.

use depgraph::autodiff::Tape;
use depgraph::rng::seeded;
use depgraph::simulator::{
    build_precisions, covariance_zero_mean, edge_matrix, inverse, make_dataset, sample_er_matrix, sample_gaussian,
    SimConfig,
};
use depgraph::structure::{edge_probabilities, sample_graph};
use depgraph::Tensor;

#[test]
fn relaxed_graph_means_match_edge_probabilities() {
    let gamma = Tensor::new(vec![3, 3], vec![0.0, 2.0, -1.0, 0.5, 0.0, -3.0, 1.2, -0.4, 0.0]).unwrap();
    let expected = edge_probabilities(&gamma);
    let mut rng = seeded(21);
    let draws = 100_000;
    let mut sum = Tensor::zeros(&[3, 3]);
    for _ in 0..draws {
        let mut tape = Tape::new();
        let g = tape.constant(gamma.clone());
        let z = sample_graph(&mut tape, g, 0.1, &mut rng).unwrap();
        for (s, v) in sum.data_mut().iter_mut().zip(tape.value(z).data()) {
            *s += v;
        }
    }
    for (s, e) in sum.data().iter().zip(expected.data()) {
        assert!((s / draws as f64 - e).abs() < 0.02, "mean {} vs {e}", s / draws as f64);
    }
}

#[test]
fn er_edge_frequency_matches_probability() {
    let mut rng = seeded(22);
    let (p, reps) = (20, 200);
    let mut edges = 0.0;
    for _ in 0..reps {
        let m = sample_er_matrix(p, 0.3, 0.5, &mut rng);
        edges += m.data().iter().filter(|&&v| v != 0.0).count() as f64 / 2.0;
    }
    let freq = edges / (reps * p * (p - 1) / 2) as f64;
    assert!((freq - 0.3).abs() < 0.01, "frequency {freq}");
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn frobenius(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn gaussian_samples_have_the_inverse_precision_as_covariance() {
    let delta = edge_matrix(5, &[(1, 2, 0.5), (3, 4, 0.5), (0, 4, 0.5)]);
    let shared = edge_matrix(5, &[(0, 1, 0.5), (2, 3, 0.5)]);
    // Unit-scale variances (about 0.55), so that a fixed ±0.05 tolerance
    // is several standard errors at n = 10⁴.
    let pair = build_precisions(&delta, &shared, 2.0).unwrap();
    for omega in [&pair.omega_a, &pair.omega_b] {
        let sigma = inverse(omega).unwrap();
        let small = covariance_zero_mean(&sample_gaussian(omega, 1_000, 5).unwrap());
        let large = covariance_zero_mean(&sample_gaussian(omega, 10_000, 5).unwrap());
        assert!(max_abs_diff(&large, &sigma) < 0.05, "max deviation {}", max_abs_diff(&large, &sigma));
        assert!(frobenius(&large, &sigma) < frobenius(&small, &sigma));
    }
}

#[test]
fn empirical_precision_recovers_the_p5_support() {
    let sim = make_dataset(&SimConfig {
        n_train: 40_000,
        n_valid: 2,
        n_test: 2,
        ..SimConfig::preset("p5").unwrap()
    })
    .unwrap();
    let train = sim.dataset.subset(depgraph::dataio::Split::Train);
    let depgraph::dataio::Labels::Classes { values, .. } = &train.y else { unreachable!() };
    for (class, truth) in sim.truth.class_graphs().iter().enumerate() {
        let rows: Vec<usize> = (0..values.len()).filter(|&r| values[r] == class).collect();
        let x = train.select(&rows).x;
        let omega_hat = inverse(&covariance_zero_mean(&x)).unwrap();
        for i in 0..5 {
            for j in (0..5).filter(|&j| j != i) {
                let v = omega_hat.at2(i, j).abs();
                if truth.at2(i, j) != 0.0 {
                    assert!(v > 0.3, "class {class} edge ({i},{j}) estimated {v}");
                } else {
                    assert!(v < 0.1, "class {class} non-edge ({i},{j}) estimated {v}");
                }
            }
        }
    }
}

#[test]
fn gaussian_sampling_is_reproducible_and_seed_sensitive() {
    let omega = Tensor::identity(3);
    let a = sample_gaussian(&omega, 3000, 9).unwrap();
    assert_eq!(a, sample_gaussian(&omega, 3000, 9).unwrap());
    assert_ne!(a, sample_gaussian(&omega, 3000, 10).unwrap());
}
