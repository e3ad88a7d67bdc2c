use ldp_poison::defense::{
    edge_homophily, girvan_newman, histogram, kmeans, kmeans_anomaly, modularity, node_homophily,
};
use ldp_poison::graph::{generate_featured_sbm, Graph, SbmParams};
use ldp_poison::matrix::Matrix;
use ldp_poison::rng::{stream, Stream};
use ldp_poison::stats::adjusted_rand_index;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn two_block(seed: u64) -> Graph {
    let p = SbmParams {
        nodes: 100,
        classes: 2,
        dims: 4,
        p_in: 0.3,
        p_out: 0.01,
        signal: 1.0,
    };
    generate_featured_sbm(&p, seed).unwrap()
}

#[test]
fn girvan_newman_recovers_two_blocks() {
    for seed in 0..10 {
        let g = two_block(seed);
        let r = girvan_newman(&g, None).unwrap();
        let ari = adjusted_rand_index(&r.assignment, &g.labels);
        assert!(ari > 0.9, "seed {seed}: ARI {ari} with {} communities", r.communities);
        assert!(r.trace.iter().all(|p| (-0.5..=1.0).contains(&p.modularity)));
        assert!((modularity(&g, &r.assignment) - r.modularity).abs() < 1e-12);
    }
}

#[test]
fn girvan_newman_stops_at_the_requested_count() {
    let g = two_block(3);
    let r = girvan_newman(&g, Some(4)).unwrap();
    assert_eq!(r.communities, 4);
    assert_eq!(girvan_newman(&g, Some(4)).unwrap(), r);
}

fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, Stream::Trial, 0);
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn random_high_dimensional_features_have_low_edge_homophily() {
    let g = generate_featured_sbm(&SbmParams::default(), 0).unwrap();
    for d in [128, 256] {
        let x = random_matrix(g.num_nodes(), d, d as u64);
        let h = edge_homophily(&g, &x);
        let mean_abs = h.iter().map(|v| v.abs()).sum::<f64>() / h.len() as f64;
        assert!(mean_abs < 0.2, "d={d}: {mean_abs}");
    }
}

#[test]
fn histogram_masses_sum_to_one() {
    let g = generate_featured_sbm(&SbmParams::default(), 1).unwrap();
    for scores in [node_homophily(&g, &g.features), edge_homophily(&g, &g.features)] {
        assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));
        for bins in [1, 7, 40] {
            let h = histogram(&scores, bins);
            assert_eq!(h.len(), bins);
            assert!((h.iter().map(|b| b.mass).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn kmeans_objective_never_increases() {
    for seed in 0..5 {
        let x = random_matrix(300, 6, seed);
        let fit = kmeans(&x, 4, seed).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert_eq!(kmeans(&x, 4, seed).unwrap(), fit);
    }
}

#[test]
fn far_outliers_are_flagged() {
    // Three well-separated blobs; three points pushed off their blob in
    // different directions.
    let mut x = random_matrix(600, 4, 9);
    for v in 0..600 {
        x.row_mut(v)[0] += 40.0 * (v % 3) as f64;
    }
    let outliers = [10usize, 200, 451];
    for (i, &o) in outliers.iter().enumerate() {
        x.row_mut(o)[i + 1] += 9.0;
    }
    let r = kmeans_anomaly(&x, 3, 99.0, Some(&outliers), 4).unwrap();
    assert_eq!(r.recall, Some(1.0), "{r:?}");
    assert!(r.precision.unwrap() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn homophily_ignores_positive_row_scaling(
        seed in 0u64..200,
        scales in prop::collection::vec(1e-3f64..1e3, 60),
    ) {
        let p = SbmParams { nodes: 60, classes: 3, dims: 5, p_in: 0.2, p_out: 0.05, signal: 1.0 };
        let g = generate_featured_sbm(&p, seed).unwrap();
        let mut scaled = g.features.clone();
        for (v, s) in scales.iter().enumerate() {
            for x in scaled.row_mut(v) {
                *x *= s;
            }
        }
        for (a, b) in edge_homophily(&g, &g.features).iter().zip(edge_homophily(&g, &scaled)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // Node scores normalize neighbours by degree, not by norm, so only a
        // common scale leaves them unchanged.
        let mut uniform = g.features.clone();
        uniform.scale(scales[0]);
        for (a, b) in node_homophily(&g, &g.features).iter().zip(node_homophily(&g, &uniform)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
