use ldp_poison::graph::{
    generate_featured_sbm, load_graph_dir, normalize_features, split_nodes, write_graph_dir, Graph,
    SbmParams,
};
use ldp_poison::matrix::Matrix;
use ldp_poison::Error;
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..30, 1usize..5, 1usize..4).prop_flat_map(|(n, d, c)| {
        (
            prop::collection::vec((0..n, 0..n), 0..3 * n),
            prop::collection::vec(-1e6f64..1e6, n * d),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(edges, feats, mut labels)| {
                // Label files carry no class count; the loader infers it from the largest label.
                labels[0] = c - 1;
                Graph::new(edges, Matrix::from_vec(n, d, feats).unwrap(), labels, c).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_then_load_round_trips(g in arb_graph()) {
        let dir = tempfile::tempdir().unwrap();
        write_graph_dir(&g, dir.path()).unwrap();
        let back = load_graph_dir(dir.path()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn avg_degree_is_twice_edges_over_nodes(g in arb_graph()) {
        let s = g.stats();
        prop_assert_eq!(s.avg_degree, 2.0 * s.edges as f64 / s.nodes as f64);
        for &(u, v) in g.edges() {
            prop_assert!(u < v);
            prop_assert!(g.has_edge(v, u));
        }
        let deg_sum: usize = (0..g.num_nodes()).map(|v| g.degree(v)).sum();
        prop_assert_eq!(deg_sum, 2 * g.num_edges());
    }

    #[test]
    fn normalized_features_stay_in_range(g in arb_graph(), lo in -5.0f64..0.0, w in 0.1f64..5.0) {
        let h = normalize_features(&g, lo, lo + w);
        prop_assert_eq!((h.alpha, h.beta), (lo, lo + w));
        for &v in h.features.as_slice() {
            prop_assert!(v >= lo && v <= lo + w);
        }
    }

    #[test]
    fn splits_partition_the_nodes(n in 3usize..400, seed in any::<u64>()) {
        let s = split_nodes(n, (0.5, 0.25, 0.25), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!((s.train.len() as f64 - 0.5 * n as f64).abs() <= 1.0);
        prop_assert!((s.val.len() as f64 - 0.25 * n as f64).abs() <= 1.0);
        prop_assert!((s.test.len() as f64 - 0.25 * n as f64).abs() <= 1.0);
        prop_assert_eq!(split_nodes(n, (0.5, 0.25, 0.25), seed).unwrap(), s);
    }
}

#[test]
fn split_of_one_hundred_and_one() {
    let s = split_nodes(101, (0.5, 0.25, 0.25), 3).unwrap();
    assert!(s.train.len().abs_diff(50) <= 1);
    assert!(s.val.len().abs_diff(25) <= 1);
    assert!(s.test.len().abs_diff(25) <= 1);
}

#[test]
fn sbm_average_degree_matches_expectation() {
    let p = SbmParams::default();
    let expected = p.expected_avg_degree();
    let mean = (0..100)
        .map(|s| generate_featured_sbm(&p, s).unwrap().avg_degree())
        .sum::<f64>()
        / 100.0;
    assert!(
        (mean - expected).abs() < 0.05 * expected,
        "{mean} vs {expected}"
    );
}

#[test]
fn sbm_with_equal_probabilities_has_no_community_bias() {
    let p = SbmParams {
        nodes: 400,
        classes: 4,
        dims: 4,
        p_in: 0.02,
        p_out: 0.02,
        signal: 1.0,
    };
    let (mut within, mut total) = (0usize, 0usize);
    for s in 0..20 {
        let g = generate_featured_sbm(&p, s).unwrap();
        within += g
            .edges()
            .iter()
            .filter(|&&(u, v)| g.labels[u] == g.labels[v])
            .count();
        total += g.num_edges();
    }
    // With equal probabilities the within-class edge fraction equals the
    // within-class share of pairs: (n/C − 1)/(n − 1).
    let expected = (100.0 - 1.0) / 399.0;
    let frac = within as f64 / total as f64;
    let se = (expected * (1.0 - expected) / total as f64).sqrt();
    assert!((frac - expected).abs() < 4.0 * se, "{frac} vs {expected}");
}

#[test]
fn sbm_labels_and_features_respect_invariants() {
    let p = SbmParams::default();
    let g = generate_featured_sbm(&p, 1).unwrap();
    assert_eq!(g.num_nodes(), p.nodes);
    assert_eq!((g.alpha, g.beta), (-1.0, 1.0));
    assert!(g.features.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    for c in 0..p.classes {
        assert_eq!(g.labels.iter().filter(|&&l| l == c).count(), p.nodes / p.classes);
    }
    assert_eq!(generate_featured_sbm(&p, 1).unwrap(), g);
}

#[test]
fn sbm_rejects_fewer_nodes_than_classes() {
    let p = SbmParams {
        nodes: 3,
        classes: 4,
        ..SbmParams::default()
    };
    assert!(matches!(generate_featured_sbm(&p, 0), Err(Error::InvalidArgument(_))));
}
