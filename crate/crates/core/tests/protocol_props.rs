use ldp_poison::graph::{generate_featured_sbm, split_nodes, Graph, SbmParams};
use ldp_poison::ldp::{perturb_matrix, MechanismConfig, MechanismKind};
use ldp_poison::matrix::Matrix;
use ldp_poison::protocol::{
    calibrate, evaluate_accuracy, link_prediction_eval, softmax_rows, train_node_classifier, Arch,
    CalibrationConfig, GnnModel, TrainConfig,
};
use ldp_poison::rng::{stream, Stream};
use ldp_poison::stats::spearman;
use ldp_poison::theory::star_error_trend;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Fixture: non-private GCN test accuracy on the n=300 planted partition, seed 0.
const GCN_N300_ACCURACY: f64 = 0.986_666_666_666_666_7;
/// Fixture: non-private link-prediction accuracy on an n=500 planted partition, seed 0.
const LINK_N500_ACCURACY: f64 = 0.722_222_222_222_222_2;

fn small_fixed_graph() -> Graph {
    let x = Matrix::from_rows(&[
        vec![0.2, -0.7, 0.9],
        vec![-0.4, 0.1, 0.3],
        vec![1.0, -1.0, 0.0],
        vec![0.6, 0.5, -0.2],
        vec![-0.9, 0.8, 0.4],
        vec![0.0, 0.3, -0.6],
    ])
    .unwrap();
    Graph::new(
        [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5)],
        x,
        vec![0; 6],
        1,
    )
    .unwrap()
}

fn arb_matrix(n: usize, d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, n * d).prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_is_linear(
        x in arb_matrix(6, 3),
        y in arb_matrix(6, 3),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        k in 0usize..6,
    ) {
        let g = small_fixed_graph();
        let cfg = CalibrationConfig::new(k).unwrap();
        let mut combo = x.clone();
        combo.scale(a);
        combo.axpy(b, &y);
        let lhs = calibrate(&combo, &g, cfg).unwrap();
        let mut rhs = calibrate(&x, &g, cfg).unwrap();
        rhs.scale(a);
        rhs.axpy(b, &calibrate(&y, &g, cfg).unwrap());
        for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!((l - r).abs() <= 1e-10 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn calibration_is_permutation_equivariant(x in arb_matrix(6, 2), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(), k in 0usize..4) {
        let g = small_fixed_graph();
        let cfg = CalibrationConfig::new(k).unwrap();
        let relabel: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut px = Matrix::zeros(6, 2);
        for v in 0..6 {
            px.row_mut(perm[v]).copy_from_slice(x.row(v));
        }
        let pg = Graph::new(relabel, px.clone(), vec![0; 6], 1).unwrap();
        let h = calibrate(&x, &g, cfg).unwrap();
        let ph = calibrate(&px, &pg, cfg).unwrap();
        for v in 0..6 {
            for (a, b) in h.row(v).iter().zip(ph.row(perm[v])) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-500.0f64..500.0, 12)) {
        let p = softmax_rows(&Matrix::from_vec(4, 3, v).unwrap());
        for row in p.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }
}

#[test]
fn star_calibration_by_hand() {
    for leaves in [1usize, 3, 10] {
        let n = leaves + 1;
        let mut x = Matrix::zeros(n, 1);
        for v in 1..n {
            x.set(v, 0, 1.0);
        }
        let g = Graph::new((1..n).map(|v| (0, v)), x.clone(), vec![0; n], 1).unwrap();
        let h = calibrate(&x, &g, CalibrationConfig::new(1).unwrap()).unwrap();
        let l = leaves as f64;
        assert!((h.get(0, 0) - l / (l + 1.0)).abs() < 1e-15);
        for v in 1..n {
            assert!((h.get(v, 0) - 0.5).abs() < 1e-15);
        }
    }
}

#[test]
fn one_step_aggregate_of_pm_reports_is_unbiased() {
    let g = small_fixed_graph();
    let cfg = CalibrationConfig::new(1).unwrap();
    let exact = calibrate(&g.features, &g, cfg).unwrap();
    let mech = MechanismConfig::new(MechanismKind::Pm, 2.0, 3);
    let trials = 20_000;
    let (n, d) = (g.num_nodes(), g.dims());
    let mut sum = vec![0.0; n * d];
    let mut sq = vec![0.0; n * d];
    for t in 0..trials {
        let r = perturb_matrix(&g.features, &mech, t).unwrap().matrix;
        let h = calibrate(&r, &g, cfg).unwrap();
        for (i, v) in h.as_slice().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let tn = trials as f64;
    for i in 0..n * d {
        let mean = sum[i] / tn;
        let se = ((sq[i] / tn - mean * mean) / tn).sqrt();
        let truth = exact.as_slice()[i];
        assert!((mean - truth).abs() < 3.0 * se, "entry {i}: {mean} vs {truth} (se {se})");
    }
}

#[test]
fn aggregation_error_shrinks_with_degree() {
    let degrees: Vec<usize> = (2..=8).map(|j| 1usize << j).collect();
    let mech = MechanismConfig::new(MechanismKind::Pm, 1.0, 4);
    let trend = star_error_trend(&degrees, &mech, 200, 17).unwrap();
    let x: Vec<f64> = trend.iter().map(|p| p.degree as f64).collect();
    let y: Vec<f64> = trend.iter().map(|p| p.mean_max_error).collect();
    let rho = spearman(&x, &y);
    assert!(rho <= -0.9, "spearman {rho}: {trend:?}");
}

#[test]
fn zero_predictor_on_random_balanced_labels_scores_half() {
    let n = 20_000;
    let mut rng = stream(3, Stream::Trial, 0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let g = Graph::new([], Matrix::zeros(n, 2), labels, 2).unwrap();
    let model = GnnModel::zeros(Arch::Gcn, 2, 4, 2);
    let nodes: Vec<usize> = (0..n).collect();
    let acc = evaluate_accuracy(&model, &g, &g.features, &nodes).unwrap();
    let se = (0.25 / n as f64).sqrt();
    assert!((acc - 0.5).abs() < 4.0 * se, "{acc}");
}

fn non_private_accuracy(p: &SbmParams, seed: u64) -> f64 {
    let g = generate_featured_sbm(p, seed).unwrap();
    let masks = split_nodes(g.num_nodes(), (0.5, 0.25, 0.25), seed).unwrap();
    let tcfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train_node_classifier(&g, &g.features, &masks, &tcfg).unwrap();
    evaluate_accuracy(&model, &g, &g.features, &masks.test).unwrap()
}

#[test]
fn non_private_gcn_on_small_planted_partition() {
    let p = SbmParams {
        nodes: 300,
        classes: 3,
        dims: 16,
        p_in: 0.05,
        p_out: 0.005,
        signal: 1.0,
    };
    let acc = non_private_accuracy(&p, 0);
    assert!(acc > 0.8, "{acc}");
    assert!((acc - GCN_N300_ACCURACY).abs() <= 0.02, "{acc}");
}

#[test]
fn featureless_signal_gives_chance_accuracy() {
    let p = SbmParams {
        nodes: 800,
        classes: 4,
        dims: 16,
        p_in: 0.01,
        p_out: 0.01,
        signal: 0.0,
    };
    let accs: Vec<f64> = (0..10).map(|s| non_private_accuracy(&p, s)).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() < 0.05, "{mean}: {accs:?}");
}

#[test]
fn link_prediction_with_random_embeddings_is_near_chance() {
    let p = SbmParams {
        nodes: 300,
        ..SbmParams::default()
    };
    let tcfg = TrainConfig {
        max_epochs: 100,
        ..TrainConfig::default()
    };
    let accs: Vec<f64> = (0..5)
        .map(|s| {
            let g = generate_featured_sbm(&p, s).unwrap();
            let mut rng = stream(s, Stream::Trial, 1);
            let data = (0..g.num_nodes() * 8).map(|_| rng.sample(StandardNormal)).collect();
            let emb = Matrix::from_vec(g.num_nodes(), 8, data).unwrap();
            link_prediction_eval(&g, &emb, 0.1, &TrainConfig { seed: s, ..tcfg.clone() }, s)
                .unwrap()
                .accuracy
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "{mean}: {accs:?}");
}

#[test]
fn link_prediction_on_planted_partition() {
    let p = SbmParams {
        nodes: 500,
        ..SbmParams::default()
    };
    let g = generate_featured_sbm(&p, 0).unwrap();
    let r = link_prediction_eval(&g, &g.features, 0.1, &TrainConfig::default(), 0).unwrap();
    assert!(r.accuracy > 0.7, "{r:?}");
    assert!((r.accuracy - LINK_N500_ACCURACY).abs() <= 0.02, "{r:?}");
}
