mod common;

use common::*;
use mmgt::encoders::PatientFeatures;
use mmgt::metrics;
use mmgt::popgraph::*;
use mmgt_autograd::Mat;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn features(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<PatientFeatures> {
    (0..n)
        .map(|k| {
            let mut v = || (0..d).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            PatientFeatures {
                id: format!("p{k}"),
                label: Some((k % 3 == 0) as u8),
                u_i: v(),
                u_p: v(),
                u_b: v(),
                a_p: vec![],
                a_e: vec![],
                a_n: vec![],
            }
        })
        .collect()
}

fn roles(n: usize) -> Vec<NodeRole> {
    (0..n)
        .map(|i| match i % 5 {
            0 => NodeRole::Test,
            4 => NodeRole::Context,
            _ => NodeRole::Train,
        })
        .collect()
}

fn small() -> ClassifierConfig {
    ClassifierConfig {
        widths: vec![8, 8],
        epochs: 40,
        lr: 1e-2,
        ..ClassifierConfig::default()
    }
}

#[test]
fn identical_and_orthogonal_pairs() {
    let e = threshold_edges(&[vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]], 0.5, Similarity::Cosine);
    assert_eq!(e.len(), 1);
    assert_eq!((e[0].0, e[0].1), (0, 1));
    assert!((e[0].2 - 1.0).abs() < 1e-12);

    // identical patients stay identical after standardisation
    let mut r = rng(50);
    let mut f = features(&mut r, 4, 3);
    f[1].u_b = f[0].u_b.clone();
    let g = build_population_graph(&f, &roles(4), Scheme::ALL[0], 0.5, Similarity::Cosine).unwrap();
    let w = g.edges.iter().find(|e| (e.0, e.1) == (0, 1)).expect("edge between identical patients");
    assert!((w.2 - 1.0).abs() < 1e-9);
}

#[test]
fn edges_match_thresholded_standardised_cosine() {
    let mut r = rng(51);
    for seed in 0..10 {
        let f = features(&mut r, 10, 4);
        let scheme = Scheme::ALL[seed % 5];
        let g = build_population_graph(&f, &roles(10), scheme, 0.5, Similarity::Cosine).unwrap();
        let raw: Vec<Vec<f64>> = f.iter().map(|p| scheme.edge.extract(p)).collect();
        let d = raw[0].len();
        let z: Vec<Vec<f64>> = {
            let mean: Vec<f64> = (0..d).map(|k| raw.iter().map(|v| v[k]).sum::<f64>() / 10.0).collect();
            let sd: Vec<f64> = (0..d)
                .map(|k| (raw.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / 10.0).sqrt())
                .collect();
            raw.iter().map(|v| (0..d).map(|k| (v[k] - mean[k]) / sd[k]).collect()).collect()
        };
        let mut want = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                let c = cosine(&z[i], &z[j]);
                if c >= 0.5 {
                    want.push((i, j, c));
                }
            }
        }
        assert_eq!(g.edges.len(), want.len());
        for (a, b) in g.edges.iter().zip(&want) {
            assert_eq!((a.0, a.1), (b.0, b.1));
            assert!((a.2 - b.2).abs() < 1e-9);
        }
        for col in g.node_weights.columns() {
            assert!(col.mean().unwrap().abs() < 1e-9);
        }
    }
}

#[test]
fn theta_outside_the_cosine_range_is_rejected() {
    let mut r = rng(52);
    let f = features(&mut r, 5, 3);
    for theta in [1.5, -1.01, f64::NAN] {
        let e = build_population_graph(&f, &roles(5), Scheme::ALL[0], theta, Similarity::Cosine).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}

#[test]
fn auc_matches_the_pairwise_count() {
    let mut r = rng(53);
    for _ in 0..20 {
        let labels: Vec<u8> = (0..50).map(|_| r.random_bool(0.3) as u8).collect();
        // coarse scores so ties happen
        let scores: Vec<f64> = (0..50).map(|_| (r.random_range(0.0..1.0f64) * 8.0).round() / 8.0).collect();
        let got = metrics::auc(&scores, &labels).unwrap();
        assert!((got - auc_oracle(&scores, &labels)).abs() < 1e-9);
    }
    assert!(metrics::auc(&[0.1, 0.2], &[1, 1]).is_none());
}

#[test]
fn test_labels_never_reach_the_training_loss() {
    let mut r = rng(54);
    let f = features(&mut r, 20, 3);
    let cfg = small();
    let g = build_population_graph(&f, &roles(20), Scheme::ALL[4], cfg.theta, cfg.similarity).unwrap();
    let model = NodeClassifier::new(&cfg, g.node_weights.ncols(), 0);
    let base = training_loss(&model, &g, &cfg).unwrap();
    let mut shuffled = g.clone();
    for i in shuffled.mask(NodeRole::Test) {
        shuffled.labels[i] = Some(r.random_bool(0.5) as u8);
    }
    for i in shuffled.mask(NodeRole::Context) {
        shuffled.labels[i] = None;
    }
    assert_eq!(training_loss(&model, &shuffled, &cfg).unwrap(), base);
    let (a, _) = train_node_classifier(&g, &cfg, 1).unwrap();
    let (b, _) = train_node_classifier(&shuffled, &cfg, 1).unwrap();
    assert_eq!(a.store, b.store);
}

#[test]
fn separable_edgeless_graph_is_learned() {
    let mut r = rng(55);
    let n = 30;
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let node_weights = Mat::from_shape_fn((n, 4), |(i, k)| {
        let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
        if k == 0 {
            sign * r.random_range(0.5..1.5)
        } else {
            r.random_range(-1.0..1.0)
        }
    });
    let g = PopulationGraph {
        scheme: Scheme::ALL[0],
        ids: (0..n).map(|i| format!("n{i}")).collect(),
        node_weights,
        edges: vec![],
        labels: labels.iter().map(|&l| Some(l)).collect(),
        roles: (0..n).map(|i| if i < 24 { NodeRole::Train } else { NodeRole::Test }).collect(),
    };
    let cfg = ClassifierConfig {
        epochs: 200,
        ..small()
    };
    let (model, history) = train_node_classifier(&g, &cfg, 0).unwrap();
    assert_eq!(history.len(), 200);
    let p = model.probabilities(&g);
    let train = g.mask(NodeRole::Train);
    let correct = train.iter().filter(|&&i| (p[i] >= 0.5) == (labels[i] == 1)).count();
    assert_eq!(correct, train.len());
}

#[test]
fn zero_learning_rate_keeps_the_initialisation() {
    let mut r = rng(56);
    let f = features(&mut r, 12, 3);
    let cfg = ClassifierConfig { lr: 0.0, ..small() };
    let g = build_population_graph(&f, &roles(12), Scheme::ALL[2], cfg.theta, cfg.similarity).unwrap();
    let (model, _) = train_node_classifier(&g, &cfg, 4).unwrap();
    assert_eq!(model.store, NodeClassifier::new(&cfg, g.node_weights.ncols(), 4).store);
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut r = rng(57);
    let f = features(&mut r, 15, 3);
    let cfg = small();
    for scheme in [Scheme::ALL[0], Scheme::ALL[4]] {
        let g = build_population_graph(&f, &roles(15), scheme, 0.2, cfg.similarity).unwrap();
        assert!(!g.edges.is_empty());
        let model = NodeClassifier::new(&cfg, g.node_weights.ncols(), 2);
        let (_, grads) = loss_and_grads(&model, &g, &cfg).unwrap();
        let err = directional_check(
            &model.store,
            &grads,
            |s| {
                let m = NodeClassifier {
                    store: s.clone(),
                    ..model.clone()
                };
                training_loss(&m, &g, &cfg).unwrap()
            },
            10,
            1e-5,
            58,
        );
        assert!(err < 1e-3, "relative directional error {err}");
    }
}

#[test]
fn sweep_covers_every_scheme_deterministically() {
    let mut r = rng(59);
    let f = features(&mut r, 25, 3);
    let roles = roles(25);
    let cfg = small();
    let a = run_scheme_sweep(&f, &roles, &cfg, 9).unwrap();
    assert_eq!(a.len(), 5);
    for (k, row) in a.iter().enumerate() {
        assert_eq!(row.scheme, k);
        let m = &row.metrics;
        for v in [m.auc, Some(m.acc), m.sen, m.spe].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!(a, run_scheme_sweep(&f, &roles, &cfg, 9).unwrap());
}

#[test]
fn brain_and_tumor_similarities_give_different_graphs() {
    let mut r = rng(60);
    for _ in 0..10 {
        let mut f = features(&mut r, 20, 3);
        f.shuffle(&mut r);
        let by_brain = build_population_graph(&f, &roles(20), Scheme::ALL[0], 0.5, Similarity::Cosine).unwrap();
        let by_tumor = build_population_graph(&f, &roles(20), Scheme::ALL[1], 0.5, Similarity::Cosine).unwrap();
        let pairs = |g: &PopulationGraph| g.edges.iter().map(|e| (e.0, e.1)).collect::<Vec<_>>();
        assert_ne!(pairs(&by_brain), pairs(&by_tumor));
    }
}
