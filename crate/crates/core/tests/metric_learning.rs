use nalgebra::DMatrix;

use rpdml::data::{generate_labeled_split, normalize_features, SyntheticSpec};
use rpdml::eval::knn_accuracy;
use rpdml::rpdml::{metric_distance, train_observed, train_with, MetricModel, ModelJson, RpdmlConfig, W0Mode};
use rpdml::{Execution, SpdMatrix};

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { classes: 2, samples: 120, dim: 8, informative_dims: 2, noise_scale: 4.0, class_sep: 3.0, seed }
}

fn config(seed: u64) -> RpdmlConfig {
    RpdmlConfig { outer_iters: 60, max_pairs_per_class: 100, seed, ..RpdmlConfig::default() }
}

#[test]
fn execution_modes_give_identical_models() {
    let (train, _) = generate_labeled_split(&spec(1), 0).unwrap();
    let a = train_with(Execution::Sequential, &train.features, &train.labels, &config(1)).unwrap();
    let b = train_with(Execution::Parallel, &train.features, &train.labels, &config(1)).unwrap();
    assert_eq!(a.w, b.w);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn duals_and_slacks_are_nonnegative_throughout() {
    for (seed, w0_mode) in [(2, W0Mode::Identity), (3, W0Mode::InverseCovariance)] {
        let (train, _) = generate_labeled_split(&spec(seed), 0).unwrap();
        let (x, _) = normalize_features(&train.features).unwrap();
        let cfg = RpdmlConfig { w0_mode, ..config(seed) };
        let mut seen = 0;
        train_observed(Execution::default(), &x, &train.labels, &cfg, |it| {
            seen += 1;
            assert!(it.dual.values().iter().all(|&v| v >= 0.0), "negative dual at t = {}", it.record.t);
            assert!(it.point.xi.values().iter().all(|&v| v >= 0.0), "negative slack at t = {}", it.record.t);
            assert!(it.point.w.min_eigenvalue() >= rpdml::EPS_PD);
        })
        .unwrap();
        assert_eq!(seen, 60);
    }
}

#[test]
fn learned_metric_beats_euclidean_on_distractor_data() {
    let (train, test) = generate_labeled_split(&spec(4), 600).unwrap();
    let model = train_with(Execution::default(), &train.features, &train.labels, &config(4)).unwrap();
    let acc = |w: &SpdMatrix| {
        knn_accuracy(Execution::default(), w, &train.features, &train.labels, &test.features, &test.labels, 10).unwrap()
    };
    let (eu, learned) = (acc(&SpdMatrix::identity(8)), acc(&model.w));
    assert!(learned > eu, "euclidean {eu}, learned {learned}");
    assert!(model.final_violation() < model.initial_violation);
}

#[test]
fn model_survives_a_json_file_round_trip() {
    let (train, _) = generate_labeled_split(&spec(5), 0).unwrap();
    let model = train_with(Execution::default(), &train.features, &train.labels, &config(5)).unwrap();
    let dir = std::env::temp_dir().join(format!("rpdml-model-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    std::fs::write(&path, serde_json::to_string(&model.to_json()).unwrap()).unwrap();
    let back: ModelJson = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let restored = MetricModel::from_json(&back).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(restored.w, model.w);
    assert_eq!(restored.w0, model.w0);

    let a: Vec<f64> = train.features.row(0).iter().copied().collect();
    let b: Vec<f64> = train.features.row(1).iter().copied().collect();
    let d = DMatrix::from_column_slice(8, 1, &a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
    let direct = (d.transpose() * model.w.as_matrix() * &d)[(0, 0)];
    assert!((metric_distance(&restored, &a, &b).unwrap() - direct).abs() <= 1e-10 * direct.max(1.0));
}
