use repsim_core::analysis::{agglomerative_cluster, pairwise_distance_matrix_labelled};
use repsim_core::dynamics::convergence_curve;
use repsim_core::io::{
    load_activations, load_checkpoint_series, load_manifest, load_matrix_artifact,
    save_activations, save_matrix, save_train_run, Provenance,
};
use repsim_core::toy_nets::{
    make_dataset, train_mlp, Activation, CheckpointSchedule, LabelMode, MlpSpec, TrainConfig,
};
use repsim_core::{Metric, MetricConfig};

#[test]
fn trained_checkpoints_survive_disk_and_converge() {
    let data = make_dataset(10, 3, 30, 1.5, 7).unwrap();
    let probe = data.resample(20, 8).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 40,
        batch_size: 15,
        checkpoints: CheckpointSchedule::LogSpaced(8),
        label_mode: LabelMode::TrueLabels,
    };
    let run = train_mlp(
        &MlpSpec::new(vec![10, 12, 12, 3], Activation::Relu, 1),
        &data,
        &cfg,
        probe.inputs(),
    )
    .unwrap();
    assert!(run.final_train_loss < run.checkpoints[0].train_loss);

    let dir = tempfile::tempdir().unwrap();
    save_train_run(
        &run,
        dir.path(),
        &Provenance::new(serde_json::json!({"test": true}), vec![1]),
    )
    .unwrap();
    let manifest = load_manifest(dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), run.checkpoints.len());

    let metric = MetricConfig::new(Metric::Pwcca);
    for layer in 0..2 {
        let loaded = load_checkpoint_series(dir.path(), layer).unwrap();
        assert_eq!(loaded, run.layer_series(layer).unwrap());
        let curve = convergence_curve(&loaded, &metric).unwrap();
        assert!(curve.last().unwrap().abs() < 1e-8);
        assert!(curve[0] > *curve.last().unwrap());
    }
}

#[test]
fn pairwise_matrix_round_trips_and_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(6, 2, 40, 1.0, 3).unwrap();
    let mut layers = Vec::new();
    for (i, l) in data.inputs().to_rows().iter().enumerate() {
        // each layer spans two cyclically adjacent input features
        let base = vec![l.clone(), data.inputs().row((i + 1) % 6)];
        let path = dir.path().join(format!("l{i}.npy"));
        save_activations(
            &repsim_core::ActivationMatrix::from_rows(&base).unwrap(),
            &path,
        )
        .unwrap();
        layers.push(load_activations(&path, false).unwrap());
    }
    let labels: Vec<String> = (0..layers.len()).map(|i| format!("l{i}")).collect();
    let d = pairwise_distance_matrix_labelled(&layers, labels, &MetricConfig::new(Metric::MeanCca))
        .unwrap();
    let path = dir.path().join("m.json");
    let csv = save_matrix(&d, &Provenance::default(), &path).unwrap();
    assert!(csv.exists());
    let back = load_matrix_artifact(&path).unwrap();
    assert_eq!(back.body, d);
    let c = agglomerative_cluster(&back.body, Some(2)).unwrap();
    assert_eq!(c.chosen_k, 2);
    assert_eq!(c.assignments.len(), 6);
}
