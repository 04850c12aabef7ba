use anatomesh::graphnet::write_checkpoint;
use anatomesh::mesh::PROTOTYPE_VERTICES;
use anatomesh::pipeline::{predictions_csv, run_pipeline, PipelineConfig};

fn small() -> PipelineConfig {
    let mut cfg = PipelineConfig { n_train: 24, n_test: 8, ..PipelineConfig::default() };
    cfg.train.epochs = 3;
    cfg.synth.seed = 5;
    cfg
}

#[test]
fn small_run_is_structurally_sound_and_repeatable() {
    let cfg = small();
    let a = run_pipeline(&cfg).unwrap();
    assert_eq!(a.prototype.vertex_count(), PROTOTYPE_VERTICES);
    assert_eq!(a.prototype.regions.counts(), [48, 42, 45, 21]);
    assert_eq!(a.prototype.euler_characteristic(), 2);
    for r in a.train_records.iter().chain(&a.test_records) {
        assert!(r.fitted.same_combinatorics(&a.prototype));
        assert_eq!(r.fitted.regions, a.prototype.regions);
        assert_eq!(r.features.rows(), PROTOTYPE_VERTICES);
    }
    assert_eq!(a.predictions.len(), 8);
    assert_eq!(a.report.class_confusion.total(), 8);

    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(write_checkpoint(&a.training.net), write_checkpoint(&b.training.net));
    assert_eq!(predictions_csv(&a.predictions), predictions_csv(&b.predictions));
    assert_eq!(a.report.to_text(), b.report.to_text());
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = small();
    cfg.val_fraction = 1.0;
    assert!(run_pipeline(&cfg).is_err());
    let mut cfg = small();
    cfg.region_counts = [48, 42, 45, 20];
    assert!(run_pipeline(&cfg).is_err());
}
