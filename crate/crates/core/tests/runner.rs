use mmrep::bench::{ablation_verdict, run_experiment, DatasetSource, ExperimentConfig, Technique, TrainingOverride};
use mmrep::error::Error;
use mmrep::store::{synth_generate, Dataset, SplitPlan, SynthModality, SynthSpec, SynthUsers};

fn modality(name: &str, informativeness: f64, offset: f64) -> SynthModality {
    SynthModality {
        name: name.into(),
        dim: 6,
        informativeness,
        signal_offset: offset,
        missing_rate: 0.0,
    }
}

fn spec(modalities: Vec<SynthModality>) -> SynthSpec {
    serde_json::from_value(serde_json::json!({
        "n_items": 120, "num_classes": 3, "seed": 5, "separation": 2.0,
        "modalities": serde_json::to_value(modalities).unwrap(),
    }))
    .unwrap()
}

fn config(spec: SynthSpec, techniques: Vec<Technique>) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "dataset": {"synth": serde_json::to_value(&spec).unwrap()},
        "techniques": techniques,
        "sketch": {"default": {"depth": 8, "width": 4, "seed": 1}},
        "split": {"kind": "fractions", "train": 0.6, "val": 0.2, "test": 0.2, "seed": 2},
        "n_runs": 2,
        "base_seed": 40,
    }))
    .unwrap();
    let small = TrainingOverride {
        hidden_scale: Some(0.1),
        epochs: Some(2),
        learning_rate: Some(1e-3),
        ..Default::default()
    };
    cfg.training.early = small;
    cfg.training.late_unimodal = small;
    cfg.training.late_head = small;
    cfg.training.sketch = small;
    cfg.training.sketch_binarized = small;
    cfg
}

fn data(cfg: &ExperimentConfig) -> Dataset<f64> {
    match &cfg.dataset {
        DatasetSource::Synth(s) => synth_generate(s).unwrap(),
        DatasetSource::Manifest(_) => unreachable!(),
    }
}

#[test]
fn grid_covers_every_subset_technique_and_run() {
    let cfg = config(spec(vec![modality("a", 0.5, 0.0), modality("b", 0.5, 0.5)]), Technique::ALL.to_vec());
    let out = run_experiment(&cfg, &data(&cfg)).unwrap();
    assert_eq!(out.records.len(), 4 * 3 * 2);
    assert_eq!(out.reports.len(), 4 * 3);
    for r in &out.records {
        assert!(r.error.is_none(), "{r:?}");
        assert_eq!(r.seed, 40 + r.run_index as u64);
        assert!(r.metrics.contains_key("accuracy"));
    }
    assert_eq!(out.records[0].technique, Technique::Late);
    assert_eq!(out.records[0].modalities, vec!["a"]);
    assert_eq!(out.records[1].run_index, 1);
    assert_eq!(out.records[4].modalities, vec!["a", "b"]);
    assert_eq!(out.total_overlap(), 0);
    assert_eq!(out.audit.len(), 4 * 2);
    assert!(out.failed_cells().is_empty());

    let three = config(
        spec(vec![modality("a", 0.3, 0.0), modality("b", 0.3, 0.3), modality("c", 0.3, 0.6)]),
        vec![Technique::Early],
    );
    let out = run_experiment(&three, &data(&three)).unwrap();
    assert_eq!(out.reports.len(), 7);
}

#[test]
fn records_do_not_depend_on_thread_count() {
    let mut cfg = config(spec(vec![modality("a", 0.5, 0.0), modality("b", 0.5, 0.5)]), Technique::ALL.to_vec());
    let d = data(&cfg);
    cfg.threads = Some(1);
    let one = serde_json::to_string(&run_experiment(&cfg, &d).unwrap().records).unwrap();
    cfg.threads = Some(3);
    let many = serde_json::to_string(&run_experiment(&cfg, &d).unwrap().records).unwrap();
    assert_eq!(one, many);
}

#[test]
fn adding_a_technique_leaves_others_unchanged() {
    let s = spec(vec![modality("a", 0.5, 0.0), modality("b", 0.5, 0.5)]);
    let alone = config(s.clone(), vec![Technique::Early]);
    let both = config(s, vec![Technique::Sketch, Technique::Early]);
    let d = data(&alone);
    let a = run_experiment(&alone, &d).unwrap().records;
    let b = run_experiment(&both, &d).unwrap().records;
    let early: Vec<_> = b.into_iter().filter(|r| r.technique == Technique::Early).collect();
    assert_eq!(a, early);
}

#[test]
fn kfold_records_cross_validation_scores() {
    let mut cfg = config(spec(vec![modality("a", 0.5, 0.0), modality("b", 0.5, 0.5)]), vec![Technique::Early, Technique::Late]);
    cfg.split = SplitPlan::kfold(0.2, 3, 9);
    cfg.n_runs = 1;
    let out = run_experiment(&cfg, &data(&cfg)).unwrap();
    for r in &out.records {
        assert!(r.metrics.contains_key("accuracy"));
        assert!(r.metrics.contains_key("cv_accuracy"), "{r:?}");
    }
    // one test partition and three folds per job
    assert_eq!(out.audit.len(), 2 * 4);
    assert!(out.audit.iter().all(|a| a.overlap == 0));
    let fold_eval: usize = out.audit.iter().filter(|a| a.partition.starts_with("fold") && a.technique == Technique::Early).map(|a| a.n_eval).sum();
    assert_eq!(fold_eval, 96);
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    let mut cfg = config(spec(vec![modality("a", 0.5, 0.0)]), vec![Technique::Early, Technique::Sketch]);
    cfg.training.early.learning_rate = Some(1e300);
    cfg.training.early.hidden_scale = Some(1.0);
    let mut d = data(&cfg);
    for r in &mut d.embeddings[0] {
        r.vector.iter_mut().for_each(|v| *v *= 1e200);
    }
    let out = run_experiment(&cfg, &d).unwrap();
    let early: Vec<_> = out.records.iter().filter(|r| r.technique == Technique::Early).collect();
    assert!(early.iter().all(|r| r.error.as_deref().is_some_and(|e| e.contains("diverged"))));
    assert!(out.records.iter().filter(|r| r.technique == Technique::Sketch).all(|r| r.error.is_none()));
    assert_eq!(out.failed_cells(), vec![(Technique::Early, vec!["a".to_string()])]);
}

#[test]
fn config_errors_surface_before_training() {
    let mut cfg = config(spec(vec![modality("a", 0.5, 0.0)]), vec![Technique::Early]);
    cfg.modality_subsets = Some(vec![vec!["zzz".into()]]);
    assert!(matches!(run_experiment(&cfg, &data(&cfg)), Err(Error::Config(_))));

    let mut users = spec(vec![modality("a", 0.5, 0.0)]);
    users.users = Some(SynthUsers {
        n_users: 30,
        min_items: 20,
        max_items: 25,
        affinity: 0.5,
        positive_rate: 0.5,
    });
    let cfg = config(users, vec![Technique::Early]);
    assert!(matches!(run_experiment(&cfg, &data(&cfg)), Err(Error::Config(_))));
}

#[test]
fn user_task_runs_the_aggregation_pipeline() {
    let mut users = spec(vec![modality("a", 0.6, 0.0), modality("b", 0.4, 0.6)]);
    users.users = Some(SynthUsers {
        n_users: 60,
        min_items: 20,
        max_items: 30,
        affinity: 0.6,
        positive_rate: 0.5,
    });
    let mut cfg = config(users, vec![Technique::Sketch]);
    cfg.n_runs = 1;
    let out = run_experiment(&cfg, &data(&cfg)).unwrap();
    assert_eq!(out.records.len(), 3);
    for r in &out.records {
        assert!(r.error.is_none(), "{r:?}");
        assert!(r.metrics.contains_key("mcc"));
    }
    assert_eq!(out.audit[0].n_eval, 12);
}

#[test]
fn verdict_flags_boost_on_complementary_modalities() {
    let mut s = spec(vec![modality("a", 0.5, 0.0), modality("b", 0.5, 0.5)]);
    s.separation = 1.0;
    s.n_items = 300;
    let mut cfg = config(s, vec![Technique::Early]);
    cfg.training.early = TrainingOverride {
        epochs: Some(30),
        learning_rate: Some(3e-3),
        hidden_scale: Some(0.5),
        ..Default::default()
    };
    let out = run_experiment(&cfg, &data(&cfg)).unwrap();
    let v = ablation_verdict(&out.reports, "accuracy");
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].cells.len(), 1);
    assert!(v[0].cells[0].boost, "{:?}", v[0]);
}
