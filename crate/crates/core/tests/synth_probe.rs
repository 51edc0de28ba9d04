use mmrep::bench::early_features;
use mmrep::labels::Labels;
use mmrep::matrix::Matrix;
use mmrep::neural::{fit_logreg, LogRegConfig};
use mmrep::store::{make_split, synth_generate, Dataset, SplitPlan, SynthSpec};

/// One-vs-rest logistic regression; returns test accuracy.
fn probe_accuracy(x: &Matrix<f64>, classes: &[usize], k: usize, train: &[usize], test: &[usize]) -> f64 {
    let xt = x.select_rows(train);
    let cfg = LogRegConfig {
        c: 1.0,
        max_iters: 2000,
        ..Default::default()
    };
    let models: Vec<_> = (0..k)
        .map(|c| {
            let y: Vec<u8> = train.iter().map(|&i| u8::from(classes[i] == c)).collect();
            fit_logreg(&xt, &y, &cfg).unwrap()
        })
        .collect();
    let xs = x.select_rows(test);
    let scores: Vec<Matrix<f64>> = models.iter().map(|m| m.predict_proba(&xs).unwrap()).collect();
    let hits = test
        .iter()
        .enumerate()
        .filter(|(r, &i)| {
            let best = (0..k)
                .max_by(|&a, &b| scores[a].get(*r, 0).total_cmp(&scores[b].get(*r, 0)))
                .unwrap();
            best == classes[i]
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn complementary_modalities_beat_each_alone_under_a_linear_probe() {
    let spec: SynthSpec = serde_json::from_value(serde_json::json!({
        "n_items": 600, "num_classes": 6, "seed": 17, "separation": 1.5,
        "modalities": [
            {"name": "left", "dim": 12, "informativeness": 0.5, "signal_offset": 0.0},
            {"name": "right", "dim": 12, "informativeness": 0.5, "signal_offset": 0.5}
        ]
    }))
    .unwrap();
    let data: Dataset<f64> = synth_generate(&spec).unwrap();
    let Labels::Multiclass { classes, k } = data.labels().unwrap() else {
        panic!("multiclass expected")
    };
    let split = make_split(data.n_items(), &SplitPlan::fractions(0.7, 0.0, 0.3, 1)).unwrap();
    let acc = |subset: &[usize]| probe_accuracy(&early_features(&data, subset).unwrap(), &classes, k, &split.train, &split.test);
    let (left, right, both) = (acc(&[0]), acc(&[1]), acc(&[0, 1]));
    assert!(left < both && right < both, "left {left}, right {right}, both {both}");
    assert!(both - left.max(right) > 0.05, "left {left}, right {right}, both {both}");
}

#[test]
fn manifest_round_trip_through_disk() {
    let spec: SynthSpec = serde_json::from_value(serde_json::json!({
        "n_items": 40, "num_classes": 4, "seed": 2,
        "modalities": [
            {"name": "text", "dim": 5, "informativeness": 0.5, "missing_rate": 0.3},
            {"name": "image", "dim": 3, "informativeness": 1.0}
        ],
        "users": {"n_users": 6, "min_items": 5, "max_items": 8}
    }))
    .unwrap();
    let data: Dataset<f64> = synth_generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = data.write_to_dir(dir.path()).unwrap();
    let back: Dataset<f64> = Dataset::load(&path).unwrap();
    assert_eq!(back.embeddings, data.embeddings);
    assert_eq!(back.labels().unwrap(), data.labels().unwrap());
    assert_eq!(back.user_item_indices(), data.user_item_indices());

    let again = tempfile::tempdir().unwrap();
    back.write_to_dir(again.path()).unwrap();
    for f in ["text.emb", "image.emb", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
