use nalgebra::DVector;

use super::*;

fn desk_config(generator: GeneratorKind) -> SupervisedConfig {
    SupervisedConfig {
        hidden_dim: 8,
        depth_steps: 12,
        step: 1.0 / 12.0,
        epochs: 30,
        learning_rate: 0.25,
        batch_size: 16,
        nonlinearity: Nonlinearity::Abs,
        generator,
        gate_count: 2,
        seed: 7,
    }
}

#[test]
fn softmax_sums_to_one() {
    let logits = DVector::from_vec(vec![2.0, -1.0, 0.5, 30.0]);
    let probs = softmax(&logits);
    let total: f64 = probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(probs.iter().all(|p| *p >= 0.0));
}

#[test]
fn zero_input_zero_bias_gives_zero_logits() {
    let cfg = desk_config(GeneratorKind::Iso);
    let classifier = Classifier::init(2, 2, &cfg).unwrap();
    let logits = classify_forward(&DVector::zeros(2), &classifier, &cfg.flow_config()).unwrap();
    assert!(logits.amax() == 0.0);
}

#[test]
fn classification_is_pure() {
    let cfg = desk_config(GeneratorKind::Gated);
    let classifier = Classifier::init(2, 2, &cfg).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.9]);
    let a = classify_forward(&x, &classifier, &cfg.flow_config()).unwrap();
    let b = classify_forward(&x, &classifier, &cfg.flow_config()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn blobs_generator_self_check() {
    // the midplane classifier must score at least 0.99 on its own sample
    let ds = synth_dataset(SynthKind::Blobs, 400, 3).unwrap();
    // recover the separating direction from the class means
    let mut mean0 = DVector::zeros(2);
    let mut mean1 = DVector::zeros(2);
    let (mut n0, mut n1) = (0.0, 0.0);
    for i in 0..ds.len() {
        if ds.label(i) == 0 {
            mean0 += ds.feature(i);
            n0 += 1.0;
        } else {
            mean1 += ds.feature(i);
            n1 += 1.0;
        }
    }
    mean0 /= n0;
    mean1 /= n1;
    let direction = (&mean1 - &mean0).normalize();
    let midpoint = (&mean0 + &mean1) / 2.0;
    let mut correct = 0;
    for i in 0..ds.len() {
        let side = direction.dot(&(ds.feature(i) - &midpoint)) > 0.0;
        if side == (ds.label(i) == 1) {
            correct += 1;
        }
    }
    assert!(correct as f64 / ds.len() as f64 >= 0.99);
}

#[test]
fn synth_counts_split_across_classes() {
    let ds = synth_dataset(SynthKind::Blobs, 201, 4).unwrap();
    let zeros = (0..ds.len()).filter(|&i| ds.label(i) == 0).count();
    assert_eq!(zeros, 101);
    assert_eq!(ds.len() - zeros, 100);
}

#[test]
fn synth_is_deterministic() {
    let a = synth_dataset(SynthKind::Rings, 50, 9).unwrap();
    let b = synth_dataset(SynthKind::Rings, 50, 9).unwrap();
    for i in 0..a.len() {
        assert_eq!(a.feature(i), b.feature(i));
        assert_eq!(a.label(i), b.label(i));
    }
}

#[test]
fn memorization_drives_loss_down_monotonically() {
    let ds = Dataset::new(
        vec![DVector::from_vec(vec![1.0, -0.5])],
        vec![1],
        2,
    )
    .unwrap();
    let mut cfg = desk_config(GeneratorKind::Iso);
    cfg.epochs = 500;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 1;
    let (_, history) = train_supervised(&ds, &cfg).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
    }
    assert!(
        history.final_loss() < 0.05,
        "memorization loss stayed at {}",
        history.final_loss()
    );
}

#[test]
fn blobs_train_to_high_accuracy_iso() {
    let ds = synth_dataset(SynthKind::Blobs, 100, 11).unwrap();
    let (classifier, history) = train_supervised(&ds, &desk_config(GeneratorKind::Iso)).unwrap();
    let accuracy = evaluate_accuracy(
        &classifier,
        &ds,
        &desk_config(GeneratorKind::Iso).flow_config(),
    )
    .unwrap();
    assert!(accuracy >= 0.95, "accuracy {accuracy}");
    assert!(history.ratios_within_bounds(1e-9));
}

#[test]
fn blobs_train_to_high_accuracy_gated() {
    let ds = synth_dataset(SynthKind::Blobs, 100, 12).unwrap();
    let (classifier, history) = train_supervised(&ds, &desk_config(GeneratorKind::Gated)).unwrap();
    let accuracy = evaluate_accuracy(
        &classifier,
        &ds,
        &desk_config(GeneratorKind::Gated).flow_config(),
    )
    .unwrap();
    assert!(accuracy >= 0.95, "accuracy {accuracy}");
    assert!(history.ratios_within_bounds(1e-9));
}

#[test]
fn training_is_deterministic() {
    let ds = synth_dataset(SynthKind::Blobs, 60, 13).unwrap();
    let mut cfg = desk_config(GeneratorKind::Iso);
    cfg.epochs = 5;
    let (_, a) = train_supervised(&ds, &cfg).unwrap();
    let (_, b) = train_supervised(&ds, &cfg).unwrap();
    assert_eq!(a.epochs, b.epochs);
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = std::env::temp_dir().join("orthoflow_csv_tests");
    std::fs::create_dir_all(&dir).unwrap();

    let good = dir.join("good.csv");
    std::fs::write(&good, "label,f0,f1\n0,1.5,-2.0\n1,0.25,0.75\n0,3.0,1.0\n").unwrap();
    let ds = load_csv(&good).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.feature_dim(), 2);
    assert_eq!(ds.class_count(), 2);
    assert_eq!(ds.feature(1)[1], 0.75);

    let empty = dir.join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(load_csv(&empty).is_err());

    let bad_value = dir.join("bad_value.csv");
    std::fs::write(&bad_value, "label,f0\n0,1.0\n1,oops\n").unwrap();
    let err = load_csv(&bad_value).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    let ragged = dir.join("ragged.csv");
    std::fs::write(&ragged, "label,f0,f1\n0,1.0,2.0\n1,3.0\n").unwrap();
    let err = load_csv(&ragged).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    assert!(load_csv(dir.join("missing.csv")).is_err());
}

#[test]
fn dataset_validation() {
    assert!(Dataset::new(vec![], vec![], 2).is_err());
    assert!(Dataset::new(vec![DVector::zeros(2)], vec![5], 2).is_err());
    assert!(Dataset::new(
        vec![DVector::zeros(2), DVector::zeros(3)],
        vec![0, 1],
        2
    )
    .is_err());
}

#[test]
fn config_rejects_baseline_generator() {
    let mut cfg = desk_config(GeneratorKind::Iso);
    cfg.generator = GeneratorKind::TrigBaseline;
    assert!(cfg.validate().is_err());
}
