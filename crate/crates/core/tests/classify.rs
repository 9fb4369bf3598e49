use dermtriage_core::classify::*;
use dermtriage_core::imaging::synth::skin_texture;
use dermtriage_core::imaging::ImageBuffer;
use dermtriage_core::nn::gradient_check;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class counts taken straight from the pairs, then the same averaging
/// conventions with F1 as the harmonic mean of P and R.
fn oracle(pred: &[usize], label: &[usize], n_c: usize) -> (f64, f64, f64, f64) {
    let n = pred.len() as f64;
    let acc = pred.iter().zip(label).filter(|(p, l)| p == l).count() as f64 / n;
    let (mut rs, mut ps, mut fs) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..n_c {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&p, &l) in pred.iter().zip(label) {
            match (p == c, l == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        if tp + fn_ > 0.0 {
            rs.push(tp / (tp + fn_));
        }
        if tp + fp + fn_ > 0.0 {
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            ps.push(p);
            fs.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (acc, mean(&rs), mean(&ps), mean(&fs))
}

#[test]
fn metrics_match_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let n_c = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=50);
        let label: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_c)).collect();
        let m = compute_metrics(&pred, &label, n_c).unwrap();
        let (a, r, p, f) = oracle(&pred, &label, n_c);
        for (got, want) in [(m.accuracy, a), (m.recall, r), (m.precision, p), (m.f1, f)] {
            assert!((got - want).abs() <= 1e-12, "{got} vs {want} for {pred:?} / {label:?}");
        }
        let total: u64 = m.confusion.iter().flatten().sum();
        assert_eq!(total, n as u64);
    }
}

#[test]
fn three_class_fixture_by_hand() {
    // class 0: tp 1, fp 1, fn 1 -> F1 1/2
    // class 1: tp 2, fp 1, fn 0 -> F1 4/5
    // class 2: tp 1, fp 0, fn 1 -> F1 2/3
    let m = compute_metrics(&[0, 1, 1, 1, 2, 0], &[0, 0, 1, 1, 2, 2], 3).unwrap();
    assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
    let f1: Vec<f64> = m.per_class.iter().map(|c| c.f1.unwrap()).collect();
    for (got, want) in f1.iter().zip([0.5, 0.8, 2.0 / 3.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((m.f1 - 59.0 / 90.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn metrics_ignore_pair_order(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40), seed in any::<u64>()) {
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (sp, sl): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let a = compute_metrics(&p, &l, 5).unwrap();
        let b = compute_metrics(&sp, &sl, 5).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        for (x, y) in [(a.accuracy, b.accuracy), (a.recall, b.recall), (a.precision, b.precision), (a.f1, b.f1)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions_score_one(labels in prop::collection::vec(0usize..6, 1..40)) {
        let m = compute_metrics(&labels, &labels, 6).unwrap();
        prop_assert_eq!((m.accuracy, m.recall, m.precision, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn risk_tiers_partition_any_labelled_set(labels in prop::collection::vec(0usize..7, 0..200)) {
        let tax = ClassTaxonomy::dermatology_seven();
        let mut counts = [0usize; 3];
        for &l in &labels {
            match tax.risk_of_index(l).unwrap() {
                RiskTier::Benign => counts[0] += 1,
                RiskTier::PreMalignant => counts[1] += 1,
                RiskTier::Malignant => counts[2] += 1,
            }
        }
        prop_assert_eq!(counts.iter().sum::<usize>(), labels.len());
    }
}

#[test]
fn metric_errors() {
    assert!(compute_metrics(&[0, 1], &[0], 2).is_err());
    assert!(compute_metrics(&[], &[], 2).is_err());
    assert!(compute_metrics(&[2], &[0], 2).is_err());
    assert_eq!(compute_metrics(&[1, 0], &[0, 1], 2).unwrap().accuracy, 0.0);
}

#[test]
fn risk_mapping() {
    let tax = ClassTaxonomy::dermatology_seven();
    assert_eq!(map_risk(&tax, "actinic keratosis").unwrap(), RiskTier::PreMalignant);
    let mel = map_risk(&tax, "melanoma").unwrap();
    assert_eq!(mel, RiskTier::Malignant);
    assert_eq!(mel.binary(), BinaryRisk::PotentiallyMalignant);
    assert_eq!(map_risk(&tax, "Seborrheic_Keratosis").unwrap(), RiskTier::Benign);
    assert!(map_risk(&tax, "unknown-class").is_err());
    assert_eq!(ClassTaxonomy::shared_six().len(), 6);
    assert!(ClassTaxonomy::shared_six().index_of("solar lentigo").is_err());
}

fn red_green() -> (Vec<(ImageBuffer, usize)>, ClassTaxonomy) {
    let tax = ClassTaxonomy::new(vec![
        ClassEntry {
            name: "red".into(),
            aliases: vec![],
            risk: RiskTier::Benign,
        },
        ClassEntry {
            name: "green".into(),
            aliases: vec![],
            risk: RiskTier::Malignant,
        },
    ])
    .unwrap();
    let mut set = Vec::new();
    for i in 0..20u8 {
        set.push((ImageBuffer::filled(64, 64, [200 + i, 30, 30]).unwrap(), 0));
        set.push((ImageBuffer::filled(64, 64, [30, 180 + i, 40]).unwrap(), 1));
    }
    (set, tax)
}

#[test]
fn baseline_separates_red_from_green() {
    let (set, tax) = red_green();
    let (clf, log) = train_baseline(&set, &tax, &BaselineTrainConfig::default()).unwrap();
    assert!(log.final_loss() < log.initial_loss);
    for (img, label) in &set {
        let p = clf.predict(img).unwrap();
        assert_eq!(p.argmax(), *label);
        assert_eq!(p.len(), 2);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p, clf.predict(img).unwrap());
    }
    let (again, _) = train_baseline(&set, &tax, &BaselineTrainConfig::default()).unwrap();
    assert_eq!(again.to_text(), clf.to_text());
    let bad: Vec<_> = set.iter().cloned().chain([(set[0].0.clone(), 2)]).collect();
    assert!(train_baseline(&bad, &tax, &BaselineTrainConfig::default()).is_err());
    assert!(clf.predict(&ImageBuffer::filled(8, 8, [0; 3]).unwrap()).is_err());
}

#[test]
fn baseline_loss_never_rises_at_small_step() {
    let (set, tax) = red_green();
    let cfg = BaselineTrainConfig {
        learning_rate: 1e-3,
        ..Default::default()
    };
    let (_, log) = train_baseline(&set, &tax, &cfg).unwrap();
    let mut prev = log.initial_loss;
    for (epoch, &l) in log.epoch_losses.iter().enumerate() {
        assert!(l <= prev + 1e-12, "epoch {epoch}: {l} > {prev}");
        prev = l;
    }
}

#[test]
fn baseline_gradient_matches_finite_differences() {
    let tax = ClassTaxonomy::dermatology_seven();
    let set: Vec<(ImageBuffer, usize)> = (0..14).map(|i| (skin_texture(i, 48), i as usize % 7)).collect();
    let cfg = BaselineTrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let (clf, _) = train_baseline(&set, &tax, &cfg).unwrap();
    let xs: Vec<Vec<f64>> = set[..8].iter().map(|(img, _)| clf.encode(img).unwrap()).collect();
    let ts: Vec<Vec<f64>> = set[..8]
        .iter()
        .map(|(_, l)| ProbVector::one_hot(7, *l).unwrap().as_slice().to_vec())
        .collect();
    let err = gradient_check(clf.net(), &xs, &ts, 1e-4);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn baseline_file_round_trip() {
    let (set, tax) = red_green();
    let (clf, _) = train_baseline(&set, &tax, &BaselineTrainConfig { epochs: 3, ..Default::default() }).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    clf.save(tmp.path().join("b.model")).unwrap();
    let back = BaselineClassifier::load(tmp.path().join("b.model")).unwrap();
    assert_eq!(back.net(), clf.net());
    assert_eq!(back.taxonomy(), clf.taxonomy());
}
