use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use dermtriage_core::classify::ClassTaxonomy;
use dermtriage_core::datastore::*;
use dermtriage_core::imaging::synth::skin_texture;
use dermtriage_core::imaging::{apply_distortion, DistortionKind, DistortionSpec};
use dermtriage_core::quality::{default_distortion_grid, train_quality_model, QualityModel, QualityTrainConfig};
use proptest::prelude::*;

fn tax() -> ClassTaxonomy {
    ClassTaxonomy::dermatology_seven()
}

fn quality_model() -> &'static QualityModel {
    static MODEL: OnceLock<QualityModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let corpus: Vec<_> = (0..50).map(|s| skin_texture(s, 64)).collect();
        train_quality_model(&corpus, &default_distortion_grid(), &QualityTrainConfig::default())
            .unwrap()
            .model
    })
}

#[test]
fn reference_distribution_summary() {
    let d = Dataset::synthetic(tax(), &REFERENCE_CLASS_COUNTS, 12, 1, 0).unwrap();
    let s = summarize(&d);
    assert_eq!(s.total, 3401);
    assert_eq!(s.by_risk["benign"], 2273);
    assert_eq!(s.by_risk["malignant"], 608);
    assert_eq!(s.by_risk["pre-malignant"], 520);
    assert_eq!(s.by_class["actinic keratosis"], 520);
}

#[test]
fn filter_drops_blurred_and_keeps_clean() {
    let mut d = Dataset::new(tax());
    for i in 0..10u64 {
        let clean = skin_texture(30_000 + i, 64);
        let blurred = apply_distortion(
            &clean,
            DistortionSpec {
                kind: DistortionKind::Blur,
                magnitude: 5.0,
            },
        )
        .unwrap();
        d.push(ManifestRow::minimal(&format!("clean-{i}"), &format!("L{i}"), "nevus"), clean)
            .unwrap();
        d.push(ManifestRow::minimal(&format!("blur-{i}"), &format!("L{i}"), "nevus"), blurred)
            .unwrap();
    }
    let out = quality_filter_dataset(&d, quality_model());
    let removed: BTreeSet<&str> = out.removed.iter().map(|r| r.image_id.as_str()).collect();
    assert!(removed.iter().all(|id| id.starts_with("blur-")), "{}", out.report());
    assert!(removed.len() >= 8, "{}", out.report());
    assert_eq!(out.kept.len() + out.removed.len(), 20);
    assert_eq!(out.report().lines().count(), removed.len());

    let again = quality_filter_dataset(&out.kept, quality_model());
    assert!(again.removed.is_empty());
    assert_eq!(again.kept, out.kept);
}

#[test]
fn tiny_images_are_reported_not_assessed() {
    let mut d = Dataset::new(tax());
    d.push(ManifestRow::minimal("t", "L", "nevus"), skin_texture(1, 8)).unwrap();
    let out = quality_filter_dataset(&d, quality_model());
    assert_eq!(out.report(), "t,too_small\n");
}

fn dataset(counts: &[usize], per: usize, seed: u64) -> Dataset {
    let t = tax();
    let names: Vec<String> = t.names().map(str::to_string).collect();
    let class_counts: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(counts.iter().copied()).collect();
    Dataset::synthetic(t, &class_counts, 12, per, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_deterministic_grouped_and_complete(
        counts in prop::collection::vec(0usize..12, 7),
        per in 1usize..4,
        seed in any::<u64>(),
    ) {
        let d = dataset(&counts, per, 0);
        let lesions: BTreeSet<String> = d.rows().map(|r| r.lesion_id.clone()).collect();
        match split_dataset(&d, SplitRatios::default(), seed) {
            Err(_) => prop_assert!(lesions.len() < 3),
            Ok(s) => {
                prop_assert_eq!(&s, &split_dataset(&d, SplitRatios::default(), seed).unwrap());
                let mut owner: BTreeMap<String, usize> = BTreeMap::new();
                for (p, part) in [&s.train, &s.val, &s.test].iter().enumerate() {
                    for r in part.rows() {
                        let prev = owner.insert(r.lesion_id.clone(), p);
                        prop_assert!(prev.is_none() || prev == Some(p), "lesion {} split", r.lesion_id);
                    }
                }
                let assigned = s.assignments();
                prop_assert_eq!(assigned.len(), d.len());
                prop_assert_eq!(assigned.keys().cloned().collect::<BTreeSet<_>>(), d.image_ids());
                let per_part = [&s.train, &s.val, &s.test].map(|p| {
                    p.rows().map(|r| r.lesion_id.clone()).collect::<BTreeSet<_>>().len()
                });
                prop_assert_eq!(per_part, partition_sizes(lesions.len(), &SplitRatios::default()));
            }
        }
    }

    #[test]
    fn partition_sizes_add_up(n in 0usize..5000, a in 1u32..100, b in 0u32..100, c in 0u32..100) {
        let total = (a + b + c) as f64;
        let r = SplitRatios { train: a as f64 / total, val: b as f64 / total, test: c as f64 / total };
        let sizes = partition_sizes(n, &r);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        for (size, ratio) in sizes.iter().zip([r.train, r.val, r.test]) {
            prop_assert!((*size as f64 - ratio * n as f64).abs() < 1.0 + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn summary_survives_export_and_import(counts in prop::collection::vec(0usize..4, 7), seed in any::<u64>()) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let d = dataset(&counts, 2, seed);
        let tmp = tempfile::tempdir().unwrap();
        export_dataset(&d, tmp.path()).unwrap();
        let back = import_dataset(tmp.path(), None, &ColumnMapping::identity(), &tax()).unwrap();
        prop_assert!(back.skipped.is_empty());
        prop_assert_eq!(summarize(&back.dataset), summarize(&d));
        prop_assert_eq!(back.dataset, d);
    }
}
