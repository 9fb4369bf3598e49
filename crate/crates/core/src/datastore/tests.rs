use std::collections::BTreeSet;

use super::manifest::render_manifest;
use super::*;
use crate::classify::ClassTaxonomy;

fn tax() -> ClassTaxonomy {
    ClassTaxonomy::dermatology_seven()
}

fn tiny(seed: u8) -> ImageBuffer {
    ImageBuffer::from_fn(16, 16, |x, y| [seed, x as u8 * 9, y as u8 * 11]).unwrap()
}

fn three() -> Dataset {
    let mut d = Dataset::new(tax());
    let mut a = ManifestRow::minimal("a1", "L1", "mel");
    a.age = Some(61);
    a.gender = "Male".into();
    a.fitzpatrick = Some(3);
    a.body_site = "back".into();
    a.device_model = "Pixel 7".into();
    a.text_description = Some("irregular, dark \"blotch\"".into());
    d.push(a, tiny(1)).unwrap();
    d.push(ManifestRow::minimal("a2", "L1", "melanoma"), tiny(2)).unwrap();
    d.push(ManifestRow::minimal("b1", "L2", "ak"), tiny(3)).unwrap();
    d
}

#[test]
fn push_canonicalizes_and_derives_risk() {
    let d = three();
    let rows: Vec<_> = d.rows().collect();
    assert_eq!(rows[0].diagnostic, "melanoma");
    assert_eq!(rows[0].gender, "male");
    assert_eq!(rows[2].risk, RiskTier::PreMalignant);
    assert_eq!(rows[2].image_path, "images/b1.png");
    let mut d = d;
    assert!(d.push(ManifestRow::minimal("a1", "L9", "nevus"), tiny(4)).is_err());
    assert!(d.push(ManifestRow::minimal("../x", "L9", "nevus"), tiny(4)).is_err());
    assert!(d.push(ManifestRow::minimal("c", "L9", "wart"), tiny(4)).is_err());
}

#[test]
fn export_import_export_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = export_dataset(&three(), tmp.path().join("one")).unwrap();
    let text = std::fs::read_to_string(&first).unwrap();
    assert!(text.starts_with(&format!("{MANIFEST_HEADER}\n")));
    assert_eq!(text.lines().count(), 4);
    let back = import_dataset(tmp.path().join("one"), None, &ColumnMapping::identity(), &tax()).unwrap();
    assert!(back.skipped.is_empty() && back.warnings.is_empty(), "{back:?}");
    assert_eq!(back.dataset, three());
    let second = export_dataset(&back.dataset, tmp.path().join("two")).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    for id in ["a1", "a2", "b1"] {
        let rel = format!("images/{id}.png");
        assert_eq!(
            std::fs::read(tmp.path().join("one").join(&rel)).unwrap(),
            std::fs::read(tmp.path().join("two").join(&rel)).unwrap()
        );
    }
}

#[test]
fn empty_export_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(export_dataset(&Dataset::new(tax()), tmp.path()).is_err());
    assert!(render_manifest(&Dataset::new(tax())).unwrap().starts_with(MANIFEST_HEADER));
}

fn write_foreign(dir: &std::path::Path, rows: &[(&str, &str)]) {
    std::fs::create_dir_all(dir.join("imgs")).unwrap();
    let mut text = String::from("patient_id,img_id,diagnostic_label,fitspatrick,smoke,file\n");
    for (i, (diag, file)) in rows.iter().enumerate() {
        text.push_str(&format!("PAT_{i},IMG_{i},{diag},{}.0,False,imgs/{file}\n", 1 + i % 6));
    }
    std::fs::write(dir.join("metadata.csv"), text).unwrap();
}

fn foreign_mapping() -> ColumnMapping {
    ColumnMapping::parse(
        "record_id=patient_id,image_id=img_id,diagnostic=diagnostic_label,fitzpatrick=fitspatrick,image_path=file",
    )
    .unwrap()
}

#[test]
fn foreign_manifest_with_alias_and_missing_image() {
    let tmp = tempfile::tempdir().unwrap();
    write_foreign(
        tmp.path(),
        &[("SEK", "a.png"), ("seborrheic keratosis", "b.png"), ("BCC", "gone.png"), ("wart", "a.png")],
    );
    tiny(1).write_png(tmp.path().join("imgs/a.png")).unwrap();
    tiny(2).write_png(tmp.path().join("imgs/b.png")).unwrap();
    let out = import_dataset(tmp.path(), Some("metadata.csv"), &foreign_mapping(), &tax()).unwrap();
    assert_eq!(out.dataset.len(), 2);
    assert!(out.dataset.rows().all(|r| r.diagnostic == "benign keratosis"));
    assert_eq!(out.dataset.rows().next().unwrap().fitzpatrick, Some(1));
    let lines: Vec<usize> = out.skipped.iter().map(|s| s.line).collect();
    assert_eq!(lines, vec![4, 5]);
    assert!(out.skipped[0].reason.contains("missing"));
    assert!(out.warnings.iter().any(|w| w.contains("`smoke`")));
}

#[test]
fn ten_row_manifest_imports_ten_images() {
    let tmp = tempfile::tempdir().unwrap();
    let files: Vec<String> = (0..10).map(|i| format!("{i}.png")).collect();
    let rows: Vec<(&str, &str)> = files.iter().map(|f| ("nevus", f.as_str())).collect();
    write_foreign(tmp.path(), &rows);
    for i in 0..10 {
        tiny(i as u8).write_png(tmp.path().join(format!("imgs/{i}.png"))).unwrap();
    }
    let out = import_dataset(tmp.path(), Some("metadata.csv"), &foreign_mapping(), &tax()).unwrap();
    assert_eq!(out.dataset.len(), 10);
}

#[test]
fn mapping_without_required_column_fails() {
    let tmp = tempfile::tempdir().unwrap();
    write_foreign(tmp.path(), &[("nevus", "a.png")]);
    let m = foreign_mapping().with("diagnostic", "dx").unwrap();
    assert!(matches!(
        import_dataset(tmp.path(), Some("metadata.csv"), &m, &tax()),
        Err(Error::Manifest(_))
    ));
    assert!(ColumnMapping::parse("colour=x").is_err());
}

#[test]
fn summaries() {
    let empty = summarize(&Dataset::new(tax()));
    assert_eq!(empty.total, 0);
    assert!(empty.by_class.values().chain(empty.by_risk.values()).all(|&c| c == 0));
    assert_eq!(empty.by_class.len(), 7);
    let s = summarize(&three());
    assert_eq!(s.total, 3);
    assert_eq!(s.by_class["melanoma"], 2);
    assert_eq!(s.by_risk["malignant"], 2);
    assert_eq!(s.by_risk["pre-malignant"], 1);
    assert_eq!(s.by_fitzpatrick["unknown"], 2);
    assert_eq!(s.by_class.values().sum::<usize>(), 3);
}

#[test]
fn largest_remainder_sizes() {
    let r = SplitRatios::default();
    assert_eq!(partition_sizes(100, &r), [80, 10, 10]);
    assert_eq!(partition_sizes(3, &r), [3, 0, 0]);
    assert_eq!(partition_sizes(25, &r), [20, 3, 2]);
    assert_eq!(partition_sizes(0, &r), [0, 0, 0]);
}

fn lesions(n: usize, per: usize) -> Dataset {
    let counts: Vec<(&str, usize)> = vec![("nevus", n * per)];
    Dataset::synthetic(tax(), &counts, 16, per, 5).unwrap()
}

#[test]
fn split_single_image_lesions_80_10_10() {
    let d = lesions(100, 1);
    let s = split_dataset(&d, SplitRatios::default(), 3).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
    assert_eq!(s, split_dataset(&d, SplitRatios::default(), 3).unwrap());
    assert_ne!(s, split_dataset(&d, SplitRatios::default(), 4).unwrap());
}

#[test]
fn split_keeps_lesions_together() {
    let d = lesions(12, 5);
    let s = split_dataset(&d, SplitRatios::default(), 11).unwrap();
    for part in [&s.train, &s.val, &s.test] {
        assert_eq!(part.len() % 5, 0);
    }
    let ids = |p: &Dataset| p.rows().map(|r| r.lesion_id.clone()).collect::<BTreeSet<_>>();
    assert!(ids(&s.train).is_disjoint(&ids(&s.test)));
    assert_eq!(s.assignments().len(), 60);
}

#[test]
fn split_needs_three_lesions_and_valid_ratios() {
    assert!(split_dataset(&lesions(2, 3), SplitRatios::default(), 0).is_err());
    let bad = SplitRatios {
        train: 0.8,
        val: 0.3,
        test: 0.1,
    };
    assert!(split_dataset(&lesions(10, 1), bad, 0).is_err());
}

#[test]
fn cases_round_trip_through_a_dataset() {
    use crate::workflow::{CaseStore, StoreConfig};
    let mut d = three();
    for item in &mut d.items {
        item.row.age = Some(40);
        item.row.fitzpatrick = Some(2);
        item.row.body_site = "back".into();
    }
    let mut store = CaseStore::in_memory(tax(), StoreConfig::default()).unwrap();
    let skipped = d.materialize_cases(&mut store, "test").unwrap();
    assert!(skipped.is_empty(), "{skipped:?}");
    assert_eq!(store.len(), 3);
    let back = Dataset::from_cases(&store).unwrap();
    assert_eq!(summarize(&back).by_class, summarize(&d).by_class);
}
