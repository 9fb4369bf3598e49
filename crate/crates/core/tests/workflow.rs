//! Exhaustive exploration of short operation sequences on one case.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dermtriage_core::classify::{ClassTaxonomy, ProbVector};
use dermtriage_core::imaging::{ImageBuffer, RoiCircle};
use dermtriage_core::quality::{QualityReport, INDICATOR_COUNT};
use dermtriage_core::workflow::*;
use dermtriage_core::Error;

const DEPTH: usize = 7;

#[derive(Debug, Clone, Copy)]
enum Op {
    CapturePass,
    CaptureFail,
    CaptureOverride,
    AnnotateDerm,
    AnnotateStudent,
    Revise,
    Predict,
    Feedback,
    Flag,
    OrderBiopsy,
    OrderBiopsyDerm,
    Histology,
    Close,
}

const OPS: [Op; 13] = [
    Op::CapturePass,
    Op::CaptureFail,
    Op::CaptureOverride,
    Op::AnnotateDerm,
    Op::AnnotateStudent,
    Op::Revise,
    Op::Predict,
    Op::Feedback,
    Op::Flag,
    Op::OrderBiopsy,
    Op::OrderBiopsyDerm,
    Op::Histology,
    Op::Close,
];

fn report(blur: f64) -> QualityReport {
    QualityReport::from_scores([0.1, blur, 0.1, 0.1], [0.5; INDICATOR_COUNT])
}

fn device() -> DeviceMeta {
    DeviceMeta {
        model: "Pixel 7".into(),
        operating_system: "Android 14".into(),
        camera: "main".into(),
    }
}

fn photo() -> ImageBuffer {
    ImageBuffer::from_fn(48, 32, |x, y| [(x * 5) as u8, (y * 7) as u8, 90]).unwrap()
}

const ROI: RoiCircle = RoiCircle {
    center_x: 16.0,
    center_y: 16.0,
    radius: 6.0,
};

fn run(s: &mut CaseStore, id: &str, op: Op) -> Result<(), Error> {
    match op {
        Op::CapturePass => s.attach_capture(id, &photo(), device(), report(0.1), None).map(drop),
        Op::CaptureFail => s.attach_capture(id, &photo(), device(), report(0.9), None).map(drop),
        Op::CaptureOverride => s
            .attach_capture(id, &photo(), device(), report(0.9), Some("patient cannot return"))
            .map(drop),
        Op::AnnotateDerm => s.annotate(id, ROI, "derm", Role::Dermatologist, None).map(drop),
        Op::AnnotateStudent => s.annotate(id, ROI, "stu", Role::Student, None).map(drop),
        Op::Revise => s.revise_annotation(id, ROI, "sup", Role::Supervisor, None).map(drop),
        Op::Predict => {
            let mut p = vec![0.05; 7];
            p[0] = 0.7;
            let members = vec![MemberPrediction {
                name: "baseline".into(),
                version: "v1".into(),
                probs: ProbVector::new(p).unwrap(),
            }];
            s.issue_prediction(id, members, 0, None, "v1").map(drop)
        }
        Op::Feedback => s.record_feedback(id, FeedbackVerdict::Confirm, None, "derm").map(drop),
        Op::Flag => s.flag_malignant_suspect(id).map(drop),
        Op::OrderBiopsy => s.order_biopsy(id, "sup", Role::Supervisor, "atypical border").map(drop),
        Op::OrderBiopsyDerm => s.order_biopsy(id, "derm", Role::Dermatologist, "atypical").map(drop),
        Op::Histology => s.attach_histopathology(id, "melanoma in situ", "mel").map(drop),
        Op::Close => s.close(id, "sup", Role::Supervisor).map(drop),
    }
}

fn rank(s: CaseState) -> usize {
    CaseState::ALL.iter().position(|&x| x == s).unwrap()
}

struct Stats {
    sequences: usize,
    confirmed: usize,
    closed: usize,
    overrides: usize,
}

fn check(s: &CaseStore, id: &str, history: &[CaseState]) {
    let r = s.get(id).unwrap();
    for c in &r.captures {
        if !c.report.verdict.is_pass() {
            assert!(c.override_note.as_deref().is_some_and(|n| n.contains("override")), "{c:?}");
        }
    }
    if matches!(r.state, CaseState::Confirmed | CaseState::Closed) {
        assert!(history.contains(&CaseState::BiopsyPending), "{history:?}");
        assert!(r.malignant_suspect || r.biopsy_ordered());
        assert!(r.histopathology.is_some());
    }
    for w in history.windows(2) {
        assert!(rank(w[0]) <= rank(w[1]), "state went back: {history:?}");
    }
    let stamps: Vec<u64> = s.events().iter().map(CaseEvent::timestamp).collect();
    assert!(stamps.windows(2).all(|w| w[0] < w[1]), "{stamps:?}");
    let replayed = CaseStore::replay(s.events()).unwrap();
    assert_eq!(replayed.get(id), Some(r));
}

fn explore(s: &CaseStore, id: &str, history: &mut Vec<CaseState>, depth: usize, stats: &mut Stats) {
    stats.sequences += 1;
    let state = s.get(id).unwrap().state;
    stats.confirmed += usize::from(state == CaseState::Confirmed);
    stats.closed += usize::from(state == CaseState::Closed);
    if depth == DEPTH {
        return;
    }
    for op in OPS {
        let mut next = s.clone();
        match run(&mut next, id, op) {
            Ok(()) => {
                if matches!(op, Op::CaptureOverride) {
                    stats.overrides += 1;
                }
                history.push(next.get(id).unwrap().state);
                check(&next, id, history);
                explore(&next, id, history, depth + 1, stats);
                history.pop();
            }
            Err(e) => {
                assert!(
                    matches!(e, Error::IllegalTransition { .. } | Error::Unauthorized(_)),
                    "{op:?} in {state}: {e}"
                );
                assert_eq!(next.events().len(), s.events().len());
                assert_eq!(next.get(id).unwrap(), s.get(id).unwrap());
                if matches!(op, Op::AnnotateStudent | Op::OrderBiopsyDerm) {
                    assert!(matches!(e, Error::Unauthorized(_)));
                }
            }
        }
    }
}

#[test]
fn every_short_operation_sequence_keeps_the_invariants() {
    let t = Arc::new(AtomicU64::new(10));
    let mut s = CaseStore::in_memory(ClassTaxonomy::dermatology_seven(), StoreConfig::default())
        .unwrap()
        .with_clock(Arc::new(move || t.fetch_add(1, Ordering::SeqCst)));
    let patient = PatientMeta {
        age: 70,
        gender: Gender::Male,
        fitzpatrick: 2,
        lesion_location: "back".into(),
    };
    let id = s.create_case(patient, None).unwrap().record_id;
    let mut stats = Stats {
        sequences: 0,
        confirmed: 0,
        closed: 0,
        overrides: 0,
    };
    explore(&s, &id, &mut vec![CaseState::Created], 0, &mut stats);
    assert!(stats.sequences > 1000, "{}", stats.sequences);
    assert!(stats.confirmed > 0 && stats.closed > 0 && stats.overrides > 0);
}

#[test]
fn log_on_disk_replays_to_the_same_records() {
    let tmp = tempfile::tempdir().unwrap();
    let tax = ClassTaxonomy::dermatology_seven();
    let patient = PatientMeta {
        age: 33,
        gender: Gender::Female,
        fitzpatrick: 5,
        lesion_location: "scalp".into(),
    };
    let snapshot = {
        let mut s = CaseStore::open(tmp.path(), tax.clone(), StoreConfig::default()).unwrap();
        for _ in 0..3 {
            let id = s.create_case(patient.clone(), None).unwrap().record_id;
            for op in [Op::CaptureFail, Op::CapturePass, Op::AnnotateDerm, Op::Predict, Op::OrderBiopsy] {
                run(&mut s, &id, op).unwrap();
            }
        }
        s.records().cloned().collect::<Vec<_>>()
    };
    let reopened = CaseStore::open(tmp.path(), tax, StoreConfig::default()).unwrap();
    assert_eq!(reopened.records().cloned().collect::<Vec<_>>(), snapshot);
    let roi = reopened.roi_image(&snapshot[0].record_id).unwrap();
    assert_eq!(roi.width(), roi.height());
}
