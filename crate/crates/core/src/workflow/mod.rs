//! Case lifecycle from capture to biopsy-confirmed label, kept as an
//! append-only event log. Every mutation of a [`CaseRecord`] goes through
//! [`CaseEvent::apply`], so replaying the log rebuilds the same records.

mod store;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classify::{BinaryRisk, ProbVector, RiskTier};
use crate::error::{Error, Result};
use crate::imaging::{ImageRef, Rect, RoiCircle};
use crate::quality::QualityReport;

pub use store::{CaptureOutcome, CaseStore, Clock, StoreConfig, LOG_SCHEMA};

/// Anatomical sites accepted for `lesion_location`.
pub const BODY_SITES: [&str; 16] = [
    "abdomen", "arm", "back", "chest", "ear", "face", "foot", "forearm", "genital", "hand", "leg", "lip",
    "neck", "nose", "scalp", "thigh",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Image acquisition only.
    Student,
    Dermatologist,
    Supervisor,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Student => "student",
            Role::Dermatologist => "dermatologist",
            Role::Supervisor => "supervisor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "student" => Ok(Role::Student),
            "dermatologist" => Ok(Role::Dermatologist),
            "supervisor" => Ok(Role::Supervisor),
            other => Err(Error::Validation(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Other,
    #[default]
    Unspecified,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
            Gender::Unspecified => "unspecified",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "other" => Ok(Gender::Other),
            "" | "unspecified" | "unknown" => Ok(Gender::Unspecified),
            other => Err(Error::Validation(format!("unknown gender `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub age: u32,
    #[serde(default)]
    pub gender: Gender,
    pub fitzpatrick: u8,
    pub lesion_location: String,
}

impl PatientMeta {
    /// Checks ranges and normalizes the body site to its lowercase list form.
    pub fn validated(mut self) -> Result<Self> {
        if self.age > 120 {
            return Err(Error::Validation(format!("age {} outside 0..=120", self.age)));
        }
        if !(1..=6).contains(&self.fitzpatrick) {
            return Err(Error::Validation(format!("fitzpatrick {} outside 1..=6", self.fitzpatrick)));
        }
        let site = self.lesion_location.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        if !BODY_SITES.contains(&site.as_str()) {
            return Err(Error::Validation(format!("unknown body site `{}`", self.lesion_location)));
        }
        self.lesion_location = site;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceMeta {
    pub model: String,
    #[serde(default)]
    pub operating_system: String,
    #[serde(default)]
    pub camera: String,
}

impl DeviceMeta {
    pub fn validate(&self) -> Result<()> {
        if self.model.trim().is_empty() {
            return Err(Error::Validation("device model is empty".into()));
        }
        Ok(())
    }
}

/// `Captured` is the instant between receiving an image and gating it; no
/// stored record rests there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseState {
    Created,
    Captured,
    QualityFailed,
    QualityPassed,
    Annotated,
    PredictionIssued,
    FeedbackRecorded,
    BiopsyPending,
    Confirmed,
    Closed,
}

impl CaseState {
    pub const ALL: [CaseState; 10] = [
        CaseState::Created,
        CaseState::Captured,
        CaseState::QualityFailed,
        CaseState::QualityPassed,
        CaseState::Annotated,
        CaseState::PredictionIssued,
        CaseState::FeedbackRecorded,
        CaseState::BiopsyPending,
        CaseState::Confirmed,
        CaseState::Closed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseState::Created => "created",
            CaseState::Captured => "captured",
            CaseState::QualityFailed => "quality_failed",
            CaseState::QualityPassed => "quality_passed",
            CaseState::Annotated => "annotated",
            CaseState::PredictionIssued => "prediction_issued",
            CaseState::FeedbackRecorded => "feedback_recorded",
            CaseState::BiopsyPending => "biopsy_pending",
            CaseState::Confirmed => "confirmed",
            CaseState::Closed => "closed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == key)
            .ok_or_else(|| Error::Validation(format!("unknown case state `{s}`")))
    }
}

impl fmt::Display for CaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub original: ImageRef,
    pub cropped: ImageRef,
    /// Where `cropped` sits inside `original`.
    pub crop_rect: Rect,
    pub device: DeviceMeta,
    pub report: QualityReport,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_crop: Option<ImageRef>,
}

/// Rejected images keep their report; pixels are discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCapture {
    pub device: DeviceMeta,
    pub report: QualityReport,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// In the coordinates of the latest capture's square crop.
    pub roi: RoiCircle,
    pub annotator: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub revision: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPrediction {
    pub name: String,
    pub version: String,
    pub probs: ProbVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preliminary {
    pub members: Vec<MemberPrediction>,
    pub vote: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<ProbVector>,
    /// Fusion argmax when a fusion output exists, the vote otherwise.
    pub class_index: usize,
    pub label: String,
    pub risk: RiskTier,
    pub binary_risk: BinaryRisk,
    pub model_version: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackVerdict {
    Confirm,
    Disagree,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub verdict: FeedbackVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    pub clinician: String,
    pub timestamp: u64,
}

impl FeedbackEntry {
    pub fn validate(&self) -> Result<()> {
        let blank = self.hypothesis.as_deref().is_none_or(|h| h.trim().is_empty());
        if self.verdict == FeedbackVerdict::Disagree && blank {
            return Err(Error::Validation("disagreement needs a diagnostic hypothesis".into()));
        }
        if self.clinician.trim().is_empty() {
            return Err(Error::Validation("clinician id is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histopathology {
    pub result: String,
    pub final_class: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub record_id: String,
    pub lesion_id: String,
    pub patient: PatientMeta,
    pub state: CaseState,
    pub captures: Vec<Capture>,
    pub rejected: Vec<RejectedCapture>,
    pub annotation: Option<Annotation>,
    /// Superseded annotations, oldest first.
    pub annotation_history: Vec<Annotation>,
    pub preliminary: Option<Preliminary>,
    /// Every model version that issued a prediction, oldest first.
    pub prediction_versions: Vec<String>,
    pub feedback: Vec<FeedbackEntry>,
    pub malignant_suspect: bool,
    pub histopathology: Option<Histopathology>,
    pub audit: Vec<String>,
    pub updated_at: u64,
}

impl CaseRecord {
    pub fn recapture_count(&self) -> usize {
        self.rejected.len()
    }

    pub fn latest_capture(&self) -> Option<&Capture> {
        self.captures.last()
    }

    /// Biopsy-confirmed class if present, else the preliminary label.
    pub fn label(&self) -> Option<&str> {
        self.histopathology
            .as_ref()
            .map(|h| h.final_class.as_str())
            .or(self.preliminary.as_ref().map(|p| p.label.as_str()))
    }

    pub fn biopsy_ordered(&self) -> bool {
        self.audit.iter().any(|a| a.starts_with(BIOPSY_ORDER_PREFIX))
    }
}

pub(crate) const BIOPSY_ORDER_PREFIX: &str = "biopsy ordered by supervisor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CaseEvent {
    Created {
        record_id: String,
        lesion_id: String,
        patient: PatientMeta,
        timestamp: u64,
    },
    Imported {
        record_id: String,
        lesion_id: String,
        patient: PatientMeta,
        capture: Capture,
        preliminary: Preliminary,
        source: String,
    },
    CaptureAccepted {
        record_id: String,
        capture: Capture,
    },
    CaptureRejected {
        record_id: String,
        rejected: RejectedCapture,
    },
    Annotated {
        record_id: String,
        annotation: Annotation,
        roi_crop: ImageRef,
    },
    AnnotationRevised {
        record_id: String,
        annotation: Annotation,
        roi_crop: ImageRef,
    },
    PredictionIssued {
        record_id: String,
        preliminary: Preliminary,
    },
    FeedbackRecorded {
        record_id: String,
        entry: FeedbackEntry,
    },
    Flagged {
        record_id: String,
        timestamp: u64,
    },
    BiopsyOrdered {
        record_id: String,
        by: String,
        note: String,
        timestamp: u64,
    },
    HistopathologyAttached {
        record_id: String,
        histopathology: Histopathology,
    },
    Closed {
        record_id: String,
        by: String,
        timestamp: u64,
    },
}

/// `IllegalTransition` unless `state` is one of `allowed`.
pub fn require(op: &'static str, state: CaseState, allowed: &[CaseState]) -> Result<()> {
    if allowed.contains(&state) {
        Ok(())
    } else {
        Err(Error::IllegalTransition {
            op,
            state: state.to_string(),
        })
    }
}

use CaseState as S;

pub const CAPTURE_STATES: &[CaseState] = &[S::Created, S::Captured, S::QualityFailed, S::QualityPassed];
pub const PREDICT_STATES: &[CaseState] = &[S::Annotated, S::PredictionIssued];
pub const FEEDBACK_STATES: &[CaseState] = &[S::PredictionIssued, S::FeedbackRecorded];
pub const FLAG_STATES: &[CaseState] = &[S::Annotated, S::PredictionIssued, S::FeedbackRecorded];
pub const REVISE_STATES: &[CaseState] = &[
    S::Annotated,
    S::PredictionIssued,
    S::FeedbackRecorded,
    S::BiopsyPending,
    S::Confirmed,
    S::Closed,
];

impl CaseEvent {
    pub fn record_id(&self) -> &str {
        match self {
            CaseEvent::Created { record_id, .. }
            | CaseEvent::Imported { record_id, .. }
            | CaseEvent::CaptureAccepted { record_id, .. }
            | CaseEvent::CaptureRejected { record_id, .. }
            | CaseEvent::Annotated { record_id, .. }
            | CaseEvent::AnnotationRevised { record_id, .. }
            | CaseEvent::PredictionIssued { record_id, .. }
            | CaseEvent::FeedbackRecorded { record_id, .. }
            | CaseEvent::Flagged { record_id, .. }
            | CaseEvent::BiopsyOrdered { record_id, .. }
            | CaseEvent::HistopathologyAttached { record_id, .. }
            | CaseEvent::Closed { record_id, .. } => record_id,
        }
    }

    pub fn timestamp(&self) -> u64 {
        match self {
            CaseEvent::Created { timestamp, .. }
            | CaseEvent::Flagged { timestamp, .. }
            | CaseEvent::BiopsyOrdered { timestamp, .. }
            | CaseEvent::Closed { timestamp, .. } => *timestamp,
            CaseEvent::Imported { capture, .. } | CaseEvent::CaptureAccepted { capture, .. } => capture.timestamp,
            CaseEvent::CaptureRejected { rejected, .. } => rejected.timestamp,
            CaseEvent::Annotated { annotation, .. } | CaseEvent::AnnotationRevised { annotation, .. } => {
                annotation.timestamp
            }
            CaseEvent::PredictionIssued { preliminary, .. } => preliminary.timestamp,
            CaseEvent::FeedbackRecorded { entry, .. } => entry.timestamp,
            CaseEvent::HistopathologyAttached { histopathology, .. } => histopathology.timestamp,
        }
    }

    /// Record that a creating event starts, or `None` for events that
    /// modify an existing record.
    pub fn genesis(&self) -> Option<CaseRecord> {
        let blank = |record_id: &str, lesion_id: &str, patient: &PatientMeta, ts: u64| CaseRecord {
            record_id: record_id.to_string(),
            lesion_id: lesion_id.to_string(),
            patient: patient.clone(),
            state: S::Created,
            captures: Vec::new(),
            rejected: Vec::new(),
            annotation: None,
            annotation_history: Vec::new(),
            preliminary: None,
            prediction_versions: Vec::new(),
            feedback: Vec::new(),
            malignant_suspect: false,
            histopathology: None,
            audit: Vec::new(),
            updated_at: ts,
        };
        match self {
            CaseEvent::Created {
                record_id,
                lesion_id,
                patient,
                timestamp,
            } => Some(blank(record_id, lesion_id, patient, *timestamp)),
            CaseEvent::Imported {
                record_id,
                lesion_id,
                patient,
                capture,
                preliminary,
                source,
            } => {
                let mut r = blank(record_id, lesion_id, patient, capture.timestamp);
                r.captures.push(capture.clone());
                r.prediction_versions.push(preliminary.model_version.clone());
                r.preliminary = Some(preliminary.clone());
                r.audit.push(format!("imported from {source}"));
                r.state = S::PredictionIssued;
                Some(r)
            }
            _ => None,
        }
    }

    /// Applies a non-creating event, enforcing the legal edge set.
    pub fn apply(&self, r: &mut CaseRecord) -> Result<()> {
        if self.record_id() != r.record_id {
            return Err(Error::Validation(format!(
                "event for {} applied to {}",
                self.record_id(),
                r.record_id
            )));
        }
        if self.timestamp() <= r.updated_at && self.genesis().is_none() {
            return Err(Error::Validation(format!(
                "timestamp {} does not advance past {}",
                self.timestamp(),
                r.updated_at
            )));
        }
        match self {
            CaseEvent::Created { .. } | CaseEvent::Imported { .. } => {
                return Err(Error::Validation(format!("record {} already exists", r.record_id)));
            }
            CaseEvent::CaptureAccepted { capture, .. } => {
                require("attach a capture to", r.state, CAPTURE_STATES)?;
                if !capture.report.verdict.is_pass() && capture.override_note.is_none() {
                    return Err(Error::Validation("failing capture stored without override note".into()));
                }
                if let Some(note) = &capture.override_note {
                    r.audit.push(note.clone());
                }
                r.captures.push(capture.clone());
                r.state = S::QualityPassed;
            }
            CaseEvent::CaptureRejected { rejected, .. } => {
                require("attach a capture to", r.state, CAPTURE_STATES)?;
                r.rejected.push(rejected.clone());
                // an earlier accepted capture still stands
                if r.captures.is_empty() {
                    r.state = S::QualityFailed;
                }
            }
            CaseEvent::Annotated { annotation, roi_crop, .. } => {
                require("annotate", r.state, &[S::QualityPassed])?;
                set_annotation(r, annotation, roi_crop)?;
                r.state = S::Annotated;
            }
            CaseEvent::AnnotationRevised { annotation, roi_crop, .. } => {
                require("revise the annotation of", r.state, REVISE_STATES)?;
                set_annotation(r, annotation, roi_crop)?;
            }
            CaseEvent::PredictionIssued { preliminary, .. } => {
                require("issue a prediction for", r.state, PREDICT_STATES)?;
                r.prediction_versions.push(preliminary.model_version.clone());
                r.preliminary = Some(preliminary.clone());
                r.state = S::PredictionIssued;
            }
            CaseEvent::FeedbackRecorded { entry, .. } => {
                require("record feedback on", r.state, FEEDBACK_STATES)?;
                entry.validate()?;
                r.feedback.push(entry.clone());
                r.state = S::FeedbackRecorded;
            }
            CaseEvent::Flagged { .. } => {
                require("flag", r.state, FLAG_STATES)?;
                r.malignant_suspect = true;
                r.state = S::BiopsyPending;
            }
            CaseEvent::BiopsyOrdered { by, note, .. } => {
                require("order a biopsy for", r.state, FLAG_STATES)?;
                r.audit.push(format!("{BIOPSY_ORDER_PREFIX} {by}: {note}"));
                r.state = S::BiopsyPending;
            }
            CaseEvent::HistopathologyAttached { histopathology, .. } => {
                require("attach histopathology to", r.state, &[S::BiopsyPending])?;
                r.histopathology = Some(histopathology.clone());
                r.state = S::Confirmed;
            }
            CaseEvent::Closed { by, .. } => {
                require("close", r.state, &[S::Confirmed])?;
                r.audit.push(format!("closed by supervisor {by}"));
                r.state = S::Closed;
            }
        }
        r.updated_at = self.timestamp();
        Ok(())
    }
}

fn set_annotation(r: &mut CaseRecord, annotation: &Annotation, roi_crop: &ImageRef) -> Result<()> {
    let latest = r
        .captures
        .last_mut()
        .ok_or_else(|| Error::Validation("annotation without a stored capture".into()))?;
    latest.roi_crop = Some(roi_crop.clone());
    if let Some(prev) = r.annotation.replace(annotation.clone()) {
        r.annotation_history.push(prev);
    }
    Ok(())
}
