use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::*;
use crate::blobs::BlobStore;
use crate::classify::ClassTaxonomy;
use crate::ensemble::EnsembleInput;
use crate::imaging::{center_square_crop, center_square_rect, roi_crop, CropSpec, ImageBuffer};

pub const LOG_SCHEMA: u32 = 1;
const LOG_FILE: &str = "events.ndjson";
const BLOB_DIR: &str = "blobs";

/// Milliseconds source for event timestamps.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn wall_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub crop: CropSpec,
    pub roi_padding: f64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            crop: CropSpec::default(),
            roi_padding: 1.2,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    schema: u32,
    event: CaseEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureOutcome {
    pub accepted: bool,
    pub record: CaseRecord,
}

/// Case records plus the event log that produced them. One writer at a
/// time; clones are independent snapshots that share image storage.
#[derive(Clone)]
pub struct CaseStore {
    taxonomy: ClassTaxonomy,
    config: StoreConfig,
    blobs: BlobStore,
    records: BTreeMap<String, CaseRecord>,
    events: Vec<CaseEvent>,
    log_path: Option<PathBuf>,
    next_id: u64,
    clock: Clock,
}

impl fmt::Debug for CaseStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaseStore")
            .field("records", &self.records.len())
            .field("events", &self.events.len())
            .field("log_path", &self.log_path)
            .finish()
    }
}

impl CaseStore {
    pub fn in_memory(taxonomy: ClassTaxonomy, config: StoreConfig) -> Result<Self> {
        config.crop.validate()?;
        if !(config.roi_padding >= 1.0 && config.roi_padding.is_finite()) {
            return Err(Error::Validation(format!("roi padding {} must be >= 1", config.roi_padding)));
        }
        Ok(Self {
            taxonomy,
            config,
            blobs: BlobStore::in_memory(),
            records: BTreeMap::new(),
            events: Vec::new(),
            log_path: None,
            next_id: 1,
            clock: wall_clock(),
        })
    }

    /// Opens (or creates) a store directory, replaying its event log.
    pub fn open(dir: impl AsRef<Path>, taxonomy: ClassTaxonomy, config: StoreConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let mut store = Self::in_memory(taxonomy, config)?;
        store.blobs = BlobStore::on_disk(dir.join(BLOB_DIR))?;
        let log = dir.join(LOG_FILE);
        if log.exists() {
            let f = std::fs::File::open(&log).map_err(|e| Error::io(&log, e))?;
            let mut events = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&log, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: LogLine = serde_json::from_str(&line)?;
                if parsed.schema != LOG_SCHEMA {
                    return Err(Error::Validation(format!(
                        "{}:{}: unsupported log schema {}",
                        log.display(),
                        i + 1,
                        parsed.schema
                    )));
                }
                events.push(parsed.event);
            }
            store.records = Self::replay(&events)?;
            store.next_id = store.records.len() as u64 + 1;
            store.events = events;
        }
        store.log_path = Some(log);
        Ok(store)
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Rebuilds records from scratch.
    pub fn replay(events: &[CaseEvent]) -> Result<BTreeMap<String, CaseRecord>> {
        let mut records = BTreeMap::new();
        for ev in events {
            apply_to(&mut records, ev)?;
        }
        Ok(records)
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn events(&self) -> &[CaseEvent] {
        &self.events
    }

    pub fn records(&self) -> impl Iterator<Item = &CaseRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&CaseRecord> {
        self.records
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("case {id}")))
    }

    fn timestamp_for(&self, id: Option<&str>) -> u64 {
        let floor = id
            .and_then(|id| self.records.get(id))
            .map_or(0, |r| r.updated_at + 1);
        (self.clock)().max(floor)
    }

    fn fresh_id(&mut self) -> String {
        loop {
            let id = format!("case-{:06}", self.next_id);
            self.next_id += 1;
            if !self.records.contains_key(&id) {
                return id;
            }
        }
    }

    fn commit(&mut self, ev: CaseEvent) -> Result<CaseRecord> {
        let mut scratch = BTreeMap::new();
        let id = ev.record_id().to_string();
        if let Some(existing) = self.records.get(&id) {
            scratch.insert(id.clone(), existing.clone());
        } else if ev.genesis().is_none() {
            return Err(Error::NotFound(format!("case {id}")));
        }
        apply_to(&mut scratch, &ev)?;
        if let Some(path) = &self.log_path {
            let line = serde_json::to_string(&LogLine {
                schema: LOG_SCHEMA,
                event: ev.clone(),
            })?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        let record = scratch.remove(&id).expect("applied record present");
        self.records.insert(id, record.clone());
        self.events.push(ev);
        Ok(record)
    }

    pub fn create_case(&mut self, patient: PatientMeta, lesion_id: Option<String>) -> Result<CaseRecord> {
        let patient = patient.validated()?;
        let record_id = self.fresh_id();
        let lesion_id = lesion_id
            .filter(|l| !l.trim().is_empty())
            .unwrap_or_else(|| record_id.clone());
        let timestamp = self.timestamp_for(None);
        self.commit(CaseEvent::Created {
            record_id,
            lesion_id,
            patient,
            timestamp,
        })
    }

    /// Gates a capture on `report`. A failing report is stored only with an
    /// override reason, which lands in the audit trail.
    pub fn attach_capture(
        &mut self,
        id: &str,
        original: &ImageBuffer,
        device: DeviceMeta,
        report: QualityReport,
        override_reason: Option<&str>,
    ) -> Result<CaptureOutcome> {
        let state = self.get(id)?.state;
        require("attach a capture to", state, CAPTURE_STATES)?;
        device.validate()?;
        if !report.is_consistent() {
            return Err(Error::Validation("quality report flags disagree with its scores".into()));
        }
        let timestamp = self.timestamp_for(Some(id));
        let passes = report.verdict.is_pass();
        if !passes && override_reason.is_none() {
            let record = self.commit(CaseEvent::CaptureRejected {
                record_id: id.to_string(),
                rejected: RejectedCapture {
                    device,
                    report,
                    timestamp,
                },
            })?;
            return Ok(CaptureOutcome { accepted: false, record });
        }
        let override_note = (!passes).then(|| {
            let reasons: Vec<&str> = report.verdict.reasons().iter().map(|r| r.as_str()).collect();
            let why = override_reason.map(str::trim).filter(|s| !s.is_empty()).unwrap_or("no reason given");
            format!("quality override at {timestamp} ({}): {why}", reasons.join(", "))
        });
        let crop_rect = center_square_rect(original.width(), original.height(), self.config.crop)?;
        let cropped = center_square_crop(original, self.config.crop)?;
        let capture = Capture {
            original: self.blobs.put(original)?,
            cropped: self.blobs.put(&cropped)?,
            crop_rect,
            device,
            report,
            timestamp,
            override_note,
            roi_crop: None,
        };
        let record = self.commit(CaseEvent::CaptureAccepted {
            record_id: id.to_string(),
            capture,
        })?;
        Ok(CaptureOutcome { accepted: true, record })
    }

    fn roi_annotation(
        &self,
        r: &CaseRecord,
        roi: RoiCircle,
        annotator: &str,
        role: Role,
        description: Option<String>,
        timestamp: u64,
    ) -> Result<(Annotation, ImageRef)> {
        if annotator.trim().is_empty() {
            return Err(Error::Validation("annotator id is empty".into()));
        }
        let capture = r
            .latest_capture()
            .ok_or_else(|| Error::Validation("no stored capture to annotate".into()))?;
        let crop = self.blobs.get(&capture.cropped)?;
        roi.validate_for(crop.width(), crop.height())
            .map_err(|e| Error::Validation(e.to_string()))?;
        let roi_img = roi_crop(&crop, roi, self.config.roi_padding)?;
        let annotation = Annotation {
            roi,
            annotator: annotator.to_string(),
            role,
            description: description.filter(|d| !d.trim().is_empty()),
            revision: r.annotation.as_ref().map_or(0, |a| a.revision + 1),
            timestamp,
        };
        Ok((annotation, self.blobs.put(&roi_img)?))
    }

    pub fn annotate(
        &mut self,
        id: &str,
        roi: RoiCircle,
        annotator: &str,
        role: Role,
        description: Option<String>,
    ) -> Result<CaseRecord> {
        if !matches!(role, Role::Dermatologist | Role::Supervisor) {
            return Err(Error::Unauthorized(format!("a {} cannot annotate lesions", role.as_str())));
        }
        let r = self.get(id)?;
        require("annotate", r.state, &[CaseState::QualityPassed])?;
        let timestamp = self.timestamp_for(Some(id));
        let (annotation, roi_crop) = self.roi_annotation(r, roi, annotator, role, description, timestamp)?;
        self.commit(CaseEvent::Annotated {
            record_id: id.to_string(),
            annotation,
            roi_crop,
        })
    }

    /// Supervisor review of annotation consistency; touches only the
    /// annotation and its ROI crop.
    pub fn revise_annotation(
        &mut self,
        id: &str,
        roi: RoiCircle,
        supervisor: &str,
        role: Role,
        description: Option<String>,
    ) -> Result<CaseRecord> {
        if role != Role::Supervisor {
            return Err(Error::Unauthorized("only a supervisor can revise annotations".into()));
        }
        let r = self.get(id)?;
        require("revise the annotation of", r.state, REVISE_STATES)?;
        let timestamp = self.timestamp_for(Some(id));
        let (annotation, roi_crop) = self.roi_annotation(r, roi, supervisor, role, description, timestamp)?;
        self.commit(CaseEvent::AnnotationRevised {
            record_id: id.to_string(),
            annotation,
            roi_crop,
        })
    }

    /// ROI crop of the latest capture, the classifier input.
    pub fn roi_image(&self, id: &str) -> Result<ImageBuffer> {
        let r = self.get(id)?;
        let roi = r
            .latest_capture()
            .and_then(|c| c.roi_crop.as_ref())
            .ok_or_else(|| Error::Validation(format!("case {id} has no annotated region")))?;
        self.blobs.get(roi)
    }

    pub fn issue_prediction(
        &mut self,
        id: &str,
        members: Vec<MemberPrediction>,
        vote: usize,
        fusion: Option<ProbVector>,
        model_version: &str,
    ) -> Result<CaseRecord> {
        let state = self.get(id)?.state;
        require("issue a prediction for", state, PREDICT_STATES)?;
        let n_c = self.taxonomy.len();
        let input = EnsembleInput::new(members.iter().map(|m| m.probs.clone()).collect())?;
        if input.n_classes() != n_c || fusion.as_ref().is_some_and(|f| f.len() != n_c) || vote >= n_c {
            return Err(Error::Shape(format!("prediction does not match the {n_c}-class taxonomy")));
        }
        let class_index = fusion.as_ref().map_or(vote, |f| f.argmax());
        let risk = self.taxonomy.risk_of_index(class_index)?;
        let preliminary = Preliminary {
            members,
            vote,
            fusion,
            class_index,
            label: self.taxonomy.name(class_index)?.to_string(),
            risk,
            binary_risk: risk.binary(),
            model_version: model_version.to_string(),
            timestamp: self.timestamp_for(Some(id)),
        };
        self.commit(CaseEvent::PredictionIssued {
            record_id: id.to_string(),
            preliminary,
        })
    }

    pub fn record_feedback(
        &mut self,
        id: &str,
        verdict: FeedbackVerdict,
        hypothesis: Option<String>,
        clinician: &str,
    ) -> Result<CaseRecord> {
        let state = self.get(id)?.state;
        let entry = FeedbackEntry {
            verdict,
            hypothesis: hypothesis.map(|h| h.trim().to_string()).filter(|h| !h.is_empty()),
            clinician: clinician.to_string(),
            timestamp: self.timestamp_for(Some(id)),
        };
        entry.validate()?;
        require("record feedback on", state, FEEDBACK_STATES)?;
        self.commit(CaseEvent::FeedbackRecorded {
            record_id: id.to_string(),
            entry,
        })
    }

    /// Idempotent: flagging a case already awaiting biopsy changes nothing.
    pub fn flag_malignant_suspect(&mut self, id: &str) -> Result<CaseRecord> {
        let r = self.get(id)?;
        if r.state == CaseState::BiopsyPending && r.malignant_suspect {
            return Ok(r.clone());
        }
        require("flag", r.state, FLAG_STATES)?;
        let timestamp = self.timestamp_for(Some(id));
        self.commit(CaseEvent::Flagged {
            record_id: id.to_string(),
            timestamp,
        })
    }

    /// Biopsy for a lesion nobody flagged, recorded in the audit trail.
    pub fn order_biopsy(&mut self, id: &str, supervisor: &str, role: Role, note: &str) -> Result<CaseRecord> {
        if role != Role::Supervisor {
            return Err(Error::Unauthorized("only a supervisor can order an unflagged biopsy".into()));
        }
        if note.trim().is_empty() {
            return Err(Error::Validation("biopsy order needs a note".into()));
        }
        let state = self.get(id)?.state;
        require("order a biopsy for", state, FLAG_STATES)?;
        let timestamp = self.timestamp_for(Some(id));
        self.commit(CaseEvent::BiopsyOrdered {
            record_id: id.to_string(),
            by: supervisor.to_string(),
            note: note.trim().to_string(),
            timestamp,
        })
    }

    pub fn attach_histopathology(&mut self, id: &str, result: &str, final_class: &str) -> Result<CaseRecord> {
        let state = self.get(id)?.state;
        require("attach histopathology to", state, &[CaseState::BiopsyPending])?;
        let final_class = self
            .taxonomy
            .canonical(final_class)
            .map_err(|_| Error::Validation(format!("final class `{final_class}` is not in the taxonomy")))?
            .to_string();
        let timestamp = self.timestamp_for(Some(id));
        self.commit(CaseEvent::HistopathologyAttached {
            record_id: id.to_string(),
            histopathology: Histopathology {
                result: result.to_string(),
                final_class,
                timestamp,
            },
        })
    }

    pub fn close(&mut self, id: &str, supervisor: &str, role: Role) -> Result<CaseRecord> {
        if role != Role::Supervisor {
            return Err(Error::Unauthorized("only a supervisor can close a case".into()));
        }
        let state = self.get(id)?.state;
        require("close", state, &[CaseState::Confirmed])?;
        let timestamp = self.timestamp_for(Some(id));
        self.commit(CaseEvent::Closed {
            record_id: id.to_string(),
            by: supervisor.to_string(),
            timestamp,
        })
    }

    /// Adds an externally labelled image as a case whose label is
    /// preliminary. `record_id` is kept when free, otherwise a fresh id is
    /// assigned.
    #[allow(clippy::too_many_arguments)]
    pub fn import_case(
        &mut self,
        record_id: Option<&str>,
        lesion_id: Option<&str>,
        patient: PatientMeta,
        image: &ImageBuffer,
        device: DeviceMeta,
        label: &str,
        source: &str,
    ) -> Result<CaseRecord> {
        let patient = patient.validated()?;
        device.validate()?;
        let class_index = self.taxonomy.index_of(label)?;
        let record_id = match record_id {
            Some(r) if !r.trim().is_empty() && !self.records.contains_key(r) => r.to_string(),
            _ => self.fresh_id(),
        };
        let lesion_id = lesion_id
            .filter(|l| !l.trim().is_empty())
            .map_or_else(|| record_id.clone(), str::to_string);
        let timestamp = self.timestamp_for(None);
        let crop_rect = center_square_rect(image.width(), image.height(), CropSpec::default())?;
        let stored = self.blobs.put(image)?;
        let risk = self.taxonomy.risk_of_index(class_index)?;
        let capture = Capture {
            original: stored.clone(),
            cropped: if crop_rect.side == image.width() && crop_rect.side == image.height() {
                stored
            } else {
                self.blobs.put(&center_square_crop(image, CropSpec::default())?)?
            },
            crop_rect,
            device,
            report: QualityReport::from_scores([0.0; 4], [0.5; 4]),
            timestamp,
            override_note: None,
            roi_crop: None,
        };
        let preliminary = Preliminary {
            members: Vec::new(),
            vote: class_index,
            fusion: None,
            class_index,
            label: self.taxonomy.name(class_index)?.to_string(),
            risk,
            binary_risk: risk.binary(),
            model_version: format!("import:{source}"),
            timestamp,
        };
        self.commit(CaseEvent::Imported {
            record_id,
            lesion_id,
            patient,
            capture,
            preliminary,
            source: source.to_string(),
        })
    }
}

fn apply_to(records: &mut BTreeMap<String, CaseRecord>, ev: &CaseEvent) -> Result<()> {
    if let Some(fresh) = ev.genesis() {
        if records.contains_key(&fresh.record_id) {
            return Err(Error::Validation(format!("record {} already exists", fresh.record_id)));
        }
        records.insert(fresh.record_id.clone(), fresh);
        return Ok(());
    }
    let r = records
        .get_mut(ev.record_id())
        .ok_or_else(|| Error::NotFound(format!("case {}", ev.record_id())))?;
    ev.apply(r)
}
