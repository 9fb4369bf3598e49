//! Request handling shared by the HTTP API and the `case` CLI verbs.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use dermtriage_core::classify::{BinaryRisk, ClassTaxonomy, ProbVector, RiskTier};
use dermtriage_core::datastore::{render_images, render_manifest, summarize, Dataset, DatasetSummary, MANIFEST_FILE};
use dermtriage_core::imaging::{center_square_crop, center_square_rect, ImageBuffer, ImageRef, Rect, RoiCircle};
use dermtriage_core::quality::{assess, QualityReport, Verdict, INDICATOR_COUNT};
use dermtriage_core::workflow::{
    require, CaseRecord, CaseState, CaseStore, DeviceMeta, FeedbackVerdict, MemberPrediction, PatientMeta, Role,
    PREDICT_STATES,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, ModelPaths};
use crate::error::ApiError;
use crate::registry::{ModelRegistry, RegistryInfo};

pub type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateCase {
    #[serde(flatten)]
    pub patient: PatientMeta,
    #[serde(default)]
    pub lesion_id: Option<String>,
}

/// The `metadata` part of a capture upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub device: DeviceMeta,
    /// Store the capture even if the quality gate fails.
    #[serde(default, rename = "override")]
    pub override_quality: bool,
    #[serde(default)]
    pub override_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub roi: RoiCircle,
    pub annotator: String,
    pub role: Role,
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub verdict: FeedbackVerdict,
    #[serde(default)]
    pub hypothesis: Option<String>,
    pub clinician: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiopsyOrderRequest {
    pub supervisor: String,
    pub role: Role,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistopathologyRequest {
    pub result: String,
    pub final_class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseRequest {
    pub supervisor: String,
    pub role: Role,
}

/// Framing of the stored crop inside the uploaded image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub image_width: u32,
    pub image_height: u32,
    pub crop: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureResult {
    pub record_id: String,
    pub accepted: bool,
    pub state: CaseState,
    pub verdict: Verdict,
    pub report: QualityReport,
    pub preview: Preview,
    pub original: Option<ImageRef>,
    pub cropped: Option<ImageRef>,
    pub override_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPayload {
    pub record_id: String,
    pub state: CaseState,
    pub members: Vec<MemberPrediction>,
    pub vote: usize,
    pub vote_label: String,
    pub fusion: Option<ProbVector>,
    pub class_index: usize,
    pub label: String,
    pub risk: RiskTier,
    pub binary_risk: BinaryRisk,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub record_id: String,
    pub lesion_id: String,
    pub state: CaseState,
    /// Flagged or ordered for biopsy; these sort first.
    pub biopsy_priority: bool,
    pub malignant_suspect: bool,
    pub label: Option<String>,
    pub risk: Option<RiskTier>,
    pub binary_risk: Option<BinaryRisk>,
    pub final_class: Option<String>,
    pub recaptures: usize,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub by_state: BTreeMap<String, usize>,
    /// Labelled cases as an exportable dataset.
    pub labelled: DatasetSummary,
}

struct Inner {
    store: CaseStore,
    idempotency: HashMap<(String, String), ApiResult<CaptureResult>>,
}

struct Reload {
    paths: ModelPaths,
    thresholds: Option<[f64; INDICATOR_COUNT]>,
}

/// One case store plus the model registry. Writes go through a single lock;
/// inference runs outside it.
pub struct Service {
    inner: Mutex<Inner>,
    models: RwLock<Arc<ModelRegistry>>,
    reload: Option<Reload>,
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// PNG through the core codec (bit-exact); JPEG through `image`.
pub fn decode_image(bytes: &[u8]) -> ApiResult<ImageBuffer> {
    if bytes.starts_with(PNG_SIGNATURE) {
        return ImageBuffer::decode_png(bytes).map_err(|e| ApiError::validation(format!("undecodable image: {e}")));
    }
    let img = image::load_from_memory(bytes)
        .map_err(|e| ApiError::validation(format!("undecodable image: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImageBuffer::new(w, h, img.into_raw())?)
}

fn quality_rejected(record: &CaseRecord, report: &QualityReport, preview: Preview) -> ApiError {
    let reasons: Vec<&str> = report.verdict.reasons().iter().map(|r| r.as_str()).collect();
    ApiError::new(
        422,
        "quality_rejected",
        format!("recapture needed: {}", reasons.join(", ")),
    )
    .with_details(json!({
        "record_id": record.record_id,
        "state": record.state,
        "reasons": reasons,
        "report": report,
        "preview": preview,
    }))
}

fn rank_key(r: &CaseRecord) -> (bool, bool, u64) {
    let priority = r.malignant_suspect || r.state == CaseState::BiopsyPending;
    let malignant = r
        .preliminary
        .as_ref()
        .is_some_and(|p| p.binary_risk == BinaryRisk::PotentiallyMalignant);
    (!priority, !malignant, r.updated_at)
}

impl Service {
    pub fn new(store: CaseStore, models: ModelRegistry) -> Self {
        Self {
            inner: Mutex::new(Inner {
                store,
                idempotency: HashMap::new(),
            }),
            models: RwLock::new(Arc::new(models)),
            reload: None,
        }
    }

    /// Opens the store directory and loads the configured models.
    pub fn from_config(cfg: &Config) -> dermtriage_core::Result<Self> {
        let taxonomy = cfg.taxonomy.taxonomy();
        let store = CaseStore::open(&cfg.storage_dir, taxonomy.clone(), cfg.store_config()?)?;
        let models = ModelRegistry::load(&cfg.models, &taxonomy, cfg.thresholds)?;
        let mut svc = Self::new(store, models);
        svc.reload = Some(Reload {
            paths: cfg.models.clone(),
            thresholds: cfg.thresholds,
        });
        Ok(svc)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn models(&self) -> Arc<ModelRegistry> {
        self.models.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn taxonomy(&self) -> ClassTaxonomy {
        self.lock().store.taxonomy().clone()
    }

    pub fn model_info(&self) -> RegistryInfo {
        self.models().info()
    }

    /// Re-reads the configured model files and swaps them in at once.
    pub fn reload_models(&self) -> ApiResult<RegistryInfo> {
        let spec = self
            .reload
            .as_ref()
            .ok_or_else(|| ApiError::new(409, "not_reloadable", "models were not loaded from files"))?;
        let taxonomy = self.taxonomy();
        let fresh = ModelRegistry::load(&spec.paths, &taxonomy, spec.thresholds)?;
        let info = fresh.info();
        *self.models.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(fresh);
        Ok(info)
    }

    pub fn create_case(&self, req: CreateCase) -> ApiResult<CaseRecord> {
        Ok(self.lock().store.create_case(req.patient, req.lesion_id)?)
    }

    pub fn get_case(&self, id: &str) -> ApiResult<CaseRecord> {
        Ok(self.lock().store.get(id)?.clone())
    }

    /// Decode, crop, assess, gate, store. A repeated `idempotency_key` for
    /// the same case returns the first outcome unchanged.
    pub fn submit_capture(
        &self,
        id: &str,
        bytes: &[u8],
        meta: CaptureMeta,
        idempotency_key: Option<&str>,
    ) -> ApiResult<CaptureResult> {
        let key = idempotency_key.map(|k| (id.to_string(), k.to_string()));
        let crop_spec = {
            let inner = self.lock();
            if let Some(hit) = key.as_ref().and_then(|k| inner.idempotency.get(k)) {
                return hit.clone();
            }
            inner.store.get(id)?;
            inner.store.config().crop
        };
        let img = decode_image(bytes)?;
        let preview = Preview {
            image_width: img.width(),
            image_height: img.height(),
            crop: center_square_rect(img.width(), img.height(), crop_spec)?,
        };
        let cropped = center_square_crop(&img, crop_spec)?;
        let models = self.models();
        let quality = models
            .quality()
            .ok_or_else(|| ApiError::new(503, "model_unavailable", "no quality model is registered"))?;
        let report = assess(quality, &cropped)?;

        let mut inner = self.lock();
        if let Some(hit) = key.as_ref().and_then(|k| inner.idempotency.get(k)) {
            return hit.clone();
        }
        let override_reason = meta
            .override_quality
            .then(|| meta.override_reason.clone().unwrap_or_default());
        let result = inner
            .store
            .attach_capture(id, &img, meta.device, report.clone(), override_reason.as_deref())
            .map_err(ApiError::from)
            .and_then(|outcome| {
                let r = outcome.record;
                if !outcome.accepted {
                    return Err(quality_rejected(&r, &report, preview));
                }
                let capture = r.latest_capture();
                Ok(CaptureResult {
                    record_id: r.record_id.clone(),
                    accepted: true,
                    state: r.state,
                    verdict: report.verdict.clone(),
                    report,
                    preview,
                    original: capture.map(|c| c.original.clone()),
                    cropped: capture.map(|c| c.cropped.clone()),
                    override_note: capture.and_then(|c| c.override_note.clone()),
                })
            });
        if let Some(k) = key {
            inner.idempotency.insert(k, result.clone());
        }
        result
    }

    pub fn annotate(&self, id: &str, req: AnnotateRequest) -> ApiResult<CaseRecord> {
        Ok(self
            .lock()
            .store
            .annotate(id, req.roi, &req.annotator, req.role, req.description)?)
    }

    pub fn revise_annotation(&self, id: &str, req: AnnotateRequest) -> ApiResult<CaseRecord> {
        Ok(self
            .lock()
            .store
            .revise_annotation(id, req.roi, &req.annotator, req.role, req.description)?)
    }

    /// Runs every registered classifier on the ROI crop and records the result.
    pub fn predict_case(&self, id: &str) -> ApiResult<PredictionPayload> {
        let models = self.models();
        let roi = {
            let inner = self.lock();
            let r = inner.store.get(id)?;
            if models.members().is_empty() {
                return Err(ApiError::validation("no classifiers are registered"));
            }
            require("issue a prediction for", r.state, PREDICT_STATES)?;
            inner.store.roi_image(id)?
        };
        let out = models.classify(&roi)?;
        let record = self
            .lock()
            .store
            .issue_prediction(id, out.members, out.vote, out.fusion, &out.model_version)?;
        let p = record
            .preliminary
            .as_ref()
            .ok_or_else(|| ApiError::internal("prediction was not stored"))?;
        let taxonomy = self.taxonomy();
        Ok(PredictionPayload {
            record_id: record.record_id.clone(),
            state: record.state,
            members: p.members.clone(),
            vote: p.vote,
            vote_label: taxonomy.name(p.vote)?.to_string(),
            fusion: p.fusion.clone(),
            class_index: p.class_index,
            label: p.label.clone(),
            risk: p.risk,
            binary_risk: p.binary_risk,
            model_version: p.model_version.clone(),
        })
    }

    pub fn record_feedback(&self, id: &str, req: FeedbackRequest) -> ApiResult<CaseRecord> {
        Ok(self
            .lock()
            .store
            .record_feedback(id, req.verdict, req.hypothesis, &req.clinician)?)
    }

    pub fn flag(&self, id: &str) -> ApiResult<CaseRecord> {
        Ok(self.lock().store.flag_malignant_suspect(id)?)
    }

    pub fn order_biopsy(&self, id: &str, req: BiopsyOrderRequest) -> ApiResult<CaseRecord> {
        Ok(self.lock().store.order_biopsy(id, &req.supervisor, req.role, &req.note)?)
    }

    pub fn attach_histopathology(&self, id: &str, req: HistopathologyRequest) -> ApiResult<CaseRecord> {
        Ok(self
            .lock()
            .store
            .attach_histopathology(id, &req.result, &req.final_class)?)
    }

    pub fn close(&self, id: &str, req: CloseRequest) -> ApiResult<CaseRecord> {
        Ok(self.lock().store.close(id, &req.supervisor, req.role)?)
    }

    /// Cases in the given states (comma separated; default every open
    /// state), biopsy priority first, then potentially malignant
    /// predictions, then oldest update.
    pub fn review_queue(&self, states: Option<&str>) -> ApiResult<Vec<QueueItem>> {
        let wanted: Vec<CaseState> = match states.map(str::trim).filter(|s| !s.is_empty()) {
            Some(list) => list
                .split(',')
                .map(|s| CaseState::parse(s.trim()))
                .collect::<dermtriage_core::Result<_>>()?,
            None => CaseState::ALL
                .iter()
                .copied()
                .filter(|s| *s != CaseState::Closed)
                .collect(),
        };
        let inner = self.lock();
        let mut records: Vec<&CaseRecord> = inner.store.records().filter(|r| wanted.contains(&r.state)).collect();
        records.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)).then_with(|| a.record_id.cmp(&b.record_id)));
        Ok(records
            .into_iter()
            .map(|r| QueueItem {
                record_id: r.record_id.clone(),
                lesion_id: r.lesion_id.clone(),
                state: r.state,
                biopsy_priority: r.malignant_suspect || r.state == CaseState::BiopsyPending,
                malignant_suspect: r.malignant_suspect,
                label: r.preliminary.as_ref().map(|p| p.label.clone()),
                risk: r.preliminary.as_ref().map(|p| p.risk),
                binary_risk: r.preliminary.as_ref().map(|p| p.binary_risk),
                final_class: r.histopathology.as_ref().map(|h| h.final_class.clone()),
                recaptures: r.recapture_count(),
                updated_at: r.updated_at,
            })
            .collect())
    }

    pub fn summary(&self) -> ApiResult<Summary> {
        let inner = self.lock();
        let mut by_state: BTreeMap<String, usize> = CaseState::ALL.iter().map(|s| (s.to_string(), 0)).collect();
        for r in inner.store.records() {
            *by_state.entry(r.state.to_string()).or_default() += 1;
        }
        Ok(Summary {
            cases: inner.store.len(),
            by_state,
            labelled: summarize(&Dataset::from_cases(&inner.store)?),
        })
    }

    /// Labelled cases as a tar archive holding the manifest and its images.
    pub fn export_archive(&self) -> ApiResult<Vec<u8>> {
        let dataset = Dataset::from_cases(&self.lock().store)?;
        let manifest = render_manifest(&dataset)?;
        let images = render_images(&dataset)?;
        let mut tar = tar::Builder::new(Vec::new());
        let mut add = |path: &str, data: &[u8]| -> std::io::Result<()> {
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_cksum();
            tar.append_data(&mut header, path, data)
        };
        let io = |e: std::io::Error| ApiError::internal(format!("building archive: {e}"));
        add(MANIFEST_FILE, manifest.as_bytes()).map_err(io)?;
        for (path, png) in &images {
            add(path, png).map_err(io)?;
        }
        tar.into_inner().map_err(io)
    }

    /// Every stored case, in id order.
    pub fn cases(&self) -> Vec<CaseRecord> {
        self.lock().store.records().cloned().collect()
    }
}
