//! Trainable no-reference quality gate.
//!
//! A capture is described by [`QualityFeatures`]; a small head maps the
//! standardized features to four independent defect probabilities ordered
//! `[sharpness, blur, exposure, compression]`. Each score above its
//! threshold flags a defect, and any flag turns the verdict into a
//! recapture request listing the defects by descending score.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{apply_distortion, quality_features, DistortionKind, DistortionSpec, ImageBuffer, QualityFeatures};
use crate::modelfile::{self, ModelReader, ModelWriter};
use crate::nn::{Activation, HiddenSpec, Mlp, OutputKind, Standardizer, TrainConfig, TrainLog};

pub const INDICATOR_COUNT: usize = 4;
pub const DROPOUT_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Sharpness,
    Blur,
    Exposure,
    Compression,
}

impl Indicator {
    pub const ALL: [Indicator; INDICATOR_COUNT] =
        [Indicator::Sharpness, Indicator::Blur, Indicator::Exposure, Indicator::Compression];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::Sharpness => "sharpness",
            Indicator::Blur => "blur",
            Indicator::Exposure => "exposure",
            Indicator::Compression => "compression",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Indicator supervised by a synthetic distortion kind.
    pub fn for_distortion(kind: DistortionKind) -> Self {
        match kind {
            DistortionKind::SharpnessLoss => Indicator::Sharpness,
            DistortionKind::Blur => Indicator::Blur,
            DistortionKind::Exposure => Indicator::Exposure,
            DistortionKind::Compression => Indicator::Compression,
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Recapture { reasons: Vec<Indicator> },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn reasons(&self) -> &[Indicator] {
        match self {
            Verdict::Pass => &[],
            Verdict::Recapture { reasons } => reasons,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub scores: [f64; INDICATOR_COUNT],
    pub thresholds: [f64; INDICATOR_COUNT],
    pub flags: [bool; INDICATOR_COUNT],
    pub verdict: Verdict,
}

impl QualityReport {
    /// Derives flags and verdict from scores and thresholds.
    pub fn from_scores(scores: [f64; INDICATOR_COUNT], thresholds: [f64; INDICATOR_COUNT]) -> Self {
        let flags = std::array::from_fn(|i| scores[i] > thresholds[i]);
        let mut report = Self {
            scores,
            thresholds,
            flags,
            verdict: Verdict::Pass,
        };
        report.verdict = gate(&report);
        report
    }

    pub fn score(&self, indicator: Indicator) -> f64 {
        self.scores[indicator.index()]
    }

    /// Flags agree with scores/thresholds and the verdict agrees with the flags.
    pub fn is_consistent(&self) -> bool {
        (0..INDICATOR_COUNT).all(|i| self.flags[i] == (self.scores[i] > self.thresholds[i]))
            && self.verdict == gate(self)
    }
}

/// Pass iff nothing is flagged; otherwise the flagged indicators by
/// descending score, ties in indicator order.
pub fn gate(report: &QualityReport) -> Verdict {
    let mut flagged: Vec<Indicator> = Indicator::ALL
        .into_iter()
        .filter(|i| report.scores[i.index()] > report.thresholds[i.index()])
        .collect();
    if flagged.is_empty() {
        return Verdict::Pass;
    }
    flagged.sort_by(|a, b| {
        report.scores[b.index()]
            .total_cmp(&report.scores[a.index()])
            .then(a.cmp(b))
    });
    Verdict::Recapture { reasons: flagged }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub thresholds: [f64; INDICATOR_COUNT],
    /// Hidden width of the head; `None` is a single linear layer.
    pub hidden_width: Option<usize>,
}

impl Default for QualityTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 300,
            batch_size: 32,
            seed: 0,
            thresholds: [0.5; INDICATOR_COUNT],
            hidden_width: Some(16),
        }
    }
}

impl QualityTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        validate_thresholds(&self.thresholds)?;
        if self.hidden_width == Some(0) {
            return Err(Error::Training("hidden width must be positive".into()));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

pub fn validate_thresholds(t: &[f64; INDICATOR_COUNT]) -> Result<()> {
    if t.iter().all(|v| *v > 0.0 && *v < 1.0) {
        Ok(())
    } else {
        Err(Error::Validation(format!("thresholds must lie in (0, 1): {t:?}")))
    }
}

/// Magnitudes used when no grid is supplied: several severities per kind.
pub fn default_distortion_grid() -> Vec<DistortionSpec> {
    let g = |kind, magnitude| DistortionSpec { kind, magnitude };
    vec![
        g(DistortionKind::SharpnessLoss, 3.0),
        g(DistortionKind::SharpnessLoss, 5.0),
        g(DistortionKind::Blur, 2.0),
        g(DistortionKind::Blur, 3.5),
        g(DistortionKind::Blur, 5.0),
        g(DistortionKind::Exposure, 0.35),
        g(DistortionKind::Exposure, 2.2),
        g(DistortionKind::Exposure, 2.8),
        g(DistortionKind::Compression, 40.0),
        g(DistortionKind::Compression, 80.0),
    ]
}

/// One supervised sample: features and the four 0/1 indicator targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: QualityFeatures,
    pub labels: [f64; INDICATOR_COUNT],
    pub distortion: Option<DistortionSpec>,
}

/// Clean images with all-zero labels plus one distorted variant per
/// (image, grid entry) labelled on the matching indicator only.
pub fn build_training_set(clean: &[ImageBuffer], grid: &[DistortionSpec]) -> Result<Vec<LabeledSample>> {
    if clean.is_empty() {
        return Err(Error::Training("clean corpus is empty".into()));
    }
    for kind in DistortionKind::ALL {
        if !grid.iter().any(|s| s.kind == kind) {
            return Err(Error::Training(format!("distortion grid has no `{kind}` entry")));
        }
    }
    for spec in grid {
        spec.validate()?;
    }
    let mut out = Vec::with_capacity(clean.len() * (grid.len() + 1));
    for img in clean {
        out.push(LabeledSample {
            features: quality_features(img)?,
            labels: [0.0; INDICATOR_COUNT],
            distortion: None,
        });
        for spec in grid {
            let mut labels = [0.0; INDICATOR_COUNT];
            labels[Indicator::for_distortion(spec.kind).index()] = 1.0;
            out.push(LabeledSample {
                features: quality_features(&apply_distortion(img, *spec)?)?,
                labels,
                distortion: Some(*spec),
            });
        }
    }
    Ok(out)
}

fn model_input(f: &QualityFeatures) -> Vec<f64> {
    f.log_scaled().to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    normalization: Standardizer,
    head: Mlp,
    thresholds: [f64; INDICATOR_COUNT],
    final_loss: f64,
}

impl QualityModel {
    /// Builds an untrained model with explicit parts (fixtures, tests).
    pub fn from_parts(
        normalization: Standardizer,
        head: Mlp,
        thresholds: [f64; INDICATOR_COUNT],
    ) -> Result<Self> {
        validate_thresholds(&thresholds)?;
        if head.inputs() != QualityFeatures::DIM || head.outputs() != INDICATOR_COUNT {
            return Err(Error::Shape(format!(
                "quality head must map {} features to {INDICATOR_COUNT} outputs",
                QualityFeatures::DIM
            )));
        }
        if head.kind != OutputKind::MultiLabel {
            return Err(Error::Shape("quality head must use sigmoid outputs".into()));
        }
        if normalization.mean.len() != QualityFeatures::DIM || normalization.std.len() != QualityFeatures::DIM {
            return Err(Error::Shape("normalization width must match the feature vector".into()));
        }
        Ok(Self {
            normalization,
            head,
            thresholds,
            final_loss: f64::NAN,
        })
    }

    pub fn thresholds(&self) -> [f64; INDICATOR_COUNT] {
        self.thresholds
    }

    pub fn with_thresholds(mut self, thresholds: [f64; INDICATOR_COUNT]) -> Result<Self> {
        validate_thresholds(&thresholds)?;
        self.thresholds = thresholds;
        Ok(self)
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn normalization(&self) -> &Standardizer {
        &self.normalization
    }

    /// Standardized head input for a feature vector.
    pub fn encode(&self, f: &QualityFeatures) -> Vec<f64> {
        self.normalization.apply(&model_input(f))
    }

    pub fn scores(&self, f: &QualityFeatures) -> [f64; INDICATOR_COUNT] {
        let p = self.head.predict(&self.encode(f));
        std::array::from_fn(|i| p[i])
    }

    pub fn assess_features(&self, f: &QualityFeatures) -> QualityReport {
        QualityReport::from_scores(self.scores(f), self.thresholds)
    }

    pub fn to_text(&self) -> String {
        let mut w = ModelWriter::new("quality");
        w.line("features", QualityFeatures::NAMES);
        w.line(
            "feature_transform",
            ["log1p", "log1p", "identity", "identity", "identity", "identity", "log1p"],
        );
        w.line("indicators", Indicator::ALL.map(Indicator::as_str));
        w.floats("thresholds", &self.thresholds);
        w.floats("norm.mean", &self.normalization.mean);
        w.floats("norm.std", &self.normalization.std);
        w.floats("final_loss", &[if self.final_loss.is_finite() { self.final_loss } else { 0.0 }]);
        w.mlp("head", &self.head);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let r = ModelReader::parse(text, "quality")?;
        if r.values("features")? != QualityFeatures::NAMES {
            return Err(Error::ModelFormat("feature order differs from this build".into()));
        }
        let t = r.floats("thresholds")?;
        let thresholds: [f64; INDICATOR_COUNT] = t
            .try_into()
            .map_err(|_| Error::ModelFormat("expected four thresholds".into()))?;
        let normalization = Standardizer {
            mean: r.floats("norm.mean")?,
            std: r.floats("norm.std")?,
        };
        let mut model = Self::from_parts(normalization, r.mlp("head")?, thresholds)?;
        model.final_loss = r.floats("final_loss")?.first().copied().unwrap_or(f64::NAN);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        modelfile::write_file(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Fitted model together with its training trace.
#[derive(Debug, Clone)]
pub struct TrainedQuality {
    pub model: QualityModel,
    pub log: TrainLog,
}

pub fn train_quality_model(
    clean_corpus: &[ImageBuffer],
    distortion_grid: &[DistortionSpec],
    cfg: &QualityTrainConfig,
) -> Result<TrainedQuality> {
    cfg.validate()?;
    let samples = build_training_set(clean_corpus, distortion_grid)?;
    train_on_samples(&samples, cfg)
}

pub fn train_on_samples(samples: &[LabeledSample], cfg: &QualityTrainConfig) -> Result<TrainedQuality> {
    cfg.validate()?;
    let raw: Vec<Vec<f64>> = samples.iter().map(|s| model_input(&s.features)).collect();
    let normalization = Standardizer::fit(&raw)?;
    let xs: Vec<Vec<f64>> = raw.iter().map(|x| normalization.apply(x)).collect();
    let ts: Vec<Vec<f64>> = samples.iter().map(|s| s.labels.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = cfg.hidden_width.map(|width| HiddenSpec {
        width,
        activation: Activation::Silu,
        dropout: DROPOUT_RATE,
    });
    let mut head = Mlp::new(QualityFeatures::DIM, hidden, INDICATOR_COUNT, OutputKind::MultiLabel, &mut rng)?;
    let log = head.fit(&xs, &ts, &cfg.train_config())?;
    let mut model = QualityModel::from_parts(normalization, head, cfg.thresholds)?;
    model.final_loss = log.final_loss();
    Ok(TrainedQuality { model, log })
}

/// Scores one capture in inference mode.
pub fn assess(model: &QualityModel, img: &ImageBuffer) -> Result<QualityReport> {
    Ok(model.assess_features(&quality_features(img)?))
}
