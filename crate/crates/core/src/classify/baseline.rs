//! Desk-scale lesion classifier: pooled hand-crafted features followed by a
//! single fully connected layer and softmax, trained with categorical
//! cross-entropy. Stands behind [`LesionClassifier`] so learned backbones
//! can replace it without touching callers.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassEntry, ClassTaxonomy, LesionClassifier, ProbVector, RiskTier};
use crate::error::{Error, Result};
use crate::imaging::{quality_features, ImageBuffer, QualityFeatures};
use crate::modelfile::{self, ModelReader, ModelWriter};
use crate::nn::{Mlp, OutputKind, Standardizer, TrainConfig, TrainLog};

const GRID: u32 = 3;
pub const BASELINE_FEATURE_DIM: usize = QualityFeatures::DIM + (GRID * GRID * 3) as usize;

/// Quality descriptors followed by the mean RGB of each cell of a 3x3 grid
/// (row-major, values scaled to [0, 1]).
pub fn baseline_features(img: &ImageBuffer) -> Result<Vec<f64>> {
    let mut v = quality_features(img)?.log_scaled().to_vec();
    let (w, h) = (img.width(), img.height());
    for gy in 0..GRID {
        let (y0, y1) = (gy * h / GRID, (gy + 1) * h / GRID);
        for gx in 0..GRID {
            let (x0, x1) = (gx * w / GRID, (gx + 1) * w / GRID);
            let mut acc = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c] as u64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64 * 255.0;
            v.extend(acc.iter().map(|&a| a as f64 / n));
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineClassifier {
    taxonomy: ClassTaxonomy,
    normalization: Standardizer,
    net: Mlp,
    final_loss: f64,
}

impl BaselineClassifier {
    pub fn from_parts(taxonomy: ClassTaxonomy, normalization: Standardizer, net: Mlp) -> Result<Self> {
        if net.inputs() != BASELINE_FEATURE_DIM || net.outputs() != taxonomy.len() || net.kind != OutputKind::Categorical {
            return Err(Error::Shape(format!(
                "baseline net must be a softmax map {BASELINE_FEATURE_DIM} -> {}",
                taxonomy.len()
            )));
        }
        Ok(Self {
            taxonomy,
            normalization,
            net,
            final_loss: f64::NAN,
        })
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn encode(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(self.normalization.apply(&baseline_features(img)?))
    }

    pub fn to_text(&self) -> String {
        let mut w = ModelWriter::new("baseline");
        w.line("classes", self.taxonomy.names());
        w.line("risks", self.taxonomy.classes().iter().map(|c| c.risk.as_str()));
        for (i, c) in self.taxonomy.classes().iter().enumerate() {
            w.line(&format!("aliases.{i}"), &c.aliases);
        }
        w.floats("norm.mean", &self.normalization.mean);
        w.floats("norm.std", &self.normalization.std);
        w.floats("final_loss", &[if self.final_loss.is_finite() { self.final_loss } else { 0.0 }]);
        w.mlp("net", &self.net);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let r = ModelReader::parse(text, "baseline")?;
        let names = r.values("classes")?;
        let risks = r.values("risks")?;
        if names.len() != risks.len() {
            return Err(Error::ModelFormat("classes and risks differ in length".into()));
        }
        let mut classes = Vec::with_capacity(names.len());
        for (i, (name, risk)) in names.iter().zip(risks).enumerate() {
            classes.push(ClassEntry {
                name: name.clone(),
                aliases: r.values(&format!("aliases.{i}"))?.to_vec(),
                risk: RiskTier::parse(risk)?,
            });
        }
        let taxonomy = ClassTaxonomy::new(classes)?;
        let normalization = Standardizer {
            mean: r.floats("norm.mean")?,
            std: r.floats("norm.std")?,
        };
        if normalization.mean.len() != BASELINE_FEATURE_DIM || normalization.std.len() != BASELINE_FEATURE_DIM {
            return Err(Error::ModelFormat("normalization width mismatch".into()));
        }
        let mut model = Self::from_parts(taxonomy, normalization, r.mlp("net")?)?;
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

impl LesionClassifier for BaselineClassifier {
    fn n_classes(&self) -> usize {
        self.taxonomy.len()
    }

    fn predict(&self, img: &ImageBuffer) -> Result<ProbVector> {
        let p = self.net.predict(&self.encode(img)?);
        // softmax sums to 1 only up to rounding
        let s: f64 = p.iter().sum();
        ProbVector::new(p.into_iter().map(|v| v / s).collect())
    }
}

/// Trains on `(crop, class index)` pairs. Every class must be present.
pub fn train_baseline(
    dataset: &[(ImageBuffer, usize)],
    taxonomy: &ClassTaxonomy,
    cfg: &BaselineTrainConfig,
) -> Result<(BaselineClassifier, TrainLog)> {
    let n_c = taxonomy.len();
    let mut seen = vec![false; n_c];
    for (_, label) in dataset {
        if *label >= n_c {
            return Err(Error::Training(format!("label {label} out of range for {n_c} classes")));
        }
        seen[*label] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Training(format!(
            "class `{}` has no training samples",
            taxonomy.name(missing)?
        )));
    }
    let raw = dataset
        .iter()
        .map(|(img, _)| baseline_features(img))
        .collect::<Result<Vec<_>>>()?;
    let normalization = Standardizer::fit(&raw)?;
    let xs: Vec<Vec<f64>> = raw.iter().map(|x| normalization.apply(x)).collect();
    let ts: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(_, l)| {
            let mut t = vec![0.0; n_c];
            t[*l] = 1.0;
            t
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::new(BASELINE_FEATURE_DIM, None, n_c, OutputKind::Categorical, &mut rng)?;
    let log = net.fit(
        &xs,
        &ts,
        &TrainConfig {
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        },
    )?;
    let mut model = BaselineClassifier::from_parts(taxonomy.clone(), normalization, net)?;
    model.final_loss = log.final_loss();
    Ok((model, log))
}
