//! Lesion taxonomy, risk tiers, probability vectors and classifiers.

mod baseline;
mod external;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;

pub use baseline::{baseline_features, train_baseline, BaselineClassifier, BaselineTrainConfig, BASELINE_FEATURE_DIM};
pub use external::ProbabilityTable;
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskTier {
    Benign,
    PreMalignant,
    Malignant,
}

impl RiskTier {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskTier::Benign => "benign",
            RiskTier::PreMalignant => "pre-malignant",
            RiskTier::Malignant => "malignant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" => Ok(RiskTier::Benign),
            "pre-malignant" | "premalignant" | "pre_malignant" => Ok(RiskTier::PreMalignant),
            "malignant" => Ok(RiskTier::Malignant),
            other => Err(Error::Validation(format!("unknown risk tier `{other}`"))),
        }
    }

    /// Two-level view for non-specialist users.
    pub fn binary(self) -> BinaryRisk {
        match self {
            RiskTier::Benign => BinaryRisk::Benign,
            RiskTier::PreMalignant | RiskTier::Malignant => BinaryRisk::PotentiallyMalignant,
        }
    }
}

impl fmt::Display for RiskTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryRisk {
    Benign,
    PotentiallyMalignant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub risk: RiskTier,
}

/// Ordered lesion classes; the position of a class is its label index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    classes: Vec<ClassEntry>,
}

fn normalize(name: &str) -> String {
    name.trim().to_lowercase().replace(['_', '-'], " ")
}

impl ClassTaxonomy {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Validation("a taxonomy needs at least two classes".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            for n in std::iter::once(&c.name).chain(&c.aliases) {
                if let Some(prev) = seen.insert(normalize(n), i) {
                    return Err(Error::Validation(format!(
                        "name `{n}` used by classes {prev} and {i}"
                    )));
                }
            }
        }
        Ok(Self { classes })
    }

    /// The seven clinical classes with their default tiers.
    pub fn dermatology_seven() -> Self {
        let c = |name: &str, aliases: &[&str], risk| ClassEntry {
            name: name.into(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            risk,
        };
        Self::new(vec![
            c("melanoma", &["mel"], RiskTier::Malignant),
            c("basal cell carcinoma", &["bcc"], RiskTier::Malignant),
            c("squamous cell carcinoma", &["scc"], RiskTier::Malignant),
            c("nevus", &["nev"], RiskTier::Benign),
            c("actinic keratosis", &["ack", "ak"], RiskTier::PreMalignant),
            c("benign keratosis", &["seborrheic keratosis", "sek", "bkl"], RiskTier::Benign),
            c("solar lentigo", &[], RiskTier::Benign),
        ])
        .expect("built-in taxonomy is valid")
    }

    /// The six classes shared with the public clinical benchmark
    /// (no solar lentigo).
    pub fn shared_six() -> Self {
        let seven = Self::dermatology_seven();
        Self::new(seven.classes.into_iter().filter(|c| c.name != "solar lentigo").collect())
            .expect("subset of a valid taxonomy is valid")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    pub fn name(&self, index: usize) -> Result<&str> {
        self.classes
            .get(index)
            .map(|c| c.name.as_str())
            .ok_or_else(|| Error::Validation(format!("class index {index} out of range for {} classes", self.len())))
    }

    /// Resolves a canonical name or alias, case-insensitively.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        let key = normalize(name);
        self.classes
            .iter()
            .position(|c| normalize(&c.name) == key || c.aliases.iter().any(|a| normalize(a) == key))
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn canonical(&self, name: &str) -> Result<&str> {
        Ok(&self.classes[self.index_of(name)?].name)
    }

    pub fn risk_of_index(&self, index: usize) -> Result<RiskTier> {
        self.classes
            .get(index)
            .map(|c| c.risk)
            .ok_or_else(|| Error::Validation(format!("class index {index} out of range")))
    }
}

pub fn map_risk(taxonomy: &ClassTaxonomy, class: &str) -> Result<RiskTier> {
    Ok(taxonomy.classes[taxonomy.index_of(class)?].risk)
}

/// Probability distribution over the classes of a taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("probability vector is empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation(format!("probabilities must be finite and >= 0: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Validation(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    /// One-hot vector with `n` entries.
    pub fn one_hot(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::Validation(format!("index {index} out of range for {n} classes")));
        }
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ProbVector::new(v).map_err(serde::de::Error::custom)
    }
}

/// Anything that turns a lesion crop into class probabilities.
pub trait LesionClassifier: Send + Sync {
    fn n_classes(&self) -> usize;
    fn predict(&self, img: &ImageBuffer) -> Result<ProbVector>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tiers() {
        let t = ClassTaxonomy::dermatology_seven();
        assert_eq!(t.len(), 7);
        assert_eq!(map_risk(&t, "actinic keratosis").unwrap(), RiskTier::PreMalignant);
        let mel = map_risk(&t, "melanoma").unwrap();
        assert_eq!(mel, RiskTier::Malignant);
        assert_eq!(mel.binary(), BinaryRisk::PotentiallyMalignant);
        assert_eq!(map_risk(&t, "nevus").unwrap().binary(), BinaryRisk::Benign);
        assert!(matches!(map_risk(&t, "unknown-class"), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn seborrheic_alias_resolves_to_benign_keratosis() {
        let t = ClassTaxonomy::dermatology_seven();
        assert_eq!(t.canonical("Seborrheic Keratosis").unwrap(), "benign keratosis");
        assert_eq!(t.canonical("BCC").unwrap(), "basal cell carcinoma");
    }

    #[test]
    fn shared_six_drops_solar_lentigo() {
        let t = ClassTaxonomy::shared_six();
        assert_eq!(t.len(), 6);
        assert!(t.index_of("solar lentigo").is_err());
        assert!(t.index_of("seborrheic keratosis").is_ok());
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = |n: &str| ClassEntry { name: n.into(), aliases: vec![], risk: RiskTier::Benign };
        assert!(ClassTaxonomy::new(vec![e("a"), e("A")]).is_err());
        assert!(ClassTaxonomy::new(vec![e("a")]).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert_eq!(ProbVector::new(vec![0.4, 0.3, 0.3]).unwrap().argmax(), 0);
        assert_eq!(ProbVector::new(vec![0.25, 0.5, 0.25]).unwrap().argmax(), 1);
        assert_eq!(ProbVector::new(vec![0.5, 0.5]).unwrap().argmax(), 0);
        assert!(serde_json::from_str::<ProbVector>("[0.9, 0.2]").is_err());
    }
}
