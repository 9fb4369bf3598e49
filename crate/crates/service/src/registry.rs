//! Named, versioned models loaded from disk. A version is the first 12 hex
//! digits of the SHA-256 of the model file text.

use std::path::{Path, PathBuf};

use dermtriage_core::classify::{BaselineClassifier, ClassTaxonomy, LesionClassifier, ProbVector};
use dermtriage_core::ensemble::{fusion_forward, majority_vote, EnsembleInput, FusionModel};
use dermtriage_core::imaging::ImageBuffer;
use dermtriage_core::quality::{QualityModel, INDICATOR_COUNT};
use dermtriage_core::workflow::MemberPrediction;
use dermtriage_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ModelPaths;

pub fn version_of(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

/// Model name: the file stem.
pub fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub struct Member {
    pub name: String,
    pub version: String,
    pub path: PathBuf,
    pub classifier: Box<dyn LesionClassifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub name: String,
    pub version: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistryInfo {
    pub quality: Option<ModelInfo>,
    pub classifiers: Vec<ModelInfo>,
    pub fusion: Option<ModelInfo>,
    pub ensemble_version: String,
}

/// Member outputs plus the combined decision for one ROI image.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub members: Vec<MemberPrediction>,
    pub vote: usize,
    pub fusion: Option<ProbVector>,
    pub model_version: String,
}

#[derive(Default)]
pub struct ModelRegistry {
    quality: Option<(QualityModel, ModelInfo)>,
    members: Vec<Member>,
    fusion: Option<(FusionModel, ModelInfo)>,
}

impl ModelRegistry {
    /// Loads every configured model and checks that they agree with `taxonomy`.
    pub fn load(
        paths: &ModelPaths,
        taxonomy: &ClassTaxonomy,
        thresholds: Option<[f64; INDICATOR_COUNT]>,
    ) -> Result<Self> {
        let mut reg = Self::default();
        if let Some(p) = &paths.quality {
            let text = read(p)?;
            let mut model = QualityModel::from_text(&text)?;
            if let Some(t) = thresholds {
                model = model.with_thresholds(t)?;
            }
            reg.quality = Some((model, info(p, &text)));
        }
        for p in &paths.classifiers {
            let text = read(p)?;
            let clf = BaselineClassifier::from_text(&text)?;
            if clf.taxonomy() != taxonomy {
                return Err(Error::ModelFormat(format!(
                    "classifier {} was trained on a different taxonomy",
                    p.display()
                )));
            }
            let member = Member {
                name: model_name(p),
                version: version_of(&text),
                path: p.clone(),
                classifier: Box::new(clf),
            };
            reg.add_member(member, taxonomy)?;
        }
        if let Some(p) = &paths.fusion {
            let text = read(p)?;
            reg.set_fusion(FusionModel::from_text(&text)?, info(p, &text))?;
        }
        Ok(reg)
    }

    pub fn with_quality(mut self, model: QualityModel, version: &str) -> Self {
        self.quality = Some((
            model,
            ModelInfo {
                name: "quality".into(),
                version: version.to_string(),
                path: PathBuf::new(),
            },
        ));
        self
    }

    fn add_member(&mut self, member: Member, taxonomy: &ClassTaxonomy) -> Result<()> {
        if member.classifier.n_classes() != taxonomy.len() {
            return Err(Error::ModelFormat(format!(
                "classifier {} predicts {} classes, the taxonomy has {}",
                member.name,
                member.classifier.n_classes(),
                taxonomy.len()
            )));
        }
        if self.members.iter().any(|m| m.name == member.name) {
            return Err(Error::ModelFormat(format!("two classifiers named {}", member.name)));
        }
        self.members.push(member);
        Ok(())
    }

    /// Registers an in-memory classifier (tests, scripted runs).
    pub fn push_member(
        &mut self,
        name: &str,
        version: &str,
        classifier: Box<dyn LesionClassifier>,
        taxonomy: &ClassTaxonomy,
    ) -> Result<()> {
        let member = Member {
            name: name.to_string(),
            version: version.to_string(),
            path: PathBuf::new(),
            classifier,
        };
        self.add_member(member, taxonomy)
    }

    pub fn set_fusion(&mut self, model: FusionModel, info: ModelInfo) -> Result<()> {
        let names: Vec<&str> = self.members.iter().map(|m| m.name.as_str()).collect();
        let expected: Vec<&str> = model.member_names().iter().map(String::as_str).collect();
        if names != expected {
            return Err(Error::ModelFormat(format!(
                "fusion model {} expects members {expected:?}, registered {names:?}",
                info.name
            )));
        }
        if let Some(m) = self.members.first() {
            if m.classifier.n_classes() != model.n_classes() {
                return Err(Error::ModelFormat(format!("fusion model {} class count differs", info.name)));
            }
        }
        self.fusion = Some((model, info));
        Ok(())
    }

    pub fn quality(&self) -> Option<&QualityModel> {
        self.quality.as_ref().map(|(m, _)| m)
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn fusion(&self) -> Option<&FusionModel> {
        self.fusion.as_ref().map(|(m, _)| m)
    }

    /// `name@version` of every member joined by `+`, then the fusion model.
    pub fn ensemble_version(&self) -> String {
        let mut v = self
            .members
            .iter()
            .map(|m| format!("{}@{}", m.name, m.version))
            .collect::<Vec<_>>()
            .join("+");
        if let Some((_, f)) = &self.fusion {
            v.push_str(&format!("|fusion:{}@{}", f.name, f.version));
        }
        v
    }

    pub fn info(&self) -> RegistryInfo {
        RegistryInfo {
            quality: self.quality.as_ref().map(|(_, i)| i.clone()),
            classifiers: self
                .members
                .iter()
                .map(|m| ModelInfo {
                    name: m.name.clone(),
                    version: m.version.clone(),
                    path: m.path.clone(),
                })
                .collect(),
            fusion: self.fusion.as_ref().map(|(_, i)| i.clone()),
            ensemble_version: self.ensemble_version(),
        }
    }

    /// Runs every member on `roi`, then the vote and (if registered) fusion.
    pub fn classify(&self, roi: &ImageBuffer) -> Result<EnsembleOutput> {
        if self.members.is_empty() {
            return Err(Error::Validation("no classifiers are registered".into()));
        }
        let members = self
            .members
            .iter()
            .map(|m| {
                Ok(MemberPrediction {
                    name: m.name.clone(),
                    version: m.version.clone(),
                    probs: m.classifier.predict(roi)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let input = EnsembleInput::new(members.iter().map(|m| m.probs.clone()).collect())?;
        let vote = majority_vote(&input);
        let fusion = match &self.fusion {
            Some((model, _)) => Some(fusion_forward(model, &input)?),
            None => None,
        };
        Ok(EnsembleOutput {
            members,
            vote,
            fusion,
            model_version: self.ensemble_version(),
        })
    }
}

fn info(path: &Path, text: &str) -> ModelInfo {
    ModelInfo {
        name: model_name(path),
        version: version_of(text),
        path: path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl LesionClassifier for Fixed {
        fn n_classes(&self) -> usize {
            self.0.len()
        }

        fn predict(&self, _: &ImageBuffer) -> Result<ProbVector> {
            ProbVector::new(self.0.clone())
        }
    }

    fn tax() -> ClassTaxonomy {
        ClassTaxonomy::dermatology_seven()
    }

    fn peaked(i: usize) -> Vec<f64> {
        let mut v = vec![0.05; 7];
        v[i] = 0.7;
        v
    }

    #[test]
    fn versions_are_stable_content_hashes() {
        assert_eq!(version_of("abc"), version_of("abc"));
        assert_ne!(version_of("abc"), version_of("abd"));
        assert_eq!(version_of("").len(), 12);
        assert_eq!(model_name(Path::new("/m/derm-a.model")), "derm-a");
    }

    #[test]
    fn classify_votes_and_fuses() {
        let mut reg = ModelRegistry::default();
        let img = ImageBuffer::filled(32, 32, [100; 3]).unwrap();
        assert!(matches!(reg.classify(&img), Err(Error::Validation(_))));
        reg.push_member("a", "1", Box::new(Fixed(peaked(2))), &tax()).unwrap();
        reg.push_member("b", "2", Box::new(Fixed(peaked(2))), &tax()).unwrap();
        assert!(reg.push_member("a", "3", Box::new(Fixed(peaked(0))), &tax()).is_err());
        assert!(reg
            .push_member("c", "1", Box::new(Fixed(vec![0.5, 0.5])), &tax())
            .is_err());
        let out = reg.classify(&img).unwrap();
        assert_eq!((out.members.len(), out.vote, out.fusion.is_none()), (2, 2, true));
        assert_eq!(out.model_version, "a@1+b@2");

        let wrong = FusionModel::new(vec!["b".into(), "a".into()], 7, 4, 0.0, 0).unwrap();
        let fi = ModelInfo {
            name: "f".into(),
            version: "9".into(),
            path: PathBuf::new(),
        };
        assert!(reg.set_fusion(wrong, fi.clone()).is_err());
        let fusion = FusionModel::new(vec!["a".into(), "b".into()], 7, 4, 0.0, 0).unwrap();
        reg.set_fusion(fusion, fi).unwrap();
        let out = reg.classify(&img).unwrap();
        assert_eq!(out.fusion.unwrap().len(), 7);
        assert_eq!(out.model_version, "a@1+b@2|fusion:f@9");
    }
}
