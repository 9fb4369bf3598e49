//! Trained models on disk plus image helpers, shared by the service tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use dermtriage_core::classify::{train_baseline, BaselineTrainConfig, ClassTaxonomy, LesionClassifier};
use dermtriage_core::datastore::{Dataset, REFERENCE_CLASS_COUNTS};
use dermtriage_core::ensemble::{train_fusion, EnsembleInput, FusionTrainConfig};
use dermtriage_core::imaging::synth::skin_texture;
use dermtriage_core::imaging::{apply_distortion, DistortionKind, DistortionSpec};
use dermtriage_core::quality::{default_distortion_grid, train_quality_model, QualityTrainConfig};
use dermtriage_service::config::{Config, ModelPaths};

pub const SIDE: u32 = 64;
pub const MEMBERS: [&str; 2] = ["derm-a", "derm-b"];

pub fn clean_png(seed: u64) -> Vec<u8> {
    skin_texture(seed, SIDE).encode_png().unwrap()
}

pub fn blurred_png(seed: u64, sigma: f64) -> Vec<u8> {
    let spec = DistortionSpec {
        kind: DistortionKind::Blur,
        magnitude: sigma,
    };
    apply_distortion(&skin_texture(seed, SIDE), spec).unwrap().encode_png().unwrap()
}

pub struct Models {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub paths: ModelPaths,
}

fn labelled(seed: u64) -> Dataset {
    let counts: Vec<(&str, usize)> = REFERENCE_CLASS_COUNTS.iter().map(|(c, _)| (*c, 6)).collect();
    Dataset::synthetic(ClassTaxonomy::dermatology_seven(), &counts, 40, 2, seed).unwrap()
}

/// Quality model, two baseline members and a fusion head trained over them.
pub fn train_models(dir: &Path) -> ModelPaths {
    let tax = ClassTaxonomy::dermatology_seven();
    let corpus: Vec<_> = (0..50).map(|s| skin_texture(s, SIDE)).collect();
    let quality = train_quality_model(&corpus, &default_distortion_grid(), &QualityTrainConfig::default())
        .unwrap()
        .model;
    let quality_path = dir.join("quality.model");
    quality.save(&quality_path).unwrap();

    let mut members = Vec::new();
    let mut classifier_paths = Vec::new();
    for (i, name) in MEMBERS.iter().enumerate() {
        let cfg = BaselineTrainConfig {
            seed: i as u64,
            epochs: 60,
            ..Default::default()
        };
        let data = labelled(1_000 * (i as u64 + 1));
        let (clf, _) = train_baseline(&data.labeled_images().unwrap(), &tax, &cfg).unwrap();
        let path = dir.join(format!("{name}.model"));
        clf.save(&path).unwrap();
        members.push(clf);
        classifier_paths.push(path);
    }

    let held = labelled(5_000);
    let samples: Vec<_> = held
        .labeled_images()
        .unwrap()
        .into_iter()
        .map(|(img, y)| {
            let probs = members.iter().map(|m| m.predict(&img).unwrap()).collect();
            (EnsembleInput::new(probs).unwrap(), y)
        })
        .collect();
    let names = MEMBERS.iter().map(|s| s.to_string()).collect();
    let cfg = FusionTrainConfig {
        epochs: 60,
        ..Default::default()
    };
    let (fusion, _) = train_fusion(&samples, Some(names), &cfg).unwrap();
    let fusion_path = dir.join("fusion.model");
    std::fs::write(&fusion_path, fusion.to_text()).unwrap();

    ModelPaths {
        quality: Some(quality_path),
        classifiers: classifier_paths,
        fusion: Some(fusion_path),
    }
}

/// Trained once per test binary.
pub fn models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let paths = train_models(dir.path());
        Models {
            root: dir.path().to_path_buf(),
            _dir: dir,
            paths,
        }
    })
}

pub fn config(storage: &Path) -> Config {
    Config {
        storage_dir: storage.to_path_buf(),
        bind: "127.0.0.1:0".into(),
        models: models().paths.clone(),
        ..Config::default()
    }
}

/// Writes `config.toml` for the binary into `dir`.
pub fn write_config(dir: &Path, storage: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, toml::to_string(&config(storage)).unwrap()).unwrap();
    path
}

pub fn patient() -> serde_json::Value {
    serde_json::json!({"age": 61, "gender": "female", "fitzpatrick": 2, "lesion_location": "back"})
}

pub fn device() -> serde_json::Value {
    serde_json::json!({"device": {"model": "Pixel 7", "operating_system": "Android 14", "camera": "main"}})
}
