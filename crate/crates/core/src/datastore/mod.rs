//! Flat image manifests: export/import, quality filtering, summaries and
//! lesion-grouped partitioning.

mod filter;
mod manifest;
mod split;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classify::{map_risk, ClassTaxonomy, RiskTier};
use crate::error::{Error, Result};
use crate::imaging::synth::skin_texture;
use crate::imaging::ImageBuffer;
use crate::workflow::{CaseStore, DeviceMeta, Gender, PatientMeta};

pub use filter::{quality_filter_dataset, FilterOutcome, Removal};
pub use manifest::{
    export_dataset, import_dataset, render_images, render_manifest, ColumnMapping, ImportOutcome, SkippedRow, MANIFEST_FILE,
};
pub use split::{partition_sizes, split_dataset, Split, SplitRatios};

/// Column order of the exported manifest.
pub const MANIFEST_HEADER: &str = "record_id,lesion_id,image_id,age,gender,fitzpatrick,body_site,diagnostic,risk,device_model,os,camera,image_path,text_description";

/// One image with its clinical and device metadata. Field order is the
/// manifest column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub record_id: String,
    pub lesion_id: String,
    pub image_id: String,
    pub age: Option<u32>,
    pub gender: String,
    pub fitzpatrick: Option<u8>,
    pub body_site: String,
    pub diagnostic: String,
    pub risk: RiskTier,
    pub device_model: String,
    pub os: String,
    pub camera: String,
    pub image_path: String,
    pub text_description: Option<String>,
}

impl ManifestRow {
    /// Row with only the identifying and label fields set.
    pub fn minimal(image_id: &str, lesion_id: &str, diagnostic: &str) -> Self {
        Self {
            record_id: image_id.to_string(),
            lesion_id: lesion_id.to_string(),
            image_id: image_id.to_string(),
            age: None,
            gender: String::new(),
            fitzpatrick: None,
            body_site: String::new(),
            diagnostic: diagnostic.to_string(),
            risk: RiskTier::Benign,
            device_model: String::new(),
            os: String::new(),
            camera: String::new(),
            image_path: String::new(),
            text_description: None,
        }
    }
}

pub(crate) fn valid_image_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn image_path_for(image_id: &str) -> String {
    format!("images/{image_id}.png")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub row: ManifestRow,
    pub image: ImageBuffer,
}

/// Images plus manifest rows, unique by `image_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    taxonomy: ClassTaxonomy,
    items: Vec<DatasetItem>,
    ids: BTreeSet<String>,
}

/// Per-class image counts of the reference clinical collection. The listed
/// class counts do not add up to its tier totals, so each tier is
/// rescaled to its total: 2273 benign, 608 malignant, 520 pre-malignant.
pub const REFERENCE_CLASS_COUNTS: [(&str, usize); 7] = [
    ("melanoma", 28),
    ("basal cell carcinoma", 447),
    ("squamous cell carcinoma", 133),
    ("actinic keratosis", 520),
    ("nevus", 828),
    ("benign keratosis", 1029),
    ("solar lentigo", 416),
];

impl Dataset {
    pub fn new(taxonomy: ClassTaxonomy) -> Self {
        Self {
            taxonomy,
            items: Vec::new(),
            ids: BTreeSet::new(),
        }
    }

    /// Adds an image. The diagnostic is canonicalized, the risk tier
    /// derived from it and the image path set to its export location.
    pub fn push(&mut self, mut row: ManifestRow, image: ImageBuffer) -> Result<()> {
        if !valid_image_id(&row.image_id) {
            return Err(Error::Validation(format!(
                "image id `{}` must be non-empty ASCII letters, digits, '-', '_' or '.'",
                row.image_id
            )));
        }
        if self.ids.contains(&row.image_id) {
            return Err(Error::Validation(format!("duplicate image id `{}`", row.image_id)));
        }
        for f in [
            &mut row.record_id,
            &mut row.lesion_id,
            &mut row.device_model,
            &mut row.os,
            &mut row.camera,
        ] {
            *f = f.trim().to_string();
        }
        row.gender = row.gender.trim().to_lowercase();
        row.body_site = row.body_site.trim().to_lowercase();
        row.diagnostic = self.taxonomy.canonical(&row.diagnostic)?.to_string();
        row.risk = map_risk(&self.taxonomy, &row.diagnostic)?;
        row.image_path = image_path_for(&row.image_id);
        row.text_description = row
            .text_description
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty());
        self.ids.insert(row.image_id.clone());
        self.items.push(DatasetItem { row, image });
        Ok(())
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn rows(&self) -> impl Iterator<Item = &ManifestRow> {
        self.items.iter().map(|i| &i.row)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.ids.contains(image_id)
    }

    pub fn get(&self, image_id: &str) -> Option<&DatasetItem> {
        self.items.iter().find(|i| i.row.image_id == image_id)
    }

    pub fn image_ids(&self) -> BTreeSet<String> {
        self.ids.clone()
    }

    /// Items for which `keep` holds, in the original order.
    pub fn filtered(&self, mut keep: impl FnMut(&DatasetItem) -> bool) -> Self {
        let mut out = Self::new(self.taxonomy.clone());
        for item in self.items.iter().filter(|i| keep(i)) {
            out.ids.insert(item.row.image_id.clone());
            out.items.push(item.clone());
        }
        out
    }

    /// `(image, class index)` pairs for training.
    pub fn labeled_images(&self) -> Result<Vec<(ImageBuffer, usize)>> {
        self.items
            .iter()
            .map(|i| Ok((i.image.clone(), self.taxonomy.index_of(&i.row.diagnostic)?)))
            .collect()
    }

    /// One row per stored capture of every labelled case, using the square
    /// crop as the image. Final histopathology labels win over preliminary ones.
    pub fn from_cases(store: &CaseStore) -> Result<Self> {
        let mut out = Self::new(store.taxonomy().clone());
        for r in store.records() {
            let Some(label) = r.label() else { continue };
            for c in &r.captures {
                if out.contains(&c.cropped.0) {
                    continue;
                }
                let row = ManifestRow {
                    record_id: r.record_id.clone(),
                    lesion_id: r.lesion_id.clone(),
                    image_id: c.cropped.0.clone(),
                    age: Some(r.patient.age),
                    gender: r.patient.gender.as_str().to_string(),
                    fitzpatrick: Some(r.patient.fitzpatrick),
                    body_site: r.patient.lesion_location.clone(),
                    diagnostic: label.to_string(),
                    risk: RiskTier::Benign,
                    device_model: c.device.model.clone(),
                    os: c.device.operating_system.clone(),
                    camera: c.device.camera.clone(),
                    image_path: String::new(),
                    text_description: r.annotation.as_ref().and_then(|a| a.description.clone()),
                };
                out.push(row, store.blobs().get(&c.cropped)?)?;
            }
        }
        Ok(out)
    }

    /// Turns every row into a case carrying a preliminary label. Rows
    /// without usable patient metadata are returned as `(image_id, reason)`.
    pub fn materialize_cases(&self, store: &mut CaseStore, source: &str) -> Result<Vec<(String, String)>> {
        let mut skipped = Vec::new();
        for item in &self.items {
            let row = &item.row;
            let (Some(age), Some(fitzpatrick)) = (row.age, row.fitzpatrick) else {
                skipped.push((row.image_id.clone(), "missing age or fitzpatrick".into()));
                continue;
            };
            let patient = PatientMeta {
                age,
                gender: Gender::parse(&row.gender).unwrap_or(Gender::Other),
                fitzpatrick,
                lesion_location: row.body_site.clone(),
            };
            let device = DeviceMeta {
                model: if row.device_model.trim().is_empty() {
                    "unknown".into()
                } else {
                    row.device_model.clone()
                },
                operating_system: row.os.clone(),
                camera: row.camera.clone(),
            };
            let res = store.import_case(
                Some(&row.record_id),
                Some(&row.lesion_id),
                patient,
                &item.image,
                device,
                &row.diagnostic,
                source,
            );
            match res {
                Ok(_) => {}
                Err(Error::Validation(msg)) => skipped.push((row.image_id.clone(), msg)),
                Err(e) => return Err(e),
            }
        }
        Ok(skipped)
    }

    /// Synthetic textures with the given per-class image counts, one lesion
    /// per `images_per_lesion` consecutive images.
    pub fn synthetic(
        taxonomy: ClassTaxonomy,
        class_counts: &[(&str, usize)],
        side: u32,
        images_per_lesion: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut out = Self::new(taxonomy);
        let per = images_per_lesion.max(1);
        let mut n = 0usize;
        for (class, count) in class_counts {
            for _ in 0..*count {
                let mut row = ManifestRow::minimal(&format!("syn-{n:05}"), &format!("les-{:05}", n / per), class);
                row.record_id = format!("rec-{:05}", n / per);
                row.age = Some(20 + (n % 70) as u32);
                row.gender = if n.is_multiple_of(2) { "female" } else { "male" }.into();
                row.fitzpatrick = Some(1 + (n % 6) as u8);
                row.body_site = crate::workflow::BODY_SITES[n % crate::workflow::BODY_SITES.len()].into();
                row.device_model = ["Pixel 7", "Galaxy S21", "iPhone 13"][n % 3].into();
                row.os = ["Android 14", "Android 13", "iOS 17"][n % 3].into();
                row.camera = "12 MP".into();
                out.push(row, skin_texture(seed.wrapping_add(n as u64), side))?;
                n += 1;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub by_class: BTreeMap<String, usize>,
    /// Keyed by tier name; every tier is present.
    pub by_risk: BTreeMap<String, usize>,
    /// Keyed by phototype, `unknown` when missing.
    pub by_fitzpatrick: BTreeMap<String, usize>,
    pub by_device: BTreeMap<String, usize>,
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    summarize_rows(dataset.taxonomy(), dataset.rows())
}

pub fn summarize_rows<'a>(taxonomy: &ClassTaxonomy, rows: impl IntoIterator<Item = &'a ManifestRow>) -> DatasetSummary {
    let mut s = DatasetSummary {
        total: 0,
        by_class: taxonomy.names().map(|n| (n.to_string(), 0)).collect(),
        by_risk: [RiskTier::Benign, RiskTier::PreMalignant, RiskTier::Malignant]
            .iter()
            .map(|t| (t.as_str().to_string(), 0))
            .collect(),
        by_fitzpatrick: BTreeMap::new(),
        by_device: BTreeMap::new(),
    };
    for r in rows {
        s.total += 1;
        *s.by_class.entry(r.diagnostic.clone()).or_default() += 1;
        *s.by_risk.entry(r.risk.as_str().to_string()).or_default() += 1;
        let fitz = r.fitzpatrick.map_or_else(|| "unknown".to_string(), |f| f.to_string());
        *s.by_fitzpatrick.entry(fitz).or_default() += 1;
        let device = if r.device_model.is_empty() { "unknown" } else { &r.device_model };
        *s.by_device.entry(device.to_string()).or_default() += 1;
    }
    s
}

#[cfg(test)]
mod tests;
