use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{valid_image_id, Dataset, ManifestRow, MANIFEST_HEADER};
use crate::classify::{map_risk, ClassTaxonomy, RiskTier};
use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;

pub const MANIFEST_FILE: &str = "manifest.csv";

const FIELDS: [&str; 14] = [
    "record_id",
    "lesion_id",
    "image_id",
    "age",
    "gender",
    "fitzpatrick",
    "body_site",
    "diagnostic",
    "risk",
    "device_model",
    "os",
    "camera",
    "image_path",
    "text_description",
];

/// Manifest field -> source column name. Fields left unmapped take their
/// defaults (`image_id` from the image file stem, `record_id` from
/// `image_id`, `lesion_id` from `record_id`, the rest empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub columns: BTreeMap<String, String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self::identity()
    }
}

impl ColumnMapping {
    pub fn identity() -> Self {
        Self {
            columns: FIELDS.iter().map(|f| (f.to_string(), f.to_string())).collect(),
        }
    }

    /// Maps `field` to `column`, replacing any earlier mapping.
    pub fn with(mut self, field: &str, column: &str) -> Result<Self> {
        if !FIELDS.contains(&field) {
            return Err(Error::Validation(format!("unknown manifest field `{field}`")));
        }
        self.columns.insert(field.to_string(), column.to_string());
        Ok(self)
    }

    /// Identity mapping overridden by `field=column` pairs separated by commas.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut m = Self::identity();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (field, column) = pair
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("mapping entry `{pair}` is not field=column")))?;
            m = m.with(field.trim(), column.trim())?;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line in the manifest, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOutcome {
    pub dataset: Dataset,
    pub skipped: Vec<SkippedRow>,
    pub warnings: Vec<String>,
}

/// Writes `manifest.csv` and `images/<image_id>.png` under `dir`.
pub fn export_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    if dataset.is_empty() {
        return Err(Error::Validation("nothing to export: dataset is empty".into()));
    }
    let dir = dir.as_ref();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for (path, bytes) in render_images(dataset)? {
        let p = dir.join(path);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, render_manifest(dataset)?).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

pub fn render_manifest(dataset: &Dataset) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for row in dataset.rows() {
        w.serialize(row)?;
    }
    if dataset.is_empty() {
        w.write_record(FIELDS)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Manifest(e.to_string()))?;
    debug_assert!(text.starts_with(MANIFEST_HEADER));
    Ok(text)
}

/// `(relative path, PNG bytes)` for every image.
pub fn render_images(dataset: &Dataset) -> Result<Vec<(String, Vec<u8>)>> {
    dataset
        .items()
        .iter()
        .map(|i| Ok((i.row.image_path.clone(), i.image.encode_png()?)))
        .collect()
}

struct Columns {
    index: BTreeMap<&'static str, usize>,
}

impl Columns {
    fn get<'r>(&self, rec: &'r csv::StringRecord, field: &str) -> Option<&'r str> {
        self.index
            .get(field)
            .and_then(|&i| rec.get(i))
            .map(str::trim)
            .filter(|v| !v.is_empty())
    }
}

fn parse_bounded(v: Option<&str>, field: &str, lo: f64, hi: f64) -> std::result::Result<Option<f64>, String> {
    let Some(v) = v else { return Ok(None) };
    let x: f64 = v.parse().map_err(|_| format!("{field} `{v}` is not a number"))?;
    if x.fract() != 0.0 || !(lo..=hi).contains(&x) {
        return Err(format!("{field} `{v}` outside {lo}..={hi}"));
    }
    Ok(Some(x))
}

/// Reads `dir/manifest.csv` (or `manifest_name`) through `mapping`.
/// Bad rows are skipped and reported; only a missing manifest or a mapping
/// without `diagnostic`/`image_path` columns fails the whole import.
pub fn import_dataset(
    dir: impl AsRef<Path>,
    manifest_name: Option<&str>,
    mapping: &ColumnMapping,
    taxonomy: &ClassTaxonomy,
) -> Result<ImportOutcome> {
    let dir = dir.as_ref();
    let path = dir.join(manifest_name.unwrap_or(MANIFEST_FILE));
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = rdr.headers()?.clone();
    let position = |col: &str| header.iter().position(|h| h.trim() == col);

    let mut warnings = Vec::new();
    let mut index = BTreeMap::new();
    for field in FIELDS {
        let Some(col) = mapping.columns.get(field) else { continue };
        match position(col) {
            Some(i) => {
                index.insert(field, i);
            }
            None if field == "diagnostic" || field == "image_path" => {
                return Err(Error::Manifest(format!(
                    "{}: required column `{col}` (for {field}) not found",
                    path.display()
                )));
            }
            None if col != field => warnings.push(format!("mapped column `{col}` (for {field}) not found")),
            None => {}
        }
    }
    for (i, h) in header.iter().enumerate() {
        if !index.values().any(|&j| j == i) {
            warnings.push(format!("ignored column `{h}`"));
        }
    }
    let cols = Columns { index };

    let mut dataset = Dataset::new(taxonomy.clone());
    let mut skipped = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow { line, reason: e.to_string() });
                continue;
            }
        };
        match import_row(dir, &cols, &rec, taxonomy, &dataset) {
            Ok((row, image, warning)) => {
                if let Some(w) = warning {
                    warnings.push(format!("line {line}: {w}"));
                }
                if let Err(e) = dataset.push(row, image) {
                    skipped.push(SkippedRow { line, reason: e.to_string() });
                }
            }
            Err(reason) => skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok(ImportOutcome {
        dataset,
        skipped,
        warnings,
    })
}

fn import_row(
    dir: &Path,
    cols: &Columns,
    rec: &csv::StringRecord,
    taxonomy: &ClassTaxonomy,
    so_far: &Dataset,
) -> std::result::Result<(ManifestRow, ImageBuffer, Option<String>), String> {
    let text = |f: &str| cols.get(rec, f).unwrap_or("").to_string();
    let raw_diag = cols.get(rec, "diagnostic").ok_or("empty diagnostic")?;
    let diagnostic = taxonomy
        .canonical(raw_diag)
        .map_err(|_| format!("diagnostic `{raw_diag}` is not in the taxonomy"))?
        .to_string();
    let rel = cols.get(rec, "image_path").ok_or("empty image_path")?;
    let image_file = dir.join(rel);
    if !image_file.is_file() {
        return Err(format!("image file {} missing", image_file.display()));
    }
    let image = ImageBuffer::read_png(&image_file).map_err(|e| e.to_string())?;
    let image_id = match cols.get(rec, "image_id") {
        Some(id) => id.to_string(),
        None => Path::new(rel)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string(),
    };
    if !valid_image_id(&image_id) {
        return Err(format!("unusable image id `{image_id}`"));
    }
    if so_far.contains(&image_id) {
        return Err(format!("duplicate image id `{image_id}`"));
    }
    let record_id = cols.get(rec, "record_id").unwrap_or(&image_id).to_string();
    let lesion_id = cols.get(rec, "lesion_id").unwrap_or(&record_id).to_string();
    let age = parse_bounded(cols.get(rec, "age"), "age", 0.0, 120.0)?.map(|a| a as u32);
    let fitzpatrick = parse_bounded(cols.get(rec, "fitzpatrick"), "fitzpatrick", 1.0, 6.0)?.map(|f| f as u8);
    let risk = map_risk(taxonomy, &diagnostic).map_err(|e| e.to_string())?;
    let warning = cols.get(rec, "risk").and_then(|given| match RiskTier::parse(given) {
        Ok(t) if t == risk => None,
        _ => Some(format!("risk `{given}` replaced by `{risk}` from the diagnostic")),
    });
    let gender = text("gender").to_lowercase();
    let row = ManifestRow {
        record_id,
        lesion_id,
        image_id,
        age,
        gender,
        fitzpatrick,
        body_site: text("body_site").to_lowercase(),
        diagnostic,
        risk,
        device_model: text("device_model"),
        os: text("os"),
        camera: text("camera"),
        image_path: String::new(),
        text_description: cols.get(rec, "text_description").map(str::to_string),
    };
    Ok((row, image, warning))
}
