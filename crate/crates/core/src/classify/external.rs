//! Probability vectors produced outside this crate, keyed by image id.
//!
//! CSV layout: `image_id,<class 0>,<class 1>,...` with one decimal
//! probability per class. The header names the columns; only its width is
//! checked on read.

use std::collections::BTreeMap;
use std::path::Path;

use super::ProbVector;
use crate::error::{Error, Result};
use crate::modelfile::format_f64;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilityTable {
    pub class_names: Vec<String>,
    pub rows: BTreeMap<String, ProbVector>,
}

impl ProbabilityTable {
    pub fn new(class_names: Vec<String>) -> Self {
        Self {
            class_names,
            rows: BTreeMap::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, probs: ProbVector) -> Result<()> {
        if probs.len() != self.n_classes() {
            return Err(Error::Shape(format!(
                "vector of length {} in a {}-class table",
                probs.len(),
                self.n_classes()
            )));
        }
        self.rows.insert(image_id.into(), probs);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&ProbVector> {
        self.rows.get(image_id)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || headers.get(0) != Some("image_id") {
            return Err(Error::Manifest(
                "probability table needs `image_id` plus at least two class columns".into(),
            ));
        }
        let mut table = Self::new(headers.iter().skip(1).map(str::to_string).collect());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let probs = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
            let pv = ProbVector::new(probs).map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
            table.insert(rec.get(0).unwrap_or_default(), pv)?;
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("image_id").chain(self.class_names.iter().map(String::as_str)))?;
        for (id, p) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(p.as_slice().iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}
