use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::Error;
use crate::quality::{assess, QualityModel, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub image_id: String,
    /// Flagged indicators by descending score, or `too_small`.
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Dataset,
    pub removed: Vec<Removal>,
}

impl FilterOutcome {
    /// One `image_id,reason` line per removed image; multiple reasons are
    /// joined with `;`.
    pub fn report(&self) -> String {
        self.removed
            .iter()
            .map(|r| format!("{},{}\n", r.image_id, r.reasons.join(";")))
            .collect()
    }
}

/// Keeps exactly the images the gate passes.
pub fn quality_filter_dataset(dataset: &Dataset, model: &QualityModel) -> FilterOutcome {
    let mut removed = Vec::new();
    let kept = dataset.filtered(|item| {
        let reasons = match assess(model, &item.image) {
            Ok(report) => match report.verdict {
                Verdict::Pass => return true,
                Verdict::Recapture { reasons } => reasons.iter().map(|r| r.as_str().to_string()).collect(),
            },
            Err(Error::ImageTooSmall { .. }) => vec!["too_small".to_string()],
            Err(e) => vec![format!("unassessable: {e}").replace(',', ";")],
        };
        removed.push(Removal {
            image_id: item.row.image_id.clone(),
            reasons,
        });
        false
    });
    FilterOutcome { kept, removed }
}
