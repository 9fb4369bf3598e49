//! Lesion capture processing, quality gating, ensemble triage and dataset curation.

pub mod blobs;
pub mod classify;
pub mod datastore;
pub mod ensemble;
pub mod error;
pub mod imaging;
pub mod modelfile;
pub mod nn;
pub mod quality;
pub mod workflow;

pub use error::{Error, Result};
