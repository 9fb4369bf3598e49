//! HTTP API and command line for the dermtriage pipeline.

pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod registry;
pub mod service;

pub use config::Config;
pub use error::ApiError;
pub use service::Service;
