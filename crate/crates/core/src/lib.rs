//! Multimodal ICU outcome prediction from hourly vital-sign series and
//! clinical notes.

pub mod cli;
pub mod data;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod selfcheck;
pub mod text;
pub mod train;

pub use error::{Error, Result};
