//! Single-lead ECG identification: ingestion, filtering, QRS detection,
//! beat segmentation, feature extraction, feature selection and
//! classification.

pub mod classify;
pub mod detect;
pub mod dsp;
pub mod features;
pub mod ingest;
pub mod segment;
pub mod select;

pub use ingest::{Condition, EcgRecord};
