//! BT-RADS scoring for post-treatment glioma follow-up MRI.
//!
//! Tumor volumetrics, clinical-variable extraction from notes, a
//! deterministic decision table, batch orchestration with an audit trail,
//! and the evaluation statistics used to compare system output against a
//! reference standard.

pub mod domain;
pub mod error;
pub mod evalstats;
pub mod evaluation;
pub mod extractor;
pub mod fixtures;
pub mod pipeline;
pub mod scorer;
pub mod store;
pub mod volumetrics;

pub use domain::{
    parse_btrads_label, validate_clinical_variables, BtradsCategory, CaseRecord,
    ClinicalVariables, EvidenceSpan, MedicationStatus, ObservedLabel, Variable, Violation,
};
pub use error::{DomainError, ExtractError, PipelineError, StatsError};
