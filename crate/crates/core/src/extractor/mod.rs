//! Clinical-variable extraction with evidence spans.
//!
//! Two interchangeable backends: deterministic pattern rules, and a remote
//! chat-completions model whose output is schema-checked and span-verified
//! before it is accepted.

pub mod llm;
pub mod patterns;

use serde::{Deserialize, Serialize};

use crate::domain::{validate_clinical_variables, ClinicalVariables, Violation};
use crate::error::ExtractError;

pub use llm::{
    llm_request_payload, ChatRequest, ChatTransport, HttpTransport, LlmExtractor,
    RawExtractionResponse, RecordedTransport,
};
pub use patterns::pattern_rules;

pub const ENV_ENDPOINT: &str = "BTRADS_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "BTRADS_LLM_MODEL";
pub const ENV_API_KEY: &str = "BTRADS_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    PatternRules,
    RemoteLlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionBackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for ExtractionBackendConfig {
    fn default() -> Self {
        ExtractionBackendConfig {
            kind: BackendKind::PatternRules,
            endpoint_url: String::new(),
            model_name: String::new(),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 60,
            api_key: None,
        }
    }
}

impl ExtractionBackendConfig {
    /// Fill endpoint, model and key from the environment where the config
    /// leaves them empty.
    pub fn with_env_overrides(mut self) -> Self {
        let var = |k| std::env::var(k).ok().filter(|v: &String| !v.is_empty());
        if self.endpoint_url.is_empty() {
            if let Some(v) = var(ENV_ENDPOINT) {
                self.endpoint_url = v;
            }
        }
        if self.model_name.is_empty() {
            if let Some(v) = var(ENV_MODEL) {
                self.model_name = v;
            }
        }
        if self.api_key.is_none() {
            self.api_key = var(ENV_API_KEY);
        }
        self
    }
}

pub trait Extractor: Send + Sync {
    fn extract(&self, note: &str) -> Result<ClinicalVariables, ExtractError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PatternExtractor;

impl Extractor for PatternExtractor {
    fn extract(&self, note: &str) -> Result<ClinicalVariables, ExtractError> {
        if note.trim().is_empty() {
            return Err(ExtractError::EmptyNote);
        }
        let vars = pattern_rules(note);
        let violations = validate_clinical_variables(&vars, note);
        if !violations.is_empty() {
            return Err(ExtractError::SpanVerificationFailure(violations));
        }
        Ok(vars)
    }
}

/// Build the extractor described by `config`.
pub fn build_extractor(config: &ExtractionBackendConfig) -> Result<Box<dyn Extractor>, ExtractError> {
    match config.kind {
        BackendKind::PatternRules => Ok(Box::new(PatternExtractor)),
        BackendKind::RemoteLlm => {
            let transport = HttpTransport::from_config(config)?;
            Ok(Box::new(LlmExtractor::new(config.clone(), transport)?))
        }
    }
}

pub fn extract(note: &str, config: &ExtractionBackendConfig) -> Result<ClinicalVariables, ExtractError> {
    build_extractor(config)?.extract(note)
}

/// Span checks only; same rules as [`validate_clinical_variables`].
pub fn verify_evidence_spans(note: &str, vars: &ClinicalVariables) -> Vec<Violation> {
    validate_clinical_variables(vars, note)
        .into_iter()
        .filter(|v| !matches!(v, Violation::MissingEvidence { .. }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Evidence, EvidenceSpan, MedicationStatus};

    #[test]
    fn pattern_backend_through_extract() {
        let vars = extract(
            "continues dexamethasone 4 mg twice daily",
            &ExtractionBackendConfig::default(),
        )
        .unwrap();
        assert_eq!(vars.steroid_status, MedicationStatus::Active);
        assert!(matches!(
            extract("  ", &ExtractionBackendConfig::default()),
            Err(ExtractError::EmptyNote)
        ));
    }

    #[test]
    fn remote_config_is_checked_up_front() {
        let cfg = ExtractionBackendConfig {
            kind: BackendKind::RemoteLlm,
            endpoint_url: "http://127.0.0.1:9/v1/chat/completions".into(),
            model_name: String::new(),
            ..Default::default()
        };
        assert!(matches!(build_extractor(&cfg), Err(ExtractError::Config(_))));
    }

    fn with_span(note: &str, start: usize, end: usize, quoted: &str) -> (String, ClinicalVariables) {
        let vars = ClinicalVariables {
            steroid_status: MedicationStatus::Active,
            evidence: Evidence {
                steroid_status: Some(EvidenceSpan {
                    start,
                    end,
                    quoted_text: quoted.into(),
                }),
                ..Default::default()
            },
            ..Default::default()
        };
        (note.to_string(), vars)
    }

    #[test]
    fn span_verification_examples() {
        let note = "Follow-up: continues dexamethasone daily.";
        let (n, v) = with_span(note, 11, 34, &note[11..34]);
        assert!(verify_evidence_spans(&n, &v).is_empty());
        let (n, v) = with_span(note, 11, 34, "continues dexamethasonX");
        assert_eq!(verify_evidence_spans(&n, &v).len(), 1);
        let (n, v) = with_span(note, 11, 400, "continues");
        assert_eq!(verify_evidence_spans(&n, &v).len(), 1);
    }
}
