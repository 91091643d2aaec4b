//! Remote extraction over a chat-completions endpoint with a JSON-schema
//! constrained response and a re-prompt loop on validation failure.

use std::collections::VecDeque;
use std::time::Duration;

use chrono::NaiveDate;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendKind, ExtractionBackendConfig, Extractor};
use crate::domain::{
    validate_clinical_variables, ClinicalVariables, EvidenceSpan, MedicationStatus, Variable,
    Violation,
};
use crate::error::ExtractError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// Body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub response_format: Value,
}

/// Untrusted assistant text returned by a backend, before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawExtractionResponse(pub String);

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<RawExtractionResponse, ExtractError>;
}

/// JSON schema the model must follow.
pub fn output_schema() -> Value {
    let span = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["start", "end", "quoted_text"],
        "properties": {
            "start": {"type": "integer", "minimum": 0},
            "end": {"type": "integer", "minimum": 1},
            "quoted_text": {"type": "string"}
        }
    });
    let evidence = json!({"anyOf": [{"type": "null"}, {"$ref": "#/$defs/evidence_span"}]});
    let medication = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["value", "evidence"],
        "properties": {
            "value": {"type": "string", "enum": ["active", "recent", "none"]},
            "evidence": evidence
        }
    });
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["steroid_status", "bevacizumab_status", "radiation_completion_date"],
        "properties": {
            "steroid_status": medication,
            "bevacizumab_status": medication,
            "radiation_completion_date": {
                "type": "object",
                "additionalProperties": false,
                "required": ["value", "evidence"],
                "properties": {
                    "value": {"anyOf": [
                        {"type": "null"},
                        {"type": "string", "pattern": "^[0-9]{4}-[0-9]{2}-[0-9]{2}$"}
                    ]},
                    "evidence": evidence
                }
            }
        },
        "$defs": {"evidence_span": span}
    })
}

fn system_prompt() -> String {
    let schema = serde_json::to_string_pretty(&output_schema()).expect("static schema");
    format!(
        "You extract treatment variables from a neuro-oncology clinical note.\n\
         Report exactly three variables:\n\
         - steroid_status: \"active\" if the patient is currently taking corticosteroids \
         (e.g. dexamethasone), \"recent\" if they were recently tapered, held or stopped, \
         otherwise \"none\".\n\
         - bevacizumab_status: same three values for bevacizumab (Avastin).\n\
         - radiation_completion_date: the date radiation therapy was completed, as YYYY-MM-DD, \
         or null if the note does not state it. Never guess a date and never use two-digit years.\n\
         For every value other than \"none\"/null give evidence: character offsets into the note \
         (start inclusive, end exclusive, counting Unicode characters from 0) and quoted_text \
         copied verbatim from the note at those offsets. Use null evidence for \"none\"/null.\n\
         Respond with a single JSON object and nothing else. It must validate against this \
         JSON schema:\n{schema}"
    )
}

fn check_config(config: &ExtractionBackendConfig) -> Result<(), ExtractError> {
    if config.kind != BackendKind::RemoteLlm {
        return Err(ExtractError::Config("backend is not remote_llm".into()));
    }
    if config.model_name.trim().is_empty() {
        return Err(ExtractError::Config("model_name is empty".into()));
    }
    if config.temperature != 0.0 {
        return Err(ExtractError::Config(format!(
            "temperature must be 0.0 for reproducible extraction, got {}",
            config.temperature
        )));
    }
    Ok(())
}

/// Build the initial request for `note`.
pub fn llm_request_payload(
    note: &str,
    config: &ExtractionBackendConfig,
) -> Result<ChatRequest, ExtractError> {
    check_config(config)?;
    Ok(ChatRequest {
        model: config.model_name.clone(),
        messages: vec![
            ChatMessage::new("system", system_prompt()),
            ChatMessage::new("user", note),
        ],
        temperature: 0.0,
        response_format: json!({
            "type": "json_schema",
            "json_schema": {
                "name": "clinical_variables",
                "strict": true,
                "schema": output_schema()
            }
        }),
    })
}

/// Pull the assistant message text out of a chat-completions response body.
pub fn parse_chat_completion(body: &str) -> Result<RawExtractionResponse, ExtractError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| ExtractError::Transport(format!("response body is not JSON: {e}")))?;
    if let Some(err) = v.get("error") {
        return Err(ExtractError::Transport(format!("endpoint error: {err}")));
    }
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(|s| RawExtractionResponse(s.to_string()))
        .ok_or_else(|| ExtractError::Transport("response has no choices[0].message.content".into()))
}

/// Why a payload was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum PayloadRejection {
    Schema(Vec<String>),
    Spans(Vec<Violation>),
}

impl PayloadRejection {
    fn describe(&self) -> String {
        match self {
            PayloadRejection::Schema(errs) => errs.join("; "),
            PayloadRejection::Spans(v) => v
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

const FIELDS: [&str; 3] = [
    "steroid_status",
    "bevacizumab_status",
    "radiation_completion_date",
];

fn parse_span(path: &str, v: &Value, errors: &mut Vec<String>) -> Option<EvidenceSpan> {
    if v.is_null() {
        return None;
    }
    let Some(obj) = v.as_object() else {
        errors.push(format!("{path}: evidence must be an object or null"));
        return None;
    };
    if let Some(extra) = obj.keys().find(|k| !["start", "end", "quoted_text"].contains(&k.as_str())) {
        errors.push(format!("{path}: unexpected key {extra:?}"));
    }
    let offset = |key: &str, errors: &mut Vec<String>| match obj.get(key).and_then(Value::as_u64) {
        Some(n) => Some(n as usize),
        None => {
            errors.push(format!("{path}.{key}: expected a non-negative integer"));
            None
        }
    };
    let start = offset("start", errors);
    let end = offset("end", errors);
    let quoted = obj.get("quoted_text").and_then(Value::as_str);
    if quoted.is_none() {
        errors.push(format!("{path}.quoted_text: expected a string"));
    }
    Some(EvidenceSpan {
        start: start?,
        end: end?,
        quoted_text: quoted?.to_string(),
    })
}

/// Validate an untrusted payload against the schema and the note. Never
/// yields out-of-enum values.
pub fn validate_payload(note: &str, raw: &RawExtractionResponse) -> Result<ClinicalVariables, PayloadRejection> {
    let mut errors = Vec::new();
    let value: Value = match serde_json::from_str(raw.0.trim()) {
        Ok(v) => v,
        Err(e) => return Err(PayloadRejection::Schema(vec![format!("not a JSON object: {e}")])),
    };
    let Some(obj) = value.as_object() else {
        return Err(PayloadRejection::Schema(vec!["top level must be a JSON object".into()]));
    };
    for k in obj.keys().filter(|k| !FIELDS.contains(&k.as_str())) {
        errors.push(format!("unexpected key {k:?}"));
    }

    let mut vars = ClinicalVariables::default();
    for (field, var) in FIELDS.iter().zip(Variable::ALL) {
        let Some(entry) = obj.get(*field).and_then(Value::as_object) else {
            errors.push(format!("{field}: missing or not an object"));
            continue;
        };
        if let Some(extra) = entry.keys().find(|k| !["value", "evidence"].contains(&k.as_str())) {
            errors.push(format!("{field}: unexpected key {extra:?}"));
        }
        let span = match entry.get("evidence") {
            Some(ev) => parse_span(&format!("{field}.evidence"), ev, &mut errors),
            None => {
                errors.push(format!("{field}.evidence: missing"));
                None
            }
        };
        let raw_value = entry.get("value");
        match var {
            Variable::SteroidStatus | Variable::BevacizumabStatus => {
                let status = match raw_value.and_then(Value::as_str).map(str::parse::<MedicationStatus>) {
                    Some(Ok(s)) => s,
                    _ => {
                        errors.push(format!(
                            "{field}.value: must be one of \"active\", \"recent\", \"none\", got {}",
                            raw_value.map(Value::to_string).unwrap_or_else(|| "nothing".into())
                        ));
                        continue;
                    }
                };
                if var == Variable::SteroidStatus {
                    vars.steroid_status = status;
                } else {
                    vars.bevacizumab_status = status;
                }
            }
            Variable::RadiationCompletionDate => match raw_value {
                Some(Value::Null) => {}
                Some(Value::String(s)) => match parse_iso_date(s) {
                    Some(d) => vars.radiation_completion_date = Some(d),
                    None => errors.push(format!("{field}.value: {s:?} is not a YYYY-MM-DD date")),
                },
                other => errors.push(format!(
                    "{field}.value: must be a YYYY-MM-DD string or null, got {}",
                    other.map(Value::to_string).unwrap_or_else(|| "nothing".into())
                )),
            },
        }
        vars.evidence.set(var, span);
    }
    if !errors.is_empty() {
        return Err(PayloadRejection::Schema(errors));
    }

    let violations = validate_clinical_variables(&vars, note);
    if !violations.is_empty() {
        return Err(PayloadRejection::Spans(violations));
    }
    Ok(vars)
}

fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    let shape_ok = b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit());
    if !shape_ok {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Extractor backed by a chat transport.
pub struct LlmExtractor<T> {
    config: ExtractionBackendConfig,
    transport: T,
}

impl<T: ChatTransport> LlmExtractor<T> {
    pub fn new(config: ExtractionBackendConfig, transport: T) -> Result<Self, ExtractError> {
        check_config(&config)?;
        Ok(LlmExtractor { config, transport })
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl<T: ChatTransport> Extractor for LlmExtractor<T> {
    fn extract(&self, note: &str) -> Result<ClinicalVariables, ExtractError> {
        if note.trim().is_empty() {
            return Err(ExtractError::EmptyNote);
        }
        let mut request = llm_request_payload(note, &self.config)?;
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            let raw = self.transport.complete(&request)?;
            match validate_payload(note, &raw) {
                Ok(vars) => return Ok(vars),
                Err(rejection) => {
                    tracing::debug!(attempt, reason = %rejection.describe(), "extraction payload rejected");
                    request.messages.push(ChatMessage::new("assistant", raw.0));
                    request.messages.push(ChatMessage::new(
                        "user",
                        format!(
                            "Your previous answer was rejected: {}. Answer again with a single JSON \
                             object that follows the schema, with evidence quoted verbatim from the note.",
                            rejection.describe()
                        ),
                    ));
                    last = Some(rejection);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            PayloadRejection::Schema(errs) => ExtractError::SchemaViolation {
                attempts,
                message: errs.join("; "),
            },
            PayloadRejection::Spans(v) => ExtractError::SpanVerificationFailure(v),
        })
    }
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, ExtractError> {
        if endpoint.trim().is_empty() {
            return Err(ExtractError::Config("endpoint_url is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExtractError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }

    pub fn from_config(config: &ExtractionBackendConfig) -> Result<Self, ExtractError> {
        HttpTransport::new(
            &config.endpoint_url,
            config.api_key.clone(),
            Duration::from_secs(config.timeout_secs),
        )
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<RawExtractionResponse, ExtractError> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ExtractError::Transport(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| ExtractError::Transport(format!("reading response: {e}")))?;
        if !status.is_success() {
            return Err(ExtractError::Transport(format!("HTTP {status}: {body}")));
        }
        parse_chat_completion(&body)
    }
}

/// Replays recorded response bodies in order and keeps every request it
/// was sent.
#[derive(Default)]
pub struct RecordedTransport {
    bodies: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl RecordedTransport {
    pub fn new<I, S>(bodies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RecordedTransport {
            bodies: Mutex::new(bodies.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().clone()
    }
}

impl ChatTransport for RecordedTransport {
    fn complete(&self, request: &ChatRequest) -> Result<RawExtractionResponse, ExtractError> {
        self.requests.lock().push(request.clone());
        let body = self
            .bodies
            .lock()
            .pop_front()
            .ok_or_else(|| ExtractError::Transport("no recorded response left".into()))?;
        parse_chat_completion(&body)
    }
}

/// Wrap assistant text in a minimal chat-completions response body.
pub fn completion_body(content: &str) -> String {
    json!({
        "id": "chatcmpl-recorded",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "finish_reason": "stop",
            "message": {"role": "assistant", "content": content}
        }]
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExtractionBackendConfig {
        ExtractionBackendConfig {
            kind: BackendKind::RemoteLlm,
            endpoint_url: "http://localhost:9/v1/chat/completions".into(),
            model_name: "local-model".into(),
            ..Default::default()
        }
    }

    #[test]
    fn request_embeds_note_and_schema() {
        let note = "Patient continues dexamethasone.";
        let req = llm_request_payload(note, &config()).unwrap();
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.messages[1].content, note);
        assert!(req.messages[0].content.contains("\"steroid_status\""));
        assert!(req.messages[0].content.contains("\"recent\""));
        assert_eq!(req.response_format["json_schema"]["schema"], output_schema());
    }

    #[test]
    fn config_errors() {
        let mut c = config();
        c.model_name = String::new();
        assert!(matches!(llm_request_payload("n", &c), Err(ExtractError::Config(_))));
        let mut c = config();
        c.temperature = 0.7;
        assert!(matches!(llm_request_payload("n", &c), Err(ExtractError::Config(_))));
    }

    #[test]
    fn strict_dates() {
        assert_eq!(parse_iso_date("2023-05-10"), NaiveDate::from_ymd_opt(2023, 5, 10));
        assert_eq!(parse_iso_date("23-05-10"), None);
        assert_eq!(parse_iso_date("2023-5-10"), None);
        assert_eq!(parse_iso_date("2023-02-30"), None);
    }

    #[test]
    fn chat_body_parsing() {
        let body = completion_body("{\"a\":1}");
        assert_eq!(parse_chat_completion(&body).unwrap().0, "{\"a\":1}");
        assert!(matches!(
            parse_chat_completion("{\"error\":{\"message\":\"overloaded\"}}"),
            Err(ExtractError::Transport(_))
        ));
        assert!(parse_chat_completion("<html>").is_err());
    }
}
