//! Shared vocabulary: BT-RADS categories, clinical variables, case records
//! and label parsing.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// A standard BT-RADS category.
///
/// Declaration order is the ordinal order used for weighted agreement
/// statistics (`BT0` has rank 0, `BT4` rank 7).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BtradsCategory {
    #[serde(rename = "BT-0")]
    Bt0,
    #[serde(rename = "BT-1a")]
    Bt1a,
    #[serde(rename = "BT-1b")]
    Bt1b,
    #[serde(rename = "BT-2")]
    Bt2,
    #[serde(rename = "BT-3a")]
    Bt3a,
    #[serde(rename = "BT-3b")]
    Bt3b,
    #[serde(rename = "BT-3c")]
    Bt3c,
    #[serde(rename = "BT-4")]
    Bt4,
}

impl BtradsCategory {
    pub const ALL: [BtradsCategory; 8] = [
        BtradsCategory::Bt0,
        BtradsCategory::Bt1a,
        BtradsCategory::Bt1b,
        BtradsCategory::Bt2,
        BtradsCategory::Bt3a,
        BtradsCategory::Bt3b,
        BtradsCategory::Bt3c,
        BtradsCategory::Bt4,
    ];

    /// The seven categories a scorable follow-up can receive.
    pub const FOLLOW_UP: [BtradsCategory; 7] = [
        BtradsCategory::Bt1a,
        BtradsCategory::Bt1b,
        BtradsCategory::Bt2,
        BtradsCategory::Bt3a,
        BtradsCategory::Bt3b,
        BtradsCategory::Bt3c,
        BtradsCategory::Bt4,
    ];

    pub fn rank(self) -> usize {
        self as usize
    }

    /// Canonical rendering, e.g. `BT-3c`.
    pub fn as_str(self) -> &'static str {
        match self {
            BtradsCategory::Bt0 => "BT-0",
            BtradsCategory::Bt1a => "BT-1a",
            BtradsCategory::Bt1b => "BT-1b",
            BtradsCategory::Bt2 => "BT-2",
            BtradsCategory::Bt3a => "BT-3a",
            BtradsCategory::Bt3b => "BT-3b",
            BtradsCategory::Bt3c => "BT-3c",
            BtradsCategory::Bt4 => "BT-4",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            BtradsCategory::Bt0 => "Baseline / not scorable",
            BtradsCategory::Bt1a => "Imaging improvement",
            BtradsCategory::Bt1b => "Likely treatment effect",
            BtradsCategory::Bt2 => "Stable imaging",
            BtradsCategory::Bt3a => "Favor treatment effect",
            BtradsCategory::Bt3b => "Indeterminate",
            BtradsCategory::Bt3c => "Favor tumor",
            BtradsCategory::Bt4 => "High suspicion for tumor",
        }
    }
}

impl fmt::Display for BtradsCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BtradsCategory {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_btrads_label(s) {
            ObservedLabel::Standard(c) => Ok(c),
            ObservedLabel::NonStandard { raw_text, .. } => {
                Err(DomainError::InvalidCategory(raw_text))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonStandardReason {
    InvalidSubcategory,
    MissingSubcategory,
    Unparseable,
}

/// A label as recorded by a human reader: either a valid category or the
/// raw text of something that is not one.
///
/// Serialized as the label text itself, so `"BT-3"` round-trips to
/// `NonStandard(MissingSubcategory)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ObservedLabel {
    Standard(BtradsCategory),
    NonStandard {
        raw_text: String,
        reason: NonStandardReason,
    },
}

impl ObservedLabel {
    pub fn standard(&self) -> Option<BtradsCategory> {
        match self {
            ObservedLabel::Standard(c) => Some(*c),
            ObservedLabel::NonStandard { .. } => None,
        }
    }

    /// Whether a system prediction agrees with this label. A non-standard
    /// label never agrees with anything.
    pub fn matches(&self, predicted: BtradsCategory) -> bool {
        self.standard() == Some(predicted)
    }
}

impl From<String> for ObservedLabel {
    fn from(s: String) -> Self {
        parse_btrads_label(&s)
    }
}

impl From<ObservedLabel> for String {
    fn from(l: ObservedLabel) -> Self {
        match l {
            ObservedLabel::Standard(c) => c.as_str().to_string(),
            ObservedLabel::NonStandard { raw_text, .. } => raw_text,
        }
    }
}

impl fmt::Display for ObservedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservedLabel::Standard(c) => write!(f, "{c}"),
            ObservedLabel::NonStandard { raw_text, .. } => write!(f, "{raw_text} (non-standard)"),
        }
    }
}

/// Parse a free-text BT-RADS label.
///
/// Accepts an optional `BT`/`BT-` prefix, any case, and stray whitespace or
/// punctuation between the number and the letter (`3-b`, `3 b`).
pub fn parse_btrads_label(raw: &str) -> ObservedLabel {
    let non_standard = |reason| ObservedLabel::NonStandard {
        raw_text: raw.to_string(),
        reason,
    };

    let mut s: String = raw
        .trim()
        .chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '-' | '_' | '.' | ':' | '/'))
        .flat_map(char::to_lowercase)
        .collect();
    if let Some(rest) = s.strip_prefix("btrads") {
        s = rest.to_string();
    } else if let Some(rest) = s.strip_prefix("bt") {
        s = rest.to_string();
    }

    let mut chars = s.chars();
    let Some(digit) = chars.next().and_then(|c| c.to_digit(10)) else {
        return non_standard(NonStandardReason::Unparseable);
    };
    let suffix: String = chars.collect();

    match (digit, suffix.as_str()) {
        (0, "") => ObservedLabel::Standard(BtradsCategory::Bt0),
        (1, "a") => ObservedLabel::Standard(BtradsCategory::Bt1a),
        (1, "b") => ObservedLabel::Standard(BtradsCategory::Bt1b),
        (2, "") => ObservedLabel::Standard(BtradsCategory::Bt2),
        (3, "a") => ObservedLabel::Standard(BtradsCategory::Bt3a),
        (3, "b") => ObservedLabel::Standard(BtradsCategory::Bt3b),
        (3, "c") => ObservedLabel::Standard(BtradsCategory::Bt3c),
        (4, "") => ObservedLabel::Standard(BtradsCategory::Bt4),
        (1 | 3, "") => non_standard(NonStandardReason::MissingSubcategory),
        (0..=4, sub) if sub.len() == 1 && sub.chars().all(|c| c.is_ascii_alphabetic()) => {
            non_standard(NonStandardReason::InvalidSubcategory)
        }
        _ => non_standard(NonStandardReason::Unparseable),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MedicationStatus {
    Active,
    Recent,
    #[default]
    None,
}

impl MedicationStatus {
    pub fn is_present(self) -> bool {
        !matches!(self, MedicationStatus::None)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MedicationStatus::Active => "active",
            MedicationStatus::Recent => "recent",
            MedicationStatus::None => "none",
        }
    }
}

impl FromStr for MedicationStatus {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(MedicationStatus::Active),
            "recent" => Ok(MedicationStatus::Recent),
            "none" => Ok(MedicationStatus::None),
            other => Err(DomainError::InvalidEnum {
                field: "medication_status",
                value: other.to_string(),
            }),
        }
    }
}

/// The three extracted variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    SteroidStatus,
    BevacizumabStatus,
    RadiationCompletionDate,
}

impl Variable {
    pub const ALL: [Variable; 3] = [
        Variable::SteroidStatus,
        Variable::BevacizumabStatus,
        Variable::RadiationCompletionDate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::SteroidStatus => "steroid_status",
            Variable::BevacizumabStatus => "bevacizumab_status",
            Variable::RadiationCompletionDate => "radiation_completion_date",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A verbatim passage of the source note. Offsets count Unicode scalar
/// values, `start` inclusive and `end` exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub start: usize,
    pub end: usize,
    pub quoted_text: String,
}

impl EvidenceSpan {
    /// Build a span from a byte range of `note`.
    pub fn from_byte_range(note: &str, start: usize, end: usize) -> Self {
        let char_start = note[..start].chars().count();
        let quoted = &note[start..end];
        EvidenceSpan {
            start: char_start,
            end: char_start + quoted.chars().count(),
            quoted_text: quoted.to_string(),
        }
    }
}

/// Substring of `text` by character offsets, or `None` when out of bounds.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut bounds = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    let byte_start = bounds.nth(start)?;
    let byte_end = if end == start {
        byte_start
    } else {
        bounds.nth(end - start - 1)?
    };
    Some(&text[byte_start..byte_end])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub steroid_status: Option<EvidenceSpan>,
    pub bevacizumab_status: Option<EvidenceSpan>,
    pub radiation_completion_date: Option<EvidenceSpan>,
}

impl Evidence {
    pub fn get(&self, var: Variable) -> Option<&EvidenceSpan> {
        match var {
            Variable::SteroidStatus => self.steroid_status.as_ref(),
            Variable::BevacizumabStatus => self.bevacizumab_status.as_ref(),
            Variable::RadiationCompletionDate => self.radiation_completion_date.as_ref(),
        }
    }

    pub fn set(&mut self, var: Variable, span: Option<EvidenceSpan>) {
        match var {
            Variable::SteroidStatus => self.steroid_status = span,
            Variable::BevacizumabStatus => self.bevacizumab_status = span,
            Variable::RadiationCompletionDate => self.radiation_completion_date = span,
        }
    }
}

/// Clinical variables extracted from a note.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalVariables {
    pub steroid_status: MedicationStatus,
    pub bevacizumab_status: MedicationStatus,
    /// `None` means the completion date is unknown.
    pub radiation_completion_date: Option<NaiveDate>,
    #[serde(default)]
    pub evidence: Evidence,
    /// Variables for which the note carried contradictory cues.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<Variable>,
}

impl ClinicalVariables {
    /// True when `var` holds something other than its default.
    pub fn is_asserted(&self, var: Variable) -> bool {
        match var {
            Variable::SteroidStatus => self.steroid_status.is_present(),
            Variable::BevacizumabStatus => self.bevacizumab_status.is_present(),
            Variable::RadiationCompletionDate => self.radiation_completion_date.is_some(),
        }
    }

    /// Display value for one variable.
    pub fn value_string(&self, var: Variable) -> String {
        match var {
            Variable::SteroidStatus => self.steroid_status.as_str().to_string(),
            Variable::BevacizumabStatus => self.bevacizumab_status.as_str().to_string(),
            Variable::RadiationCompletionDate => self
                .radiation_completion_date
                .map(|d| d.to_string())
                .unwrap_or_else(|| "unknown".to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A non-default value with no supporting span.
    MissingEvidence { variable: Variable },
    /// Offsets outside the note or `start >= end`.
    SpanOutOfBounds {
        variable: Variable,
        start: usize,
        end: usize,
        note_len: usize,
    },
    /// Offsets valid but the quoted text differs from the note.
    SpanMismatch {
        variable: Variable,
        expected: String,
        quoted: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingEvidence { variable } => {
                write!(f, "{variable}: non-default value without evidence span")
            }
            Violation::SpanOutOfBounds {
                variable,
                start,
                end,
                note_len,
            } => write!(
                f,
                "{variable}: span [{start}, {end}) is not a non-empty range inside a note of {note_len} characters"
            ),
            Violation::SpanMismatch {
                variable,
                expected,
                quoted,
            } => write!(
                f,
                "{variable}: quoted text {quoted:?} does not match note text {expected:?}"
            ),
        }
    }
}

/// Check one span against the note.
pub fn check_span(note: &str, variable: Variable, span: &EvidenceSpan) -> Option<Violation> {
    let note_len = note.chars().count();
    if span.start >= span.end || span.end > note_len {
        return Some(Violation::SpanOutOfBounds {
            variable,
            start: span.start,
            end: span.end,
            note_len,
        });
    }
    let actual = char_slice(note, span.start, span.end).unwrap_or_default();
    if actual != span.quoted_text {
        return Some(Violation::SpanMismatch {
            variable,
            expected: actual.to_string(),
            quoted: span.quoted_text.clone(),
        });
    }
    None
}

/// Report every span and missing-evidence problem in `vars` relative to the
/// note it came from. An empty list means the variables are valid.
pub fn validate_clinical_variables(vars: &ClinicalVariables, note: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    for var in Variable::ALL {
        match vars.evidence.get(var) {
            Some(span) => out.extend(check_span(note, var, span)),
            None if vars.is_asserted(var) => out.push(Violation::MissingEvidence { variable: var }),
            None => {}
        }
    }
    out
}

/// One follow-up examination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    #[serde(default)]
    pub baseline_exam_id: Option<String>,
    #[serde(default)]
    pub baseline_date: Option<NaiveDate>,
    pub followup_date: NaiveDate,
    #[serde(default)]
    pub baseline_flair_ml: Option<f64>,
    pub followup_flair_ml: f64,
    #[serde(default)]
    pub baseline_enh_ml: Option<f64>,
    pub followup_enh_ml: f64,
    pub note_text: String,
    #[serde(default)]
    pub reference_label: Option<ObservedLabel>,
    #[serde(default)]
    pub initial_clinical_label: Option<ObservedLabel>,
}

/// Baseline measurements, present only when a comparison exam exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub date: NaiveDate,
    pub flair_ml: f64,
    pub enh_ml: f64,
}

impl CaseRecord {
    pub fn has_baseline(&self) -> bool {
        self.baseline_exam_id.is_some()
    }

    /// Baseline measurements, if a baseline exam is referenced.
    pub fn baseline(&self) -> Option<Baseline> {
        self.baseline_exam_id.as_ref()?;
        Some(Baseline {
            date: self.baseline_date?,
            flair_ml: self.baseline_flair_ml?,
            enh_ml: self.baseline_enh_ml?,
        })
    }

    pub fn interval_days(&self) -> Option<i64> {
        let b = self.baseline()?;
        Some((self.followup_date - b.date).num_days())
    }

    /// Check the record invariants.
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |field: &'static str, value: f64| DomainError::InvalidVolume { field, value };
        let check = |field, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(bad(field, v))
            }
        };
        if self.case_id.trim().is_empty() {
            return Err(DomainError::InvalidRecord("empty case_id".into()));
        }
        check("followup_flair_ml", self.followup_flair_ml)?;
        check("followup_enh_ml", self.followup_enh_ml)?;
        if let Some(v) = self.baseline_flair_ml {
            check("baseline_flair_ml", v)?;
        }
        if let Some(v) = self.baseline_enh_ml {
            check("baseline_enh_ml", v)?;
        }
        if self.has_baseline() {
            let Some(b) = self.baseline() else {
                return Err(DomainError::InvalidRecord(format!(
                    "{}: baseline exam referenced without baseline date and volumes",
                    self.case_id
                )));
            };
            if self.followup_date < b.date {
                return Err(DomainError::InvalidRecord(format!(
                    "{}: follow-up {} precedes baseline {}",
                    self.case_id, self.followup_date, b.date
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_labels_parse() {
        assert_eq!(
            parse_btrads_label("BT-1a"),
            ObservedLabel::Standard(BtradsCategory::Bt1a)
        );
        assert_eq!(
            parse_btrads_label("3C"),
            ObservedLabel::Standard(BtradsCategory::Bt3c)
        );
        assert_eq!(
            parse_btrads_label("bt4"),
            ObservedLabel::Standard(BtradsCategory::Bt4)
        );
        assert_eq!(
            parse_btrads_label("BT 3-b"),
            ObservedLabel::Standard(BtradsCategory::Bt3b)
        );
        assert_eq!(
            parse_btrads_label("3 b"),
            ObservedLabel::Standard(BtradsCategory::Bt3b)
        );
        assert_eq!(
            parse_btrads_label("0"),
            ObservedLabel::Standard(BtradsCategory::Bt0)
        );
    }

    #[test]
    fn non_standard_labels() {
        let reason = |s| match parse_btrads_label(s) {
            ObservedLabel::NonStandard { reason, raw_text } => {
                assert_eq!(raw_text, s);
                Some(reason)
            }
            _ => None,
        };
        assert_eq!(reason("2b"), Some(NonStandardReason::InvalidSubcategory));
        assert_eq!(reason("4a"), Some(NonStandardReason::InvalidSubcategory));
        assert_eq!(reason("BT-1c"), Some(NonStandardReason::InvalidSubcategory));
        assert_eq!(reason("3"), Some(NonStandardReason::MissingSubcategory));
        assert_eq!(reason("BT-1"), Some(NonStandardReason::MissingSubcategory));
        assert_eq!(reason("stable"), Some(NonStandardReason::Unparseable));
        assert_eq!(reason("5"), Some(NonStandardReason::Unparseable));
        assert_eq!(reason("3ab"), Some(NonStandardReason::Unparseable));
    }

    #[test]
    fn render_then_parse_is_identity() {
        for c in BtradsCategory::ALL {
            assert_eq!(parse_btrads_label(c.as_str()), ObservedLabel::Standard(c));
            assert_eq!(c.as_str().parse::<BtradsCategory>().unwrap(), c);
        }
    }

    #[test]
    fn ranks_follow_listed_order() {
        let ranks: Vec<_> = BtradsCategory::ALL.iter().map(|c| c.rank()).collect();
        assert_eq!(ranks, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn non_standard_never_matches() {
        let l = parse_btrads_label("3");
        for c in BtradsCategory::ALL {
            assert!(!l.matches(c));
            assert_ne!(l, ObservedLabel::Standard(c));
        }
        assert!(parse_btrads_label("BT-2").matches(BtradsCategory::Bt2));
    }

    #[test]
    fn label_serializes_as_text() {
        let l = parse_btrads_label("BT-3");
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, "\"BT-3\"");
        let back: ObservedLabel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
    }

    fn span_for(note: &str, needle: &str) -> EvidenceSpan {
        let b = note.find(needle).unwrap();
        EvidenceSpan::from_byte_range(note, b, b + needle.len())
    }

    #[test]
    fn valid_variables_have_empty_report() {
        let note = "Patient continues dexamethasone 4 mg twice daily.";
        let vars = ClinicalVariables {
            steroid_status: MedicationStatus::Active,
            evidence: Evidence {
                steroid_status: Some(span_for(note, "continues dexamethasone")),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(validate_clinical_variables(&vars, note).is_empty());
    }

    #[test]
    fn mismatched_quote_is_one_violation() {
        let note = "Patient continues dexamethasone 4 mg twice daily.";
        let mut span = span_for(note, "continues dexamethasone");
        span.quoted_text = "continues dexamethasonE".into();
        let vars = ClinicalVariables {
            steroid_status: MedicationStatus::Active,
            evidence: Evidence {
                steroid_status: Some(span),
                ..Default::default()
            },
            ..Default::default()
        };
        let report = validate_clinical_variables(&vars, note);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::SpanMismatch { .. }));
    }

    #[test]
    fn asserted_value_without_span_is_missing_evidence() {
        let vars = ClinicalVariables {
            bevacizumab_status: MedicationStatus::Active,
            ..Default::default()
        };
        let report = validate_clinical_variables(&vars, "on Avastin");
        assert_eq!(
            report,
            vec![Violation::MissingEvidence {
                variable: Variable::BevacizumabStatus
            }]
        );
    }

    #[test]
    fn span_past_end_is_out_of_bounds() {
        let note = "short";
        let span = EvidenceSpan {
            start: 2,
            end: 9,
            quoted_text: "ort".into(),
        };
        assert!(matches!(
            check_span(note, Variable::SteroidStatus, &span),
            Some(Violation::SpanOutOfBounds { note_len: 5, .. })
        ));
    }

    #[test]
    fn char_offsets_handle_multibyte_text() {
        let note = "Pt ≥ 60 yo, on Avastin.";
        let span = span_for(note, "on Avastin");
        assert_eq!(span.start, 12);
        assert_eq!(char_slice(note, span.start, span.end), Some("on Avastin"));
        assert!(check_span(note, Variable::BevacizumabStatus, &span).is_none());
        assert_eq!(char_slice(note, 0, 0), Some(""));
        assert_eq!(char_slice(note, 3, 99), None);
    }

    #[test]
    fn record_validation() {
        let mut rec = CaseRecord {
            case_id: "c1".into(),
            baseline_exam_id: Some("b1".into()),
            baseline_date: NaiveDate::from_ymd_opt(2023, 1, 1),
            followup_date: NaiveDate::from_ymd_opt(2023, 3, 1).unwrap(),
            baseline_flair_ml: Some(10.0),
            followup_flair_ml: 11.0,
            baseline_enh_ml: Some(2.0),
            followup_enh_ml: 2.0,
            note_text: "note".into(),
            reference_label: None,
            initial_clinical_label: None,
        };
        assert!(rec.validate().is_ok());
        assert_eq!(rec.interval_days(), Some(59));
        rec.followup_enh_ml = -1.0;
        assert!(matches!(rec.validate(), Err(DomainError::InvalidVolume { .. })));
        rec.followup_enh_ml = f64::NAN;
        assert!(rec.validate().is_err());
        rec.followup_enh_ml = 1.0;
        rec.followup_date = NaiveDate::from_ymd_opt(2022, 12, 1).unwrap();
        assert!(matches!(rec.validate(), Err(DomainError::InvalidRecord(_))));
    }
}
