//! Per-case orchestration: extraction, volumetrics, cross-checks and scoring,
//! plus batch runs with eligibility accounting.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{CaseRecord, ClinicalVariables, ObservedLabel, Variable};
use crate::evalstats::ErrorAttribution;
use crate::evaluation::{evaluate_reports, BatchEvaluationReport, Exclusion, ExclusionReason};
use crate::error::{ExtractError, PipelineError};
use crate::extractor::{build_extractor, ExtractionBackendConfig, Extractor};
use crate::scorer::{radiation_window_status_with, score_case, RadiationWindowStatus, ScoreResult, ScoringPolicy};
use crate::volumetrics::{compute_case_volumetrics, read_volume_table, Thresholds, VolumeRow, VolumetricChange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EligibilityRules {
    pub exclude_no_baseline: bool,
    /// Longest accepted baseline-to-follow-up interval in days.
    pub max_baseline_interval_days: Option<i64>,
    pub exclude_qc_failures: bool,
}

impl Default for EligibilityRules {
    fn default() -> Self {
        EligibilityRules {
            exclude_no_baseline: true,
            max_baseline_interval_days: Some(183),
            exclude_qc_failures: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: ExtractionBackendConfig,
    pub eligibility: EligibilityRules,
    pub thresholds: Thresholds,
    pub policy: ScoringPolicy,
    /// CSV of `exam_id,flair_ml,enh_ml,qc_pass`, keyed by case id or
    /// baseline exam id.
    pub volumetrics_table: Option<PathBuf>,
    /// JSON lines of error attributions keyed by case id.
    pub attributions: Option<PathBuf>,
    pub bootstrap_resamples: Option<usize>,
    pub bootstrap_seed: Option<u64>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Load a TOML config; relative table paths resolve against the
    /// config's directory. Backend settings left empty are filled from the
    /// environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.volumetrics_table, &mut cfg.attributions].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.backend = cfg.backend.with_env_overrides();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    RadiationAfterFollowup,
    MedicationTextConflict,
    ZeroBaselineCompartment,
    QcExcluded,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConflictFlag {
    pub kind: ConflictKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Scored,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transport,
    SchemaViolation,
    SpanVerification,
    EmptyNote,
    Config,
    InvalidRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&ExtractError> for CaseFailure {
    fn from(e: &ExtractError) -> Self {
        let kind = match e {
            ExtractError::Config(_) => FailureKind::Config,
            ExtractError::Transport(_) => FailureKind::Transport,
            ExtractError::SchemaViolation { .. } => FailureKind::SchemaViolation,
            ExtractError::SpanVerificationFailure(_) => FailureKind::SpanVerification,
            ExtractError::EmptyNote => FailureKind::EmptyNote,
        };
        CaseFailure {
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub status: CaseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<CaseFailure>,
    pub followup_date: NaiveDate,
    #[serde(default)]
    pub baseline_interval_days: Option<i64>,
    pub variables: Option<ClinicalVariables>,
    pub volumetrics: Option<VolumetricChange>,
    pub radiation_window: RadiationWindowStatus,
    pub score: Option<ScoreResult>,
    #[serde(default)]
    pub conflicts: Vec<ConflictFlag>,
    pub reference_label: Option<ObservedLabel>,
    pub initial_clinical_label: Option<ObservedLabel>,
    /// Present iff a reference label is present.
    pub correct_vs_reference: Option<bool>,
    pub initial_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<ErrorAttribution>,
}

impl CaseReport {
    pub fn category(&self) -> Option<crate::domain::BtradsCategory> {
        self.score.as_ref().map(|s| s.category)
    }

    pub fn has_conflict(&self, kind: ConflictKind) -> bool {
        self.conflicts.iter().any(|c| c.kind == kind)
    }

    /// Reference and initial-label agreement, filled from the labels.
    pub fn refresh_correctness(&mut self) {
        let predicted = self.category();
        self.correct_vs_reference = self
            .reference_label
            .as_ref()
            .map(|r| predicted.is_some_and(|p| r.matches(p)));
        self.initial_correct = match (&self.reference_label, &self.initial_clinical_label) {
            (Some(r), Some(i)) => Some(matches!((r.standard(), i.standard()), (Some(a), Some(b)) if a == b)),
            _ => None,
        };
    }
}

/// Conflicts between the extracted variables and the case record.
pub fn cross_check(vars: &ClinicalVariables, case: &CaseRecord) -> Vec<ConflictFlag> {
    let mut out = Vec::new();
    if let Some(d) = vars.radiation_completion_date {
        if d > case.followup_date {
            out.push(ConflictFlag {
                kind: ConflictKind::RadiationAfterFollowup,
                detail: format!(
                    "radiation completion {d} is after follow-up {}; window treated as unknown",
                    case.followup_date
                ),
            });
        }
    }
    for v in &vars.conflicts {
        if matches!(v, Variable::SteroidStatus | Variable::BevacizumabStatus) {
            out.push(ConflictFlag {
                kind: ConflictKind::MedicationTextConflict,
                detail: format!("note carries conflicting {} cues; later cue used", v.as_str()),
            });
        }
    }
    let zero: Vec<&str> = [("flair", case.baseline_flair_ml), ("enhancement", case.baseline_enh_ml)]
        .into_iter()
        .filter(|(_, v)| case.has_baseline() && *v == Some(0.0))
        .map(|(n, _)| n)
        .collect();
    if !zero.is_empty() {
        out.push(ConflictFlag {
            kind: ConflictKind::ZeroBaselineCompartment,
            detail: format!("baseline {} volume is 0", zero.join(" and ")),
        });
    }
    out
}

fn failed_report(case: &CaseRecord, failure: CaseFailure, conflicts: Vec<ConflictFlag>) -> CaseReport {
    let mut r = CaseReport {
        case_id: case.case_id.clone(),
        status: CaseStatus::Failed,
        failure: Some(failure),
        followup_date: case.followup_date,
        baseline_interval_days: case.interval_days(),
        variables: None,
        volumetrics: None,
        radiation_window: RadiationWindowStatus::UNKNOWN,
        score: None,
        conflicts,
        reference_label: case.reference_label.clone(),
        initial_clinical_label: case.initial_clinical_label.clone(),
        correct_vs_reference: None,
        initial_correct: None,
        attribution: None,
    };
    r.refresh_correctness();
    r
}

/// Score already-extracted variables against a case.
pub fn score_with_variables(
    case: &CaseRecord,
    vars: ClinicalVariables,
    config: &PipelineConfig,
    mut conflicts: Vec<ConflictFlag>,
) -> CaseReport {
    let volumetrics = match compute_case_volumetrics(case, &config.thresholds) {
        Ok(v) => v,
        Err(e) => {
            let failure = CaseFailure {
                kind: FailureKind::InvalidRecord,
                message: e.to_string(),
            };
            return failed_report(case, failure, conflicts);
        }
    };
    conflicts.extend(cross_check(&vars, case));
    conflicts.sort();
    conflicts.dedup();
    let window = radiation_window_status_with(
        vars.radiation_completion_date,
        case.followup_date,
        config.thresholds.radiation_window_days,
    );
    let score = score_case(volumetrics.as_ref(), &vars, window, config.policy);
    let mut r = CaseReport {
        case_id: case.case_id.clone(),
        status: CaseStatus::Scored,
        failure: None,
        followup_date: case.followup_date,
        baseline_interval_days: case.interval_days(),
        variables: Some(vars),
        volumetrics,
        radiation_window: window,
        score: Some(score),
        conflicts,
        reference_label: case.reference_label.clone(),
        initial_clinical_label: case.initial_clinical_label.clone(),
        correct_vs_reference: None,
        initial_correct: None,
        attribution: None,
    };
    r.refresh_correctness();
    r
}

pub fn run_case(case: &CaseRecord, config: &PipelineConfig, extractor: &dyn Extractor) -> CaseReport {
    if let Err(e) = case.validate() {
        let failure = CaseFailure {
            kind: FailureKind::InvalidRecord,
            message: e.to_string(),
        };
        return failed_report(case, failure, Vec::new());
    }
    match extractor.extract(&case.note_text) {
        Ok(vars) => score_with_variables(case, vars, config, Vec::new()),
        Err(e) => {
            tracing::warn!(case_id = %case.case_id, error = %e, "extraction failed");
            failed_report(case, CaseFailure::from(&e), Vec::new())
        }
    }
}

/// QC status per exam id from a volume table.
pub fn qc_index(rows: &[VolumeRow]) -> HashMap<String, bool> {
    rows.iter().map(|r| (r.exam_id.clone(), r.qc_pass)).collect()
}

fn qc_failed(case: &CaseRecord, qc: &HashMap<String, bool>) -> bool {
    let bad = |id: &str| qc.get(id) == Some(&false);
    bad(&case.case_id) || case.baseline_exam_id.as_deref().is_some_and(bad)
}

/// Eligibility decision for one case.
pub fn eligibility(case: &CaseRecord, rules: &EligibilityRules, qc: &HashMap<String, bool>) -> Option<ExclusionReason> {
    if rules.exclude_no_baseline {
        if case.baseline().is_none() {
            return Some(ExclusionReason::NoBaseline);
        }
        if let (Some(max), Some(days)) = (rules.max_baseline_interval_days, case.interval_days()) {
            if days > max {
                return Some(ExclusionReason::BaselineIntervalExceeded);
            }
        }
    }
    if rules.exclude_qc_failures && qc_failed(case, qc) {
        return Some(ExclusionReason::QcFailed);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub reports: Vec<CaseReport>,
    pub evaluation: BatchEvaluationReport,
}

/// A configured pipeline with its extractor and side tables loaded.
pub struct Pipeline {
    pub config: PipelineConfig,
    extractor: Box<dyn Extractor>,
    qc: HashMap<String, bool>,
    attributions: BTreeMap<String, ErrorAttribution>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let extractor = build_extractor(&config.backend)?;
        Self::with_extractor(config, extractor)
    }

    pub fn with_extractor(config: PipelineConfig, extractor: Box<dyn Extractor>) -> Result<Self, PipelineError> {
        let qc = match &config.volumetrics_table {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| PipelineError::io(p, e))?;
                let rows = read_volume_table(f).map_err(|e| PipelineError::Parse {
                    path: p.display().to_string(),
                    line: e.position().map_or(0, |pos| pos.line() as usize),
                    message: e.to_string(),
                })?;
                qc_index(&rows)
            }
            None => HashMap::new(),
        };
        let attributions = match &config.attributions {
            Some(p) => read_jsonl::<ErrorAttribution>(p)?
                .into_iter()
                .map(|a| (a.case_id.clone(), a))
                .collect(),
            None => BTreeMap::new(),
        };
        Ok(Pipeline {
            config,
            extractor,
            qc,
            attributions,
        })
    }

    pub fn extractor(&self) -> &dyn Extractor {
        self.extractor.as_ref()
    }

    pub fn run_case(&self, case: &CaseRecord) -> CaseReport {
        let mut r = run_case(case, &self.config, self.extractor.as_ref());
        if !self.config.eligibility.exclude_qc_failures && qc_failed(case, &self.qc) {
            r.conflicts.push(ConflictFlag {
                kind: ConflictKind::QcExcluded,
                detail: "volumetric QC failed; scored because QC exclusion is disabled".into(),
            });
            r.conflicts.sort();
        }
        if r.correct_vs_reference == Some(false) {
            r.attribution = self.attributions.get(&r.case_id).cloned();
        }
        r
    }

    /// Score every eligible case in input order. Per-case failures are kept
    /// as failed reports.
    pub fn run_batch(&self, cases: &[CaseRecord]) -> Result<BatchOutput, PipelineError> {
        let mut exclusions = Vec::new();
        let mut eligible = Vec::new();
        for c in cases {
            match eligibility(c, &self.config.eligibility, &self.qc) {
                Some(reason) => exclusions.push(Exclusion {
                    case_id: c.case_id.clone(),
                    reason,
                }),
                None => eligible.push(c),
            }
        }
        if eligible.is_empty() {
            return Err(PipelineError::EmptyCohort);
        }
        let reports: Vec<CaseReport> = eligible.par_iter().map(|c| self.run_case(c)).collect();
        let evaluation = evaluate_reports(&reports, &exclusions, cases.len() as u64, &self.config)?;
        Ok(BatchOutput { reports, evaluation })
    }
}

pub fn run_batch(cases: &[CaseRecord], config: &PipelineConfig) -> Result<BatchOutput, PipelineError> {
    Pipeline::new(config.clone())?.run_batch(cases)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, PipelineError> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    parse_jsonl(BufReader::new(f), &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R, name: &str) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
            path: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| PipelineError::Validation(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Load cases and check each record.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>, PipelineError> {
    let cases: Vec<CaseRecord> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for c in &cases {
        c.validate()?;
        if !seen.insert(c.case_id.as_str()) {
            return Err(PipelineError::Validation(format!("duplicate case_id {}", c.case_id)));
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BtradsCategory, MedicationStatus};
    use crate::extractor::PatternExtractor;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn case(id: &str, note: &str, bf: f64, ff: f64, be: f64, fe: f64) -> CaseRecord {
        CaseRecord {
            case_id: id.into(),
            baseline_exam_id: Some(format!("{id}-b")),
            baseline_date: Some(d("2024-01-01")),
            followup_date: d("2024-03-01"),
            baseline_flair_ml: Some(bf),
            followup_flair_ml: ff,
            baseline_enh_ml: Some(be),
            followup_enh_ml: fe,
            note_text: note.into(),
            reference_label: None,
            initial_clinical_label: None,
        }
    }

    const OLD_RT: &str = "Completed chemoradiation on 2022-06-01. Not on steroids.";

    #[test]
    fn major_progression_case() {
        let mut c = case("a", OLD_RT, 10.0, 33.1, 4.0, 11.48);
        c.reference_label = Some(ObservedLabel::Standard(BtradsCategory::Bt4));
        let r = run_case(&c, &PipelineConfig::default(), &PatternExtractor);
        assert_eq!(r.category(), Some(BtradsCategory::Bt4));
        assert_eq!(r.correct_vs_reference, Some(true));
        assert!(r.conflicts.is_empty());
    }

    #[test]
    fn no_baseline_scores_bt0_when_not_excluded() {
        let mut c = case("b", OLD_RT, 1.0, 1.0, 1.0, 1.0);
        c.baseline_exam_id = None;
        let r = run_case(&c, &PipelineConfig::default(), &PatternExtractor);
        assert_eq!(r.category(), Some(BtradsCategory::Bt0));
        assert!(r.volumetrics.is_none());
        assert_eq!(r.correct_vs_reference, None);
    }

    #[test]
    fn radiation_after_followup_flags_and_unknown_window() {
        let c = case("c", "Radiation therapy completed 2024-09-01.", 10.0, 10.0, 2.0, 2.0);
        let r = run_case(&c, &PipelineConfig::default(), &PatternExtractor);
        assert!(r.has_conflict(ConflictKind::RadiationAfterFollowup));
        assert_eq!(r.radiation_window, RadiationWindowStatus::UNKNOWN);
    }

    #[test]
    fn cross_check_examples() {
        let c = case("d", "", 10.0, 10.0, 0.0, 2.0);
        let flags = cross_check(&ClinicalVariables::default(), &c);
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].kind, ConflictKind::ZeroBaselineCompartment);
        let c = case("e", "", 10.0, 10.0, 1.0, 2.0);
        assert!(cross_check(&ClinicalVariables::default(), &c).is_empty());
        let vars = ClinicalVariables {
            steroid_status: MedicationStatus::Recent,
            conflicts: vec![Variable::SteroidStatus],
            ..Default::default()
        };
        assert_eq!(cross_check(&vars, &c)[0].kind, ConflictKind::MedicationTextConflict);
    }

    #[test]
    fn extraction_failure_is_kept_as_failed_report() {
        let mut c = case("f", "   ", 10.0, 10.0, 1.0, 1.0);
        c.reference_label = Some(ObservedLabel::Standard(BtradsCategory::Bt2));
        let r = run_case(&c, &PipelineConfig::default(), &PatternExtractor);
        assert_eq!(r.status, CaseStatus::Failed);
        assert_eq!(r.failure.as_ref().unwrap().kind, FailureKind::EmptyNote);
        assert_eq!(r.correct_vs_reference, Some(false));
    }

    #[test]
    fn batch_accounting_and_empty_cohort() {
        let mut no_base = case("n", OLD_RT, 1.0, 1.0, 1.0, 1.0);
        no_base.baseline_exam_id = None;
        let mut long = case("l", OLD_RT, 1.0, 1.0, 1.0, 1.0);
        long.baseline_date = Some(d("2023-01-01"));
        let ok = case("o", OLD_RT, 10.0, 10.0, 1.0, 1.0);
        let cfg = PipelineConfig::default();
        let out = run_batch(&[no_base.clone(), long.clone(), ok], &cfg).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.evaluation.cohort.n_input, 3);
        assert_eq!(out.evaluation.cohort.n_excluded(), 2);
        assert!(matches!(run_batch(&[no_base, long], &cfg), Err(PipelineError::EmptyCohort)));
    }

    #[test]
    fn all_correct_batch() {
        let mut cases = Vec::new();
        for (i, (ff, cat)) in [(10.0, BtradsCategory::Bt2), (5.0, BtradsCategory::Bt1a), (30.0, BtradsCategory::Bt4)]
            .into_iter()
            .enumerate()
        {
            let mut c = case(&format!("k{i}"), OLD_RT, 10.0, ff, 2.0, ff / 5.0);
            c.reference_label = Some(ObservedLabel::Standard(cat));
            cases.push(c);
        }
        let out = run_batch(&cases, &PipelineConfig::default()).unwrap();
        assert_eq!(out.evaluation.system_accuracy.proportion, Some(1.0));
    }

    #[test]
    fn config_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            volumetrics_table: Some("volumes.csv".into()),
            ..Default::default()
        };
        let p = dir.path().join("config.toml");
        fs::write(&p, cfg.to_toml_string()).unwrap();
        let loaded = PipelineConfig::load(&p).unwrap();
        assert_eq!(loaded.volumetrics_table, Some(dir.path().join("volumes.csv")));
        assert_eq!(loaded.thresholds, Thresholds::default());
        assert!(PipelineConfig::from_toml_str("thresholds = 3").is_err());
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let text = "{\"case_id\":\"x\",\"cause\":\"extraction_error\"}\n\nnot json\n";
        let err = parse_jsonl::<ErrorAttribution, _>(text.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, PipelineError::Parse { line: 3, .. }));
    }
}
