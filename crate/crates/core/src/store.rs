//! File-backed case store: one current-state file per case and an
//! append-only audit log shared by all cases.
//!
//! ```text
//! <dir>/config.json        pipeline config used for rescoring
//! <dir>/cases/<id>.json    StoredCase
//! <dir>/audit.jsonl        AuditEvent, one per line
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{validate_clinical_variables, BtradsCategory, CaseRecord, ClinicalVariables, Variable, Violation};
use crate::error::PipelineError;
use crate::pipeline::{read_jsonl, score_with_variables, CaseReport, PipelineConfig};
use crate::scorer::{RadiationWindowStatus, ScoreResult};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock returning a settable instant.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(t: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(t))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock() = t;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    System,
    Reviewer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Scored,
    VariablesEdited,
    Rescored,
    Overridden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub case_id: String,
    pub actor: Actor,
    pub action: AuditAction,
    pub summary: String,
    pub payload: Value,
}

/// Reviewer-side state, kept alongside the untouched system result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewerState {
    pub variables: Option<ClinicalVariables>,
    #[serde(default)]
    pub reviewer_asserted: Vec<Variable>,
    pub rescore: Option<ScoreResult>,
    pub override_category: Option<BtradsCategory>,
    pub override_variables: Option<ClinicalVariables>,
    pub override_reason: Option<String>,
    #[serde(default)]
    pub override_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCase {
    pub record: CaseRecord,
    pub report: CaseReport,
    #[serde(default)]
    pub reviewer: ReviewerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreRequest {
    pub case_id: String,
    pub edited_variables: ClinicalVariables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub system_category: Option<BtradsCategory>,
    pub rescored_category: BtradsCategory,
    pub category_changed: bool,
    /// First trace step where the rescored trace departs from the system's.
    pub first_divergence: Option<usize>,
    pub radiation_window: RadiationWindowStatus,
    pub reviewer_asserted: Vec<Variable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreOutcome {
    pub score: ScoreResult,
    pub delta: ReportDelta,
    pub event: AuditEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRequest {
    #[serde(default)]
    pub reviewer_variables: Option<ClinicalVariables>,
    #[serde(default)]
    pub reviewer_category: Option<BtradsCategory>,
    pub reason: String,
}

struct AuditLog {
    path: PathBuf,
    next_seq: u64,
    last_ts: HashMap<String, DateTime<Utc>>,
}

pub struct CaseStore {
    dir: PathBuf,
    config: PipelineConfig,
    clock: Arc<dyn Clock>,
    cases: RwLock<BTreeMap<String, StoredCase>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    audit: Mutex<AuditLog>,
}

fn valid_case_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

impl CaseStore {
    /// Create (or reuse) a store directory with the given config.
    pub fn create(dir: impl AsRef<Path>, config: PipelineConfig) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("cases")).map_err(|e| PipelineError::io(dir, e))?;
        let cfg_bytes = serde_json::to_vec_pretty(&config).map_err(|e| PipelineError::Config(e.to_string()))?;
        write_atomic(&dir.join("config.json"), &cfg_bytes)?;
        Self::open_with_clock(dir, Arc::new(SystemClock))
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::open_with_clock(dir, Arc::new(SystemClock))
    }

    pub fn open_with_clock(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref().to_path_buf();
        let cfg_path = dir.join("config.json");
        let config: PipelineConfig = match fs::read(&cfg_path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| PipelineError::Config(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => PipelineConfig::default(),
            Err(e) => return Err(PipelineError::io(&cfg_path, e)),
        };
        let cases_dir = dir.join("cases");
        fs::create_dir_all(&cases_dir).map_err(|e| PipelineError::io(&cases_dir, e))?;
        let mut cases = BTreeMap::new();
        for entry in fs::read_dir(&cases_dir).map_err(|e| PipelineError::io(&cases_dir, e))? {
            let path = entry.map_err(|e| PipelineError::io(&cases_dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            let c: StoredCase = serde_json::from_slice(&bytes).map_err(|e| PipelineError::Parse {
                path: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            cases.insert(c.record.case_id.clone(), c);
        }
        let audit_path = dir.join("audit.jsonl");
        let events: Vec<AuditEvent> = if audit_path.exists() { read_jsonl(&audit_path)? } else { Vec::new() };
        let mut last_ts = HashMap::new();
        for e in &events {
            last_ts.insert(e.case_id.clone(), e.timestamp);
        }
        let next_seq = events.last().map_or(1, |e| e.seq + 1);
        Ok(CaseStore {
            dir,
            config,
            clock,
            cases: RwLock::new(cases),
            locks: Mutex::new(HashMap::new()),
            audit: Mutex::new(AuditLog {
                path: audit_path,
                next_seq,
                last_ts,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn case_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_string()).or_default().clone()
    }

    fn persist(&self, case: &StoredCase) -> Result<(), PipelineError> {
        let path = self.dir.join("cases").join(format!("{}.json", case.record.case_id));
        let bytes = serde_json::to_vec_pretty(case).map_err(|e| PipelineError::Validation(e.to_string()))?;
        write_atomic(&path, &bytes)
    }

    fn append_event(
        &self,
        case_id: &str,
        actor: Actor,
        action: AuditAction,
        summary: String,
        payload: Value,
    ) -> Result<AuditEvent, PipelineError> {
        let mut log = self.audit.lock();
        let mut ts = self.clock.now();
        if let Some(prev) = log.last_ts.get(case_id) {
            ts = ts.max(*prev);
        }
        let event = AuditEvent {
            seq: log.next_seq,
            timestamp: ts,
            case_id: case_id.to_string(),
            actor,
            action,
            summary,
            payload,
        };
        let mut line = serde_json::to_vec(&event).map_err(|e| PipelineError::Validation(e.to_string()))?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log.path)
            .map_err(|e| PipelineError::io(&log.path, e))?;
        f.write_all(&line).map_err(|e| PipelineError::io(&log.path, e))?;
        log.next_seq += 1;
        log.last_ts.insert(case_id.to_string(), ts);
        Ok(event)
    }

    /// Store a system result, replacing any earlier system result for the
    /// case while keeping reviewer state.
    pub fn put_scored(&self, record: CaseRecord, report: CaseReport) -> Result<AuditEvent, PipelineError> {
        if !valid_case_id(&record.case_id) {
            return Err(PipelineError::Validation(format!("case_id {:?} is not storable", record.case_id)));
        }
        if record.case_id != report.case_id {
            return Err(PipelineError::Validation("record and report case_id differ".into()));
        }
        let id = record.case_id.clone();
        let lock = self.case_lock(&id);
        let _g = lock.lock();
        let reviewer = self.cases.read().get(&id).map(|c| c.reviewer.clone()).unwrap_or_default();
        let stored = StoredCase {
            record,
            report,
            reviewer,
        };
        self.persist(&stored)?;
        let category = stored.report.category().map(|c| c.as_str().to_string());
        let summary = match &category {
            Some(c) => format!("system scored {c}"),
            None => "system scoring failed".to_string(),
        };
        let event = self.append_event(&id, Actor::System, AuditAction::Scored, summary, json!({ "category": category }))?;
        self.cases.write().insert(id, stored);
        Ok(event)
    }

    pub fn import(&self, records: &[CaseRecord], reports: &[CaseReport]) -> Result<usize, PipelineError> {
        let by_id: HashMap<&str, &CaseRecord> = records.iter().map(|r| (r.case_id.as_str(), r)).collect();
        let mut n = 0;
        for rep in reports {
            let rec = by_id
                .get(rep.case_id.as_str())
                .ok_or_else(|| PipelineError::NotFound(rep.case_id.clone()))?;
            self.put_scored((*rec).clone(), rep.clone())?;
            n += 1;
        }
        Ok(n)
    }

    pub fn get(&self, id: &str) -> Result<StoredCase, PipelineError> {
        self.cases.read().get(id).cloned().ok_or_else(|| PipelineError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.cases.read().contains_key(id)
    }

    /// All cases ordered by case id.
    pub fn list(&self) -> Vec<StoredCase> {
        self.cases.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.cases.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn system_reports(&self) -> Vec<CaseReport> {
        self.cases.read().values().map(|c| c.report.clone()).collect()
    }

    pub fn record_override(&self, case_id: &str, req: OverrideRequest) -> Result<AuditEvent, PipelineError> {
        if req.reason.trim().is_empty() {
            return Err(PipelineError::Validation("override reason is required".into()));
        }
        let lock = self.case_lock(case_id);
        let _g = lock.lock();
        let mut stored = self.get(case_id)?;
        if let Some(v) = &req.reviewer_variables {
            check_reviewer_variables(v, &stored.record.note_text)?;
        }
        apply_override(&mut stored.reviewer, &req);
        self.persist(&stored)?;
        let system = stored.report.category().map_or("none", |c| c.as_str());
        let summary = match req.reviewer_category {
            Some(c) => format!("override {system} -> {}: {}", c.as_str(), req.reason),
            None => format!("override variables on {system}: {}", req.reason),
        };
        let payload = serde_json::to_value(&req).map_err(|e| PipelineError::Validation(e.to_string()))?;
        let event = self.append_event(case_id, Actor::Reviewer, AuditAction::Overridden, summary, payload)?;
        self.cases.write().insert(case_id.to_string(), stored);
        Ok(event)
    }

    /// Recompute the score with reviewer-edited variables. The stored system
    /// result is left as it was.
    pub fn rescore_with_edits(&self, req: RescoreRequest) -> Result<RescoreOutcome, PipelineError> {
        let lock = self.case_lock(&req.case_id);
        let _g = lock.lock();
        let mut stored = self.get(&req.case_id)?;
        if stored.record.baseline().is_none() {
            return Err(PipelineError::Validation(format!("case {} has no volumetrics to rescore", req.case_id)));
        }
        let asserted = check_reviewer_variables(&req.edited_variables, &stored.record.note_text)?;
        let report = score_with_variables(&stored.record, req.edited_variables.clone(), &self.config, Vec::new());
        let Some(score) = report.score.clone() else {
            let msg = report.failure.map(|f| f.message).unwrap_or_default();
            return Err(PipelineError::Validation(msg));
        };
        let delta = ReportDelta {
            system_category: stored.report.category(),
            rescored_category: score.category,
            category_changed: stored.report.category() != Some(score.category),
            first_divergence: stored.report.score.as_ref().and_then(|s| s.trace.first_divergence(&score.trace)),
            radiation_window: report.radiation_window,
            reviewer_asserted: asserted.clone(),
        };
        stored.reviewer.variables = Some(req.edited_variables.clone());
        stored.reviewer.reviewer_asserted = asserted.clone();
        stored.reviewer.rescore = Some(score.clone());
        self.persist(&stored)?;
        let summary = format!(
            "rescored {} -> {}",
            delta.system_category.map_or("none", |c| c.as_str()),
            score.category.as_str()
        );
        let payload = json!({
            "variables": req.edited_variables,
            "reviewer_asserted": asserted,
            "score": score,
        });
        let event = self.append_event(&req.case_id, Actor::Reviewer, AuditAction::Rescored, summary, payload)?;
        self.cases.write().insert(req.case_id.clone(), stored);
        Ok(RescoreOutcome { score, delta, event })
    }

    /// Audit events in append order, optionally for one case.
    pub fn audit_events(&self, case_id: Option<&str>) -> Result<Vec<AuditEvent>, PipelineError> {
        let path = self.audit.lock().path.clone();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let events: Vec<AuditEvent> = read_jsonl(&path)?;
        Ok(events
            .into_iter()
            .filter(|e| case_id.is_none_or(|id| e.case_id == id))
            .collect())
    }

    pub fn reviewer_states(&self) -> BTreeMap<String, ReviewerState> {
        self.cases
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.reviewer.clone()))
            .collect()
    }
}

/// Spans that are present must verify; absent spans on asserted values
/// mark the variable as reviewer-asserted.
fn check_reviewer_variables(vars: &ClinicalVariables, note: &str) -> Result<Vec<Variable>, PipelineError> {
    let mut asserted = Vec::new();
    let mut bad = Vec::new();
    for v in validate_clinical_variables(vars, note) {
        match v {
            Violation::MissingEvidence { variable } => asserted.push(variable),
            other => bad.push(other.to_string()),
        }
    }
    if bad.is_empty() {
        Ok(asserted)
    } else {
        Err(PipelineError::Validation(bad.join("; ")))
    }
}

fn apply_override(state: &mut ReviewerState, req: &OverrideRequest) {
    state.override_category = req.reviewer_category;
    state.override_variables = req.reviewer_variables.clone();
    state.override_reason = Some(req.reason.clone());
    state.override_count += 1;
}

/// Rebuild reviewer state from audit events alone.
pub fn replay(events: &[AuditEvent]) -> Result<BTreeMap<String, ReviewerState>, PipelineError> {
    let mut out: BTreeMap<String, ReviewerState> = BTreeMap::new();
    let bad = |e: serde_json::Error| PipelineError::Validation(format!("unreadable audit payload: {e}"));
    for e in events {
        let state = out.entry(e.case_id.clone()).or_default();
        match e.action {
            AuditAction::Scored | AuditAction::VariablesEdited => {}
            AuditAction::Rescored => {
                #[derive(Deserialize)]
                struct P {
                    variables: ClinicalVariables,
                    reviewer_asserted: Vec<Variable>,
                    score: ScoreResult,
                }
                let p: P = serde_json::from_value(e.payload.clone()).map_err(bad)?;
                state.variables = Some(p.variables);
                state.reviewer_asserted = p.reviewer_asserted;
                state.rescore = Some(p.score);
            }
            AuditAction::Overridden => {
                let req: OverrideRequest = serde_json::from_value(e.payload.clone()).map_err(bad)?;
                apply_override(state, &req);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EvidenceSpan, MedicationStatus};
    use crate::extractor::PatternExtractor;
    use crate::pipeline::run_case;
    use chrono::{NaiveDate, TimeZone};

    const NOTE: &str = "Completed chemoradiation on 2022-06-01. No steroids.";

    fn record(id: &str, ff: f64, fe: f64) -> CaseRecord {
        CaseRecord {
            case_id: id.into(),
            baseline_exam_id: Some(format!("{id}-b")),
            baseline_date: NaiveDate::from_ymd_opt(2024, 1, 1),
            followup_date: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
            baseline_flair_ml: Some(10.0),
            followup_flair_ml: ff,
            baseline_enh_ml: Some(2.0),
            followup_enh_ml: fe,
            note_text: NOTE.into(),
            reference_label: None,
            initial_clinical_label: None,
        }
    }

    fn store_with(dir: &Path, clock: Arc<dyn Clock>, records: &[CaseRecord]) -> CaseStore {
        CaseStore::create(dir, PipelineConfig::default()).unwrap();
        let s = CaseStore::open_with_clock(dir, clock).unwrap();
        for r in records {
            let rep = run_case(r, s.config(), &PatternExtractor);
            s.put_scored(r.clone(), rep).unwrap();
        }
        s
    }

    fn t(h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 1, 1, h, 0, 0).unwrap()
    }

    #[test]
    fn override_appends_and_keeps_system_result() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(dir.path(), Arc::new(ManualClock::new(t(1))), &[record("c1", 10.0, 3.0)]);
        let before = s.get("c1").unwrap();
        assert_eq!(before.report.category(), Some(BtradsCategory::Bt3c));
        let n0 = s.audit_events(None).unwrap().len();
        let req = OverrideRequest {
            reviewer_variables: None,
            reviewer_category: Some(BtradsCategory::Bt3b),
            reason: "enhancement is vascular".into(),
        };
        s.record_override("c1", req.clone()).unwrap();
        s.record_override("c1", OverrideRequest { reason: "second look".into(), ..req }).unwrap();
        let events = s.audit_events(Some("c1")).unwrap();
        assert_eq!(events.len(), n0 + 2);
        assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
        let after = s.get("c1").unwrap();
        assert_eq!(after.report, before.report);
        assert_eq!(after.reviewer.override_category, Some(BtradsCategory::Bt3b));
        assert_eq!(after.reviewer.override_reason.as_deref(), Some("second look"));
        assert_eq!(after.reviewer.override_count, 2);

        let missing = OverrideRequest {
            reviewer_variables: None,
            reviewer_category: None,
            reason: "x".into(),
        };
        assert!(matches!(s.record_override("nope", missing), Err(PipelineError::NotFound(_))));
    }

    #[test]
    fn rescore_edits_flip_categories() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(
            dir.path(),
            Arc::new(SystemClock),
            &[record("imp", 5.0, 2.0), record("wor", 10.0, 3.0)],
        );
        assert_eq!(s.get("imp").unwrap().report.category(), Some(BtradsCategory::Bt1a));

        let bev = ClinicalVariables {
            bevacizumab_status: MedicationStatus::Active,
            radiation_completion_date: NaiveDate::from_ymd_opt(2022, 6, 1),
            ..Default::default()
        };
        let out = s
            .rescore_with_edits(RescoreRequest {
                case_id: "imp".into(),
                edited_variables: bev,
            })
            .unwrap();
        assert_eq!(out.score.category, BtradsCategory::Bt1b);
        assert!(out.delta.category_changed);
        assert!(out.delta.first_divergence.is_some());
        assert!(out.delta.reviewer_asserted.contains(&Variable::BevacizumabStatus));
        assert_eq!(s.get("imp").unwrap().report.category(), Some(BtradsCategory::Bt1a));

        let recent_rt = ClinicalVariables {
            radiation_completion_date: NaiveDate::from_ymd_opt(2024, 1, 31),
            ..Default::default()
        };
        let out = s
            .rescore_with_edits(RescoreRequest {
                case_id: "wor".into(),
                edited_variables: recent_rt,
            })
            .unwrap();
        assert_eq!(out.score.category, BtradsCategory::Bt3a);

        let same = s.get("wor").unwrap().report.variables.unwrap();
        let n0 = s.audit_events(Some("wor")).unwrap().len();
        let out = s
            .rescore_with_edits(RescoreRequest {
                case_id: "wor".into(),
                edited_variables: same,
            })
            .unwrap();
        assert!(!out.delta.category_changed);
        assert_eq!(s.audit_events(Some("wor")).unwrap().len(), n0 + 1);
    }

    #[test]
    fn rescore_rejects_bad_spans_and_unknown_cases() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(dir.path(), Arc::new(SystemClock), &[record("c", 10.0, 2.0)]);
        let mut vars = ClinicalVariables {
            steroid_status: MedicationStatus::Active,
            ..Default::default()
        };
        vars.evidence.steroid_status = Some(EvidenceSpan {
            start: 0,
            end: 5,
            quoted_text: "wrong".into(),
        });
        let req = RescoreRequest {
            case_id: "c".into(),
            edited_variables: vars,
        };
        assert!(matches!(s.rescore_with_edits(req.clone()), Err(PipelineError::Validation(_))));
        let req = RescoreRequest {
            case_id: "zz".into(),
            ..req
        };
        assert!(matches!(s.rescore_with_edits(req), Err(PipelineError::NotFound(_))));
    }

    #[test]
    fn timestamps_never_go_backwards_per_case() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(t(5)));
        let s = store_with(dir.path(), clock.clone(), &[record("c", 10.0, 2.0)]);
        clock.set(t(2));
        let ev = s
            .record_override(
                "c",
                OverrideRequest {
                    reviewer_variables: None,
                    reviewer_category: Some(BtradsCategory::Bt2),
                    reason: "r".into(),
                },
            )
            .unwrap();
        assert_eq!(ev.timestamp, t(5));
        let ts: Vec<_> = s.audit_events(Some("c")).unwrap().iter().map(|e| e.timestamp).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn replay_reconstructs_reviewer_state_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(
            dir.path(),
            Arc::new(SystemClock),
            &[record("a", 5.0, 2.0), record("b", 10.0, 3.0)],
        );
        s.rescore_with_edits(RescoreRequest {
            case_id: "a".into(),
            edited_variables: ClinicalVariables {
                steroid_status: MedicationStatus::Active,
                ..Default::default()
            },
        })
        .unwrap();
        s.record_override(
            "b",
            OverrideRequest {
                reviewer_variables: None,
                reviewer_category: Some(BtradsCategory::Bt3b),
                reason: "r".into(),
            },
        )
        .unwrap();
        let replayed = replay(&s.audit_events(None).unwrap()).unwrap();
        assert_eq!(replayed, s.reviewer_states());

        drop(s);
        let reopened = CaseStore::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(replay(&reopened.audit_events(None).unwrap()).unwrap(), reopened.reviewer_states());
        let ev = reopened
            .record_override(
                "a",
                OverrideRequest {
                    reviewer_variables: None,
                    reviewer_category: None,
                    reason: "later".into(),
                },
            )
            .unwrap();
        assert_eq!(ev.seq, 5);
    }

    #[test]
    fn unsafe_case_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(dir.path(), Arc::new(SystemClock), &[]);
        let r = record("../x", 1.0, 1.0);
        let rep = run_case(&r, s.config(), &PatternExtractor);
        assert!(matches!(s.put_scored(r, rep), Err(PipelineError::Validation(_))));
    }
}
