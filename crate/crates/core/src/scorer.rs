//! Deterministic BT-RADS decision table.
//!
//! Rules are evaluated in order and the first terminal wins:
//!
//! | id  | condition                                              | result        |
//! |-----|--------------------------------------------------------|---------------|
//! | R0  | no baseline                                            | BT-0          |
//! | R1  | FLAIR and enhancement both stable                      | BT-2          |
//! | R2  | some compartment improved, none worse                  | BT-1b / BT-1a |
//! | R3  | some compartment worse (gate for R3a..R3e)             |               |
//! | R3a | inside the post-radiation window                       | BT-3a         |
//! | R3b | medication change explains worsening                   | BT-3a         |
//! | R3c | both worse, at least one major                         | BT-4          |
//! | R3d | enhancement worse                                      | BT-3c         |
//! | R3e | FLAIR worse, enhancement stable or improved            | BT-3b         |
//!
//! Rule ids are stable strings; the review UI and error attribution key on
//! them.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{BtradsCategory, ClinicalVariables, MedicationStatus};
use crate::volumetrics::{Trend, VolumetricChange};

pub const DEFAULT_RADIATION_WINDOW_DAYS: i64 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiationWindow {
    Within90Days,
    Beyond90Days,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiationWindowStatus {
    pub status: RadiationWindow,
    pub days_since: Option<i64>,
}

impl RadiationWindowStatus {
    pub const UNKNOWN: RadiationWindowStatus = RadiationWindowStatus {
        status: RadiationWindow::Unknown,
        days_since: None,
    };
}

pub fn radiation_window_status(
    completion: Option<NaiveDate>,
    followup: NaiveDate,
) -> RadiationWindowStatus {
    radiation_window_status_with(completion, followup, DEFAULT_RADIATION_WINDOW_DAYS)
}

/// Days from radiation completion to the follow-up scan. A completion date
/// after the scan is reported as `Unknown`; the pipeline flags it.
pub fn radiation_window_status_with(
    completion: Option<NaiveDate>,
    followup: NaiveDate,
    window_days: i64,
) -> RadiationWindowStatus {
    let Some(done) = completion else {
        return RadiationWindowStatus::UNKNOWN;
    };
    let days = (followup - done).num_days();
    if days < 0 {
        return RadiationWindowStatus::UNKNOWN;
    }
    RadiationWindowStatus {
        status: if days < window_days {
            RadiationWindow::Within90Days
        } else {
            RadiationWindow::Beyond90Days
        },
        days_since: Some(days),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Improvement,
    Worsening,
}

/// Whether medication status can account for a change in this direction.
/// Any current or recent bevacizumab or steroid use can explain improvement;
/// only a recent stop or taper explains worsening.
pub fn medication_explains(direction: Direction, vars: &ClinicalVariables) -> bool {
    match direction {
        Direction::Improvement => {
            vars.bevacizumab_status.is_present() || vars.steroid_status.is_present()
        }
        Direction::Worsening => {
            vars.steroid_status == MedicationStatus::Recent
                || vars.bevacizumab_status == MedicationStatus::Recent
        }
    }
}

/// How to resolve enhancement worsening paired with FLAIR improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscordantPolicy {
    /// Enhancement dominates: BT-3c.
    #[default]
    EnhancementPriority,
    /// Opposite trends are indeterminate: BT-3b.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoringPolicy {
    #[serde(default)]
    pub discordant: DiscordantPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule_id: String,
    pub inputs_summary: String,
    pub matched: bool,
    pub outcome: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionTrace(pub Vec<TraceStep>);

impl DecisionTrace {
    pub fn steps(&self) -> &[TraceStep] {
        &self.0
    }

    /// Rule id of the terminal step.
    pub fn terminal_rule(&self) -> Option<&str> {
        self.0.last().map(|s| s.rule_id.as_str())
    }

    /// Index of the first step where two traces differ.
    pub fn first_divergence(&self, other: &DecisionTrace) -> Option<usize> {
        let n = self.0.len().max(other.0.len());
        (0..n).find(|&i| self.0.get(i) != other.0.get(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFlag {
    UnknownRadiationDate,
    ZeroBaselineCompartment,
    MedicationConflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub category: BtradsCategory,
    pub trace: DecisionTrace,
    pub flags: BTreeSet<ScoreFlag>,
}

struct TraceBuilder {
    steps: Vec<TraceStep>,
}

impl TraceBuilder {
    fn check(&mut self, rule_id: &str, summary: String, matched: bool) -> bool {
        self.steps.push(TraceStep {
            rule_id: rule_id.to_string(),
            inputs_summary: summary,
            matched,
            outcome: if matched { "matched" } else { "not matched" }.to_string(),
        });
        matched
    }

    fn terminal(mut self, rule_id: &str, summary: String, category: BtradsCategory) -> DecisionTrace {
        self.steps.push(TraceStep {
            rule_id: rule_id.to_string(),
            inputs_summary: summary,
            matched: true,
            outcome: category.as_str().to_string(),
        });
        DecisionTrace(self.steps)
    }
}

fn meds_summary(vars: &ClinicalVariables) -> String {
    format!(
        "steroid={}, bevacizumab={}",
        vars.steroid_status.as_str(),
        vars.bevacizumab_status.as_str()
    )
}

fn trends_summary(v: &VolumetricChange) -> String {
    format!("flair={}, enh={}", v.flair_trend.as_str(), v.enh_trend.as_str())
}

fn window_summary(w: &RadiationWindowStatus) -> String {
    match w.days_since {
        Some(d) => format!("radiation_window={:?}, days_since={d}", w.status),
        None => format!("radiation_window={:?}", w.status),
    }
}

/// Apply the decision table. `volumetrics` is `None` when the case has no
/// baseline exam.
pub fn score_case(
    volumetrics: Option<&VolumetricChange>,
    vars: &ClinicalVariables,
    window: RadiationWindowStatus,
    policy: ScoringPolicy,
) -> ScoreResult {
    let mut flags = BTreeSet::new();
    if window.status == RadiationWindow::Unknown {
        flags.insert(ScoreFlag::UnknownRadiationDate);
    }
    if !vars.conflicts.is_empty() {
        flags.insert(ScoreFlag::MedicationConflict);
    }

    let mut tb = TraceBuilder { steps: Vec::new() };

    let Some(v) = volumetrics else {
        let trace = tb.terminal("R0", "baseline_present=false".into(), BtradsCategory::Bt0);
        return ScoreResult {
            category: BtradsCategory::Bt0,
            trace,
            flags,
        };
    };
    if v.has_zero_baseline() {
        flags.insert(ScoreFlag::ZeroBaselineCompartment);
    }
    tb.check("R0", "baseline_present=true".into(), false);

    let (flair, enh) = (v.flair_trend, v.enh_trend);
    let trends = trends_summary(v);
    let finish = |tb: TraceBuilder, id: &str, summary: String, category: BtradsCategory| ScoreResult {
        category,
        trace: tb.terminal(id, summary, category),
        flags: flags.clone(),
    };

    if flair == Trend::Stable && enh == Trend::Stable {
        return finish(tb, "R1", trends, BtradsCategory::Bt2);
    }
    tb.check("R1", trends.clone(), false);

    let any_improved = flair == Trend::Improved || enh == Trend::Improved;
    let any_worse = flair.is_worse() || enh.is_worse();

    if any_improved && !any_worse {
        let category = if medication_explains(Direction::Improvement, vars) {
            BtradsCategory::Bt1b
        } else {
            BtradsCategory::Bt1a
        };
        return finish(tb, "R2", format!("{trends}; {}", meds_summary(vars)), category);
    }
    tb.check("R2", trends.clone(), false);

    assert!(any_worse, "decision table fell through with {trends}");
    tb.check("R3", trends.clone(), true);

    if window.status == RadiationWindow::Within90Days {
        return finish(tb, "R3a", window_summary(&window), BtradsCategory::Bt3a);
    }
    tb.check("R3a", window_summary(&window), false);

    if medication_explains(Direction::Worsening, vars) {
        return finish(tb, "R3b", meds_summary(vars), BtradsCategory::Bt3a);
    }
    tb.check("R3b", meds_summary(vars), false);

    let both_worse = flair.is_worse() && enh.is_worse();
    let any_major = flair == Trend::MajorWorse || enh == Trend::MajorWorse;
    if both_worse && any_major {
        return finish(tb, "R3c", trends, BtradsCategory::Bt4);
    }
    tb.check("R3c", trends.clone(), false);

    let opposite = enh.is_worse() && flair == Trend::Improved;
    let enhancement_rule = match policy.discordant {
        DiscordantPolicy::EnhancementPriority => enh.is_worse(),
        DiscordantPolicy::Indeterminate => enh.is_worse() && !opposite,
    };
    let summary = format!("{trends}; discordant_policy={:?}", policy.discordant);
    if enhancement_rule {
        return finish(tb, "R3d", summary, BtradsCategory::Bt3c);
    }
    tb.check("R3d", summary.clone(), false);

    assert!(
        (flair.is_worse() && !enh.is_worse()) || opposite,
        "decision table fell through at R3e with {trends}"
    );
    finish(tb, "R3e", summary, BtradsCategory::Bt3b)
}
