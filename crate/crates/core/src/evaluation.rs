//! Batch evaluation report assembled from per-case reports, with text
//! tables for the headline results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{BtradsCategory, MedicationStatus, NonStandardReason, ObservedLabel};
use crate::error::PipelineError;
use crate::evalstats::{
    ceiling_analysis, concordance_quadrants, error_attribution_summary, kappa_ci,
    matrix_label, mcnemar_test, one_vs_all, per_category_sensitivity, stratified_accuracy, wilson_ci,
    AttributionSummary, CaseOutcome, CategorySensitivity, CeilingScenarios, ConcordanceQuadrants,
    ConfusionMatrix, DiagnosticMetrics, ErrorAttribution, KappaInterval, McNemarResult, Stratification,
    Stratum, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED, OTHER_LABEL,
};
use crate::pipeline::{CaseReport, CaseStatus, FailureKind, PipelineConfig};
use crate::scorer::RadiationWindow;
use crate::volumetrics::Trend;

pub const CONFIDENCE_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoBaseline,
    BaselineIntervalExceeded,
    QcFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub case_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_input: u64,
    pub n_evaluable: u64,
    pub n_scored: u64,
    pub n_failed: u64,
    pub failures_by_kind: BTreeMap<String, u64>,
    pub excluded_by_reason: BTreeMap<String, u64>,
    pub exclusions: Vec<Exclusion>,
}

impl CohortSummary {
    pub fn n_excluded(&self) -> u64 {
        self.exclusions.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub correct: u64,
    pub n: u64,
    pub proportion: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

impl AccuracySummary {
    fn new(correct: u64, n: u64) -> Result<Self, PipelineError> {
        let ci = if n > 0 { Some(wilson_ci(correct, n, CONFIDENCE_LEVEL).map_err(stats)?) } else { None };
        Ok(AccuracySummary {
            correct,
            n,
            proportion: (n > 0).then(|| correct as f64 / n as f64),
            ci,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub unweighted: Option<KappaInterval>,
    /// Over standard reference categories only.
    pub quadratic_weighted: Option<KappaInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialErrorKind {
    InvalidSubcategory,
    MissingSubcategory,
    UnparseableLabel,
    MedicationEffect,
    RadiationWindow,
    OtherDiscordance,
}

impl InitialErrorKind {
    pub fn label(self) -> &'static str {
        match self {
            InitialErrorKind::InvalidSubcategory => "Invalid subcategory",
            InitialErrorKind::MissingSubcategory => "Missing subcategory",
            InitialErrorKind::UnparseableLabel => "Unparseable label",
            InitialErrorKind::MedicationEffect => "Medication effect (1a/1b)",
            InitialErrorKind::RadiationWindow => "Post-radiation window",
            InitialErrorKind::OtherDiscordance => "Other discordance",
        }
    }
}

/// Kind of disagreement between an initial clinical label and the
/// reference, or `None` when they agree.
pub fn classify_initial_error(reference: &ObservedLabel, initial: &ObservedLabel) -> Option<InitialErrorKind> {
    use BtradsCategory::*;
    match (reference.standard(), initial) {
        (_, ObservedLabel::NonStandard { reason, .. }) => Some(match reason {
            NonStandardReason::InvalidSubcategory => InitialErrorKind::InvalidSubcategory,
            NonStandardReason::MissingSubcategory => InitialErrorKind::MissingSubcategory,
            NonStandardReason::Unparseable => InitialErrorKind::UnparseableLabel,
        }),
        (Some(r), ObservedLabel::Standard(i)) if r == *i => None,
        (Some(Bt1a), ObservedLabel::Standard(Bt1b)) | (Some(Bt1b), ObservedLabel::Standard(Bt1a)) => {
            Some(InitialErrorKind::MedicationEffect)
        }
        (Some(Bt3a), _) | (_, ObservedLabel::Standard(Bt3a)) => Some(InitialErrorKind::RadiationWindow),
        _ => Some(InitialErrorKind::OtherDiscordance),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub name: String,
    pub strata: Vec<Stratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEvaluationReport {
    pub cohort: CohortSummary,
    pub n_reference: u64,
    pub n_nonstandard_reference: u64,
    pub system_accuracy: AccuracySummary,
    pub initial_accuracy: Option<AccuracySummary>,
    pub mcnemar: Option<McNemarResult>,
    pub concordance: Option<ConcordanceQuadrants>,
    pub confusion_system: ConfusionMatrix,
    pub confusion_initial: Option<ConfusionMatrix>,
    pub kappa: KappaSummary,
    pub per_category: Vec<CategorySensitivity>,
    /// One-vs-all over cases with a standard reference label.
    pub one_vs_all: Vec<DiagnosticMetrics>,
    pub initial_errors: BTreeMap<InitialErrorKind, u64>,
    pub attribution: Option<AttributionSummary>,
    pub misclassified_without_attribution: u64,
    pub ceiling: Option<CeilingScenarios>,
    pub subgroups: Vec<SubgroupTable>,
}

fn stats(e: crate::error::StatsError) -> PipelineError {
    PipelineError::Validation(e.to_string())
}

pub fn post_radiation_strata<'a>() -> Stratification<'a, CaseReport> {
    Stratification::new("Time since radiation")
        .stratum("<90 days", |r: &CaseReport| r.radiation_window.status == RadiationWindow::Within90Days)
        .stratum("90-180 days", |r: &CaseReport| {
            r.radiation_window.days_since.is_some_and(|d| (90..=180).contains(&d))
                && r.radiation_window.status == RadiationWindow::Beyond90Days
        })
        .stratum(">180 days", |r: &CaseReport| r.radiation_window.days_since.is_some_and(|d| d > 180))
        .stratum("Unknown", |r: &CaseReport| r.radiation_window.status == RadiationWindow::Unknown)
}

fn meds(r: &CaseReport) -> (MedicationStatus, MedicationStatus) {
    r.variables
        .as_ref()
        .map_or((MedicationStatus::None, MedicationStatus::None), |v| (v.bevacizumab_status, v.steroid_status))
}

pub fn medication_strata<'a>() -> Stratification<'a, CaseReport> {
    Stratification::new("Medication status")
        .stratum("Bevacizumab active", |r: &CaseReport| meds(r).0 == MedicationStatus::Active)
        .stratum("Steroids only", |r: &CaseReport| {
            let (bev, ster) = meds(r);
            bev == MedicationStatus::None && ster.is_present()
        })
        .stratum("No medication", |r: &CaseReport| {
            meds(r) == (MedicationStatus::None, MedicationStatus::None)
        })
        .stratum("Other medication", |_: &CaseReport| true)
}

fn enh_trend(r: &CaseReport) -> Option<Trend> {
    r.volumetrics.as_ref().map(|v| v.enh_trend)
}

pub fn enhancement_strata<'a>() -> Stratification<'a, CaseReport> {
    Stratification::new("Enhancement trend")
        .stratum("Enhancement worse", |r: &CaseReport| enh_trend(r).is_some_and(Trend::is_worse))
        .stratum("Enhancement stable", |r: &CaseReport| enh_trend(r) == Some(Trend::Stable))
        .stratum("Enhancement improved", |r: &CaseReport| enh_trend(r) == Some(Trend::Improved))
        .stratum("No volumetrics", |_: &CaseReport| true)
}

fn failure_key(k: FailureKind) -> String {
    serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn reason_key(r: ExclusionReason) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Build the batch report from per-case reports alone; `exclusions` and
/// `n_input` only feed the cohort summary.
pub fn evaluate_reports(
    reports: &[CaseReport],
    exclusions: &[Exclusion],
    n_input: u64,
    config: &PipelineConfig,
) -> Result<BatchEvaluationReport, PipelineError> {
    if reports.is_empty() {
        return Err(PipelineError::EmptyCohort);
    }
    let resamples = config.bootstrap_resamples.unwrap_or(DEFAULT_BOOTSTRAP_RESAMPLES);
    let seed = config.bootstrap_seed.unwrap_or(DEFAULT_BOOTSTRAP_SEED);

    let mut failures_by_kind = BTreeMap::new();
    for r in reports {
        if let Some(f) = &r.failure {
            *failures_by_kind.entry(failure_key(f.kind)).or_insert(0) += 1;
        }
    }
    let mut excluded_by_reason = BTreeMap::new();
    for e in exclusions {
        *excluded_by_reason.entry(reason_key(e.reason)).or_insert(0) += 1;
    }
    let n_failed = reports.iter().filter(|r| r.status == CaseStatus::Failed).count() as u64;
    let cohort = CohortSummary {
        n_input,
        n_evaluable: reports.len() as u64,
        n_scored: reports.len() as u64 - n_failed,
        n_failed,
        failures_by_kind,
        excluded_by_reason,
        exclusions: exclusions.to_vec(),
    };

    let labeled: Vec<&CaseReport> = reports.iter().filter(|r| r.reference_label.is_some()).collect();
    let n_reference = labeled.len() as u64;
    let n_nonstandard_reference = labeled
        .iter()
        .filter(|r| r.reference_label.as_ref().is_some_and(|l| l.standard().is_none()))
        .count() as u64;
    let system_flags: Vec<bool> = labeled.iter().map(|r| r.correct_vs_reference == Some(true)).collect();
    let system_accuracy = AccuracySummary::new(system_flags.iter().filter(|c| **c).count() as u64, n_reference)?;

    let with_initial = labeled.iter().all(|r| r.initial_correct.is_some()) && !labeled.is_empty();
    let (initial_accuracy, mcnemar, concordance) = if with_initial {
        let initial_flags: Vec<bool> = labeled.iter().map(|r| r.initial_correct == Some(true)).collect();
        let q = concordance_quadrants(&system_flags, &initial_flags).map_err(stats)?;
        let acc = AccuracySummary::new(q.both + q.initial_only, n_reference)?;
        (Some(acc), mcnemar_test(q.system_only, q.initial_only).ok(), Some(q))
    } else {
        (None, None, None)
    };

    let mut confusion_system = ConfusionMatrix::follow_up();
    for r in &labeled {
        if let (Some(reference), Some(cat)) = (&r.reference_label, r.category()) {
            confusion_system.record(&matrix_label(reference), cat.as_str()).map_err(stats)?;
        }
    }
    let confusion_initial = if with_initial {
        let mut m = ConfusionMatrix::follow_up();
        for r in &labeled {
            if let (Some(reference), Some(initial)) = (&r.reference_label, &r.initial_clinical_label) {
                m.record(&matrix_label(reference), &matrix_label(initial)).map_err(stats)?;
            }
        }
        Some(m)
    } else {
        None
    };

    let standard = confusion_system.standard_submatrix();
    let kappa = KappaSummary {
        unweighted: kappa_ci(&confusion_system, false, CONFIDENCE_LEVEL, resamples, seed).ok(),
        quadratic_weighted: kappa_ci(&standard, true, CONFIDENCE_LEVEL, resamples, seed).ok(),
    };

    let per_category = per_category_sensitivity(&confusion_system, CONFIDENCE_LEVEL)
        .map_err(stats)?
        .into_iter()
        .filter(|c| c.category != OTHER_LABEL)
        .collect();
    let one_vs_all = standard
        .labels
        .iter()
        .map(|l| one_vs_all(&standard, l).map_err(stats))
        .collect::<Result<Vec<_>, _>>()?;

    let mut initial_errors = BTreeMap::new();
    if with_initial {
        for r in &labeled {
            if let (Some(reference), Some(initial)) = (&r.reference_label, &r.initial_clinical_label) {
                if let Some(k) = classify_initial_error(reference, initial) {
                    *initial_errors.entry(k).or_insert(0) += 1;
                }
            }
        }
    }

    let misclassified: Vec<&&CaseReport> =
        labeled.iter().filter(|r| r.correct_vs_reference == Some(false)).collect();
    let attributions: Vec<ErrorAttribution> =
        misclassified.iter().filter_map(|r| r.attribution.clone()).collect();
    let misclassified_without_attribution = (misclassified.len() - attributions.len()) as u64;
    let attribution = (!attributions.is_empty()).then(|| error_attribution_summary(&attributions));
    let outcomes: Vec<CaseOutcome<'_>> = labeled
        .iter()
        .map(|r| CaseOutcome {
            correct: r.correct_vs_reference == Some(true),
            attribution: r.attribution.as_ref(),
        })
        .collect();
    let ceiling = if outcomes.is_empty() {
        None
    } else {
        Some(ceiling_analysis(&outcomes, n_nonstandard_reference).map_err(stats)?)
    };

    let strata_pop: Vec<CaseReport> = labeled
        .iter()
        .filter(|r| r.reference_label.as_ref().is_some_and(|l| l.standard().is_some()))
        .map(|r| (*r).clone())
        .collect();
    let correct = |r: &CaseReport| r.correct_vs_reference == Some(true);
    let mut subgroups = Vec::new();
    for scheme in [post_radiation_strata(), medication_strata(), enhancement_strata()] {
        subgroups.push(SubgroupTable {
            name: scheme.name.clone(),
            strata: stratified_accuracy(&strata_pop, correct, &scheme, CONFIDENCE_LEVEL).map_err(stats)?,
        });
    }

    Ok(BatchEvaluationReport {
        cohort,
        n_reference,
        n_nonstandard_reference,
        system_accuracy,
        initial_accuracy,
        mcnemar,
        concordance,
        confusion_system,
        confusion_initial,
        kappa,
        per_category,
        one_vs_all,
        initial_errors,
        attribution,
        misclassified_without_attribution,
        ceiling,
        subgroups,
    })
}

fn pct1(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn pct_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), pct1)
}

fn ci_str(ci: Option<(f64, f64)>) -> String {
    ci.map_or_else(|| "-".to_string(), |(l, h)| format!("{}-{}", pct1(l), pct1(h)))
}

fn ratio_str(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) if v.is_infinite() => "Inf".to_string(),
        Some(v) => format!("{v:.digits$}"),
        None => "-".to_string(),
    }
}

fn p_str(p: f64) -> String {
    if p < 0.001 {
        "<.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Plain-text tables of the headline results.
pub fn render_tables(r: &BatchEvaluationReport) -> String {
    let mut o = String::new();
    let c = &r.cohort;
    let _ = writeln!(
        o,
        "Cohort: {} input, {} excluded, {} evaluable ({} scored, {} failed)",
        c.n_input,
        c.n_excluded(),
        c.n_evaluable,
        c.n_scored,
        c.n_failed
    );
    for (k, n) in &c.excluded_by_reason {
        let _ = writeln!(o, "  excluded {k}: {n}");
    }
    for (k, n) in &c.failures_by_kind {
        let _ = writeln!(o, "  failed {k}: {n}");
    }

    let _ = writeln!(o, "\nTable 1. Overall accuracy against the reference standard (N = {})", r.n_reference);
    let _ = writeln!(o, "{:<22} {:>9} {:>8} {:>15}", "Method", "Correct", "Acc", "95% CI");
    let mut row = |name: &str, a: &AccuracySummary| {
        let _ = writeln!(
            o,
            "{:<22} {:>9} {:>8} {:>15}",
            name,
            format!("{}/{}", a.correct, a.n),
            pct_opt(a.proportion),
            ci_str(a.ci)
        );
    };
    row("Automated system", &r.system_accuracy);
    if let Some(a) = &r.initial_accuracy {
        row("Initial clinical", a);
    }
    if let Some(m) = &r.mcnemar {
        let _ = writeln!(o, "McNemar (continuity corrected): chi2 = {:.2}, P {}", m.chi2, p_str(m.p_value));
    }
    if let Some(q) = &r.concordance {
        let _ = writeln!(
            o,
            "Concordance: both {}, system only {}, initial only {}, neither {}",
            q.both, q.system_only, q.initial_only, q.neither
        );
    }
    for (name, k) in [("unweighted", &r.kappa.unweighted), ("quadratic weighted", &r.kappa.quadratic_weighted)] {
        if let Some(k) = k {
            let _ = writeln!(o, "Kappa ({name}): {:.3} (95% CI {:.3}-{:.3})", k.estimate, k.low, k.high);
        }
    }

    let _ = writeln!(o, "\nTable 2. Per-category sensitivity");
    let _ = writeln!(o, "{:<8} {:>7} {:>9} {:>8} {:>15}", "Category", "N", "Correct", "Sens", "95% CI");
    for s in &r.per_category {
        if s.total == 0 && s.category == BtradsCategory::Bt0.as_str() {
            continue;
        }
        let _ = writeln!(
            o,
            "{:<8} {:>7} {:>9} {:>8} {:>15}",
            s.category,
            s.total,
            s.correct,
            pct_opt(s.proportion),
            ci_str(s.ci)
        );
    }

    let _ = writeln!(o, "\nTable 3. One-vs-all diagnostic metrics");
    let _ = writeln!(
        o,
        "{:<8} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "Category", "N", "Sens", "Spec", "PPV", "NPV", "LR+", "LR-"
    );
    for d in &r.one_vs_all {
        if d.tp + d.fn_ == 0 && d.category == BtradsCategory::Bt0.as_str() {
            continue;
        }
        let _ = writeln!(
            o,
            "{:<8} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}",
            d.category,
            d.tp + d.fn_,
            pct_opt(d.sensitivity),
            pct_opt(d.specificity),
            pct_opt(d.ppv),
            pct_opt(d.npv),
            ratio_str(d.lr_pos_rounded, 1),
            ratio_str(d.lr_neg_rounded, 2)
        );
    }

    if let Some(cs) = &r.ceiling {
        let _ = writeln!(o, "\nTable 4. Performance ceiling");
        for (name, k, v) in [
            ("Current system", cs.current_correct, cs.current),
            ("Perfect extraction", cs.perfect_extraction_correct, cs.perfect_extraction),
            ("Perfect algorithm", cs.perfect_algorithm_correct, cs.perfect_algorithm),
            ("Perfect both", cs.perfect_both_correct, cs.perfect_both),
            ("Theoretical maximum", cs.n - r.n_nonstandard_reference, cs.theoretical_max),
        ] {
            let _ = writeln!(o, "{:<22} {:>9} {:>8}", name, format!("{k}/{}", cs.n), pct1(v));
        }
    }

    if let Some(a) = &r.attribution {
        let _ = writeln!(o, "\nError attribution ({} misclassified)", a.total);
        for cc in &a.causes {
            let _ = writeln!(o, "{:<24} {:>5} {:>7.1}%", cc.cause.label(), cc.count, cc.percent);
        }
        let _ = writeln!(o, "{:<24} {:>5} {:>7.1}%", "Remediable", a.remediable, a.remediable_percent);
        if r.misclassified_without_attribution > 0 {
            let _ = writeln!(o, "Unattributed misclassifications: {}", r.misclassified_without_attribution);
        }
    }

    if !r.initial_errors.is_empty() {
        let _ = writeln!(o, "\nInitial clinical label errors");
        for (k, n) in &r.initial_errors {
            let _ = writeln!(o, "{:<28} {:>5}", k.label(), n);
        }
    }

    for t in &r.subgroups {
        let _ = writeln!(o, "\nSubgroup accuracy: {}", t.name);
        for s in &t.strata {
            if s.n == 0 {
                continue;
            }
            let _ = writeln!(
                o,
                "{:<22} {:>9} {:>8} {:>15}",
                s.label,
                format!("{}/{}", s.correct, s.n),
                pct_opt(s.accuracy),
                ci_str(s.ci)
            );
        }
    }
    o
}
