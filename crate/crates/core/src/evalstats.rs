//! Evaluation statistics: binomial intervals, paired tests, agreement
//! coefficients, one-vs-all diagnostics, concordance, error attribution and
//! ceiling scenarios.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::domain::{BtradsCategory, ObservedLabel};
use crate::error::StatsError;

pub const OTHER_LABEL: &str = "Other";
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 20_250_101;

/// Two-sided standard normal quantile for a confidence level.
pub fn z_for_level(level: f64) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::domain(format!("confidence level {level} not in (0, 1)")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

pub fn wilson_ci(successes: u64, n: u64, level: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::domain("wilson_ci with n = 0"));
    }
    if successes > n {
        return Err(StatsError::domain(format!("successes {successes} > n {n}")));
    }
    let z = z_for_level(level)?;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub chi2: f64,
    pub p_value: f64,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt())
}

/// McNemar test with continuity correction on the discordant counts.
pub fn mcnemar_test(b: u64, c: u64) -> Result<McNemarResult, StatsError> {
    if b + c == 0 {
        return Err(StatsError::domain("mcnemar_test with no discordant pairs"));
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let diff = diff.max(0.0);
    let chi2 = diff * diff / (b + c) as f64;
    Ok(McNemarResult {
        b,
        c,
        chi2,
        p_value: chi2_sf_1df(chi2),
    })
}

/// Square count grid, rows = reference, columns = predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(StatsError::domain(format!(
                "confusion matrix must be {k}x{k} to match its labels"
            )));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    /// Unlabeled matrix; labels are the row indices.
    pub fn from_grid(counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let labels = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::from_counts(labels, counts)
    }

    /// The seven follow-up categories followed by an `Other` bucket.
    pub fn follow_up() -> Self {
        let mut labels: Vec<String> = BtradsCategory::FOLLOW_UP
            .iter()
            .map(|c| c.as_str().to_string())
            .collect();
        labels.push(OTHER_LABEL.to_string());
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Increment the cell for a (reference, predicted) pair, adding a `BT-0`
    /// label at the front if it is needed and missing.
    pub fn record(&mut self, reference: &str, predicted: &str) -> Result<(), StatsError> {
        for l in [reference, predicted] {
            if self.index_of(l).is_none() {
                if l == BtradsCategory::Bt0.as_str() {
                    self.insert_front(l);
                } else {
                    return Err(StatsError::domain(format!("unknown matrix label {l:?}")));
                }
            }
        }
        let (i, j) = (self.index_of(reference).unwrap(), self.index_of(predicted).unwrap());
        self.counts[i][j] += 1;
        Ok(())
    }

    fn insert_front(&mut self, label: &str) {
        self.labels.insert(0, label.to_string());
        for row in &mut self.counts {
            row.insert(0, 0);
        }
        self.counts.insert(0, vec![0; self.labels.len()]);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..self.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }

    /// Rows and columns whose labels satisfy `keep`.
    pub fn submatrix(&self, keep: impl Fn(&str) -> bool) -> ConfusionMatrix {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.labels[i])).collect();
        ConfusionMatrix {
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            counts: idx
                .iter()
                .map(|&i| idx.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }

    /// Drop the `Other` row and column.
    pub fn standard_submatrix(&self) -> ConfusionMatrix {
        self.submatrix(|l| l != OTHER_LABEL)
    }

    /// Ordinal ranks for BT-RADS labels; `None` if any label is not a
    /// standard category.
    pub fn category_ranks(&self) -> Option<Vec<f64>> {
        self.labels
            .iter()
            .map(|l| l.parse::<BtradsCategory>().ok().map(|c| c.rank() as f64))
            .collect()
    }

    /// Comma-delimited export with a header row of predicted labels.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("reference\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Matrix label for an observed reference or clinical label.
pub fn matrix_label(label: &ObservedLabel) -> String {
    match label.standard() {
        Some(c) => c.as_str().to_string(),
        None => OTHER_LABEL.to_string(),
    }
}

fn check_nonempty(m: &ConfusionMatrix) -> Result<f64, StatsError> {
    let n = m.total();
    if n == 0 {
        return Err(StatsError::domain("empty confusion matrix"));
    }
    Ok(n as f64)
}

pub fn cohen_kappa(m: &ConfusionMatrix) -> Result<f64, StatsError> {
    let n = check_nonempty(m)?;
    let po = m.diagonal_sum() as f64 / n;
    let pe: f64 = (0..m.len())
        .map(|i| m.row_sum(i) as f64 * m.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - pe).abs() < 1e-12 {
        return Err(StatsError::domain("chance agreement is 1; kappa undefined"));
    }
    Ok((po - pe) / (1.0 - pe))
}

pub fn weighted_kappa_quadratic(m: &ConfusionMatrix, ranks: &[f64]) -> Result<f64, StatsError> {
    if ranks.len() != m.len() {
        return Err(StatsError::domain("one rank per category required"));
    }
    if m.len() < 2 {
        return Err(StatsError::domain("weighted kappa needs at least two categories"));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.iter().any(|r| !r.is_finite()) {
        return Err(StatsError::domain("ranks must be distinct and finite"));
    }
    let n = check_nonempty(m)?;
    let span = sorted[sorted.len() - 1] - sorted[0];
    let rows: Vec<f64> = (0..m.len()).map(|i| m.row_sum(i) as f64).collect();
    let cols: Vec<f64> = (0..m.len()).map(|j| m.col_sum(j) as f64).collect();
    let (mut obs, mut exp) = (0.0, 0.0);
    for i in 0..m.len() {
        for j in 0..m.len() {
            let d = (ranks[i] - ranks[j]) / span;
            let w = d * d;
            obs += w * m.counts[i][j] as f64 / n;
            exp += w * rows[i] * cols[j] / (n * n);
        }
    }
    if exp.abs() < 1e-15 {
        return Err(StatsError::domain("expected weighted disagreement is 0; kappa undefined"));
    }
    Ok(1.0 - obs / exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaInterval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub resamples: usize,
    pub degenerate_skipped: usize,
    pub seed: u64,
}

/// Bootstrap percentile interval, resampling cases with replacement. Each
/// resample draws from its own ChaCha stream, so the result does not depend
/// on the thread count.
pub fn kappa_ci(
    m: &ConfusionMatrix,
    weighted: bool,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<KappaInterval, StatsError> {
    if m.total() < 2 {
        return Err(StatsError::domain("kappa_ci needs at least two cases"));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(StatsError::domain("invalid level or resample count"));
    }
    let ranks: Vec<f64> = match (weighted, m.category_ranks()) {
        (false, _) => Vec::new(),
        (true, Some(r)) => r,
        (true, None) => (0..m.len()).map(|i| i as f64).collect(),
    };
    let stat = |mm: &ConfusionMatrix| {
        if weighted {
            weighted_kappa_quadratic(mm, &ranks)
        } else {
            cohen_kappa(mm)
        }
    };
    let estimate = stat(m)?;
    let cells: Vec<(usize, usize)> = m
        .counts
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.iter()
                .enumerate()
                .flat_map(move |(j, &c)| std::iter::repeat_n((i, j), c as usize))
        })
        .collect();
    let k = m.len();
    let draws: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut counts = vec![vec![0u64; k]; k];
            for _ in 0..cells.len() {
                let (i, j) = cells[rng.random_range(0..cells.len())];
                counts[i][j] += 1;
            }
            let mm = ConfusionMatrix {
                labels: m.labels.clone(),
                counts,
            };
            stat(&mm).ok()
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = resamples - values.len();
    if values.is_empty() {
        return Err(StatsError::domain("every bootstrap resample was degenerate"));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    Ok(KappaInterval {
        estimate,
        low: quantile_sorted(&values, alpha),
        high: quantile_sorted(&values, 1.0 - alpha),
        level,
        resamples,
        degenerate_skipped: skipped,
        seed,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => s.serialize_str("Infinity"),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) if t == "Infinity" => Some(f64::INFINITY),
            Some(Repr::Text(t)) => {
                return Err(serde::de::Error::custom(format!("bad ratio {t:?}")));
            }
        })
    }
}

/// One-vs-all metrics. Proportions are `None` when their denominator is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticMetrics {
    pub category: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    #[serde(with = "ratio_serde")]
    pub lr_pos: Option<f64>,
    #[serde(with = "ratio_serde")]
    pub lr_neg: Option<f64>,
    /// Ratios from sensitivity and specificity rounded to three decimals,
    /// the convention used for display.
    #[serde(with = "ratio_serde")]
    pub lr_pos_rounded: Option<f64>,
    #[serde(with = "ratio_serde")]
    pub lr_neg_rounded: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn likelihood_ratios(sens: Option<f64>, spec: Option<f64>, rounded: bool) -> (Option<f64>, Option<f64>) {
    let (Some(se), Some(sp)) = (sens, spec) else {
        return (None, None);
    };
    let q = |x: f64| if rounded { round3(x) } else { x };
    let (se, sp) = (q(se), q(sp));
    let pos = if sp >= 1.0 {
        if se > 0.0 {
            Some(f64::INFINITY)
        } else {
            None
        }
    } else {
        Some(se / q(1.0 - sp))
    };
    let neg = (sp > 0.0).then(|| q(1.0 - se) / sp);
    (pos, neg)
}

impl DiagnosticMetrics {
    pub fn from_counts(category: impl Into<String>, tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let sensitivity = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        let (lr_pos, lr_neg) = likelihood_ratios(sensitivity, specificity, false);
        let (lr_pos_rounded, lr_neg_rounded) =
            likelihood_ratios(sensitivity, specificity, true);
        DiagnosticMetrics {
            category: category.into(),
            tp,
            fp,
            fn_,
            tn,
            sensitivity,
            specificity,
            ppv: ratio(tp, tp + fp),
            npv: ratio(tn, tn + fn_),
            lr_pos,
            lr_neg,
            lr_pos_rounded,
            lr_neg_rounded,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn one_vs_all(m: &ConfusionMatrix, category: &str) -> Result<DiagnosticMetrics, StatsError> {
    let k = m
        .index_of(category)
        .ok_or_else(|| StatsError::domain(format!("category {category:?} not in matrix")))?;
    let tp = m.counts[k][k];
    let fn_ = m.row_sum(k) - tp;
    let fp = m.col_sum(k) - tp;
    let tn = m.total() - tp - fn_ - fp;
    Ok(DiagnosticMetrics::from_counts(category, tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySensitivity {
    pub category: String,
    pub correct: u64,
    pub total: u64,
    /// `None` for an empty row.
    pub proportion: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

pub fn per_category_sensitivity(m: &ConfusionMatrix, level: f64) -> Result<Vec<CategorySensitivity>, StatsError> {
    (0..m.len())
        .map(|i| {
            let total = m.row_sum(i);
            let correct = m.counts[i][i];
            let ci = if total > 0 {
                Some(wilson_ci(correct, total, level)?)
            } else {
                None
            };
            Ok(CategorySensitivity {
                category: m.labels[i].clone(),
                correct,
                total,
                proportion: ratio(correct, total),
                ci,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConcordanceQuadrants {
    pub both: u64,
    pub system_only: u64,
    pub initial_only: u64,
    pub neither: u64,
}

impl ConcordanceQuadrants {
    pub fn total(&self) -> u64 {
        self.both + self.system_only + self.initial_only + self.neither
    }

    pub fn system_accuracy(&self) -> Option<f64> {
        ratio(self.both + self.system_only, self.total())
    }

    pub fn initial_accuracy(&self) -> Option<f64> {
        ratio(self.both + self.initial_only, self.total())
    }
}

pub fn concordance_quadrants(
    system_correct: &[bool],
    initial_correct: &[bool],
) -> Result<ConcordanceQuadrants, StatsError> {
    if system_correct.len() != initial_correct.len() {
        return Err(StatsError::domain(format!(
            "length mismatch: {} system flags, {} initial flags",
            system_correct.len(),
            initial_correct.len()
        )));
    }
    let mut q = ConcordanceQuadrants::default();
    for (&s, &i) in system_correct.iter().zip(initial_correct) {
        match (s, i) {
            (true, true) => q.both += 1,
            (true, false) => q.system_only += 1,
            (false, true) => q.initial_only += 1,
            (false, false) => q.neither += 1,
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCause {
    ThresholdBoundary,
    ExtractionError,
    AlgorithmLimitation,
    GroundTruthAmbiguity,
}

impl ErrorCause {
    pub const ALL: [ErrorCause; 4] = [
        ErrorCause::ThresholdBoundary,
        ErrorCause::ExtractionError,
        ErrorCause::AlgorithmLimitation,
        ErrorCause::GroundTruthAmbiguity,
    ];

    pub fn is_remediable(self) -> bool {
        matches!(self, ErrorCause::ExtractionError | ErrorCause::AlgorithmLimitation)
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCause::ThresholdBoundary => "Threshold boundary",
            ErrorCause::ExtractionError => "Extraction error",
            ErrorCause::AlgorithmLimitation => "Algorithm limitation",
            ErrorCause::GroundTruthAmbiguity => "Ground-truth ambiguity",
        }
    }
}

/// Cause and counterfactual flags for one misclassified case.
///
/// `correct_if_perfect_both` covers cases fixed only when extraction and
/// the algorithm are both corrected; it is implied by either single flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAttribution {
    pub case_id: String,
    pub cause: ErrorCause,
    #[serde(default)]
    pub correct_if_perfect_extraction: bool,
    #[serde(default)]
    pub correct_if_perfect_algorithm: bool,
    #[serde(default)]
    pub correct_if_perfect_both: bool,
}

impl ErrorAttribution {
    pub fn fixed_by_both(&self) -> bool {
        self.correct_if_perfect_both
            || self.correct_if_perfect_extraction
            || self.correct_if_perfect_algorithm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseCount {
    pub cause: ErrorCause,
    pub count: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub total: u64,
    pub causes: Vec<CauseCount>,
    pub remediable: u64,
    pub remediable_percent: f64,
    pub irreducible: u64,
    pub irreducible_percent: f64,
}

impl AttributionSummary {
    pub fn count(&self, cause: ErrorCause) -> u64 {
        self.causes.iter().find(|c| c.cause == cause).map_or(0, |c| c.count)
    }

    pub fn percent(&self, cause: ErrorCause) -> f64 {
        self.causes.iter().find(|c| c.cause == cause).map_or(0.0, |c| c.percent)
    }
}

fn pct(k: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

pub fn error_attribution_summary(attributions: &[ErrorAttribution]) -> AttributionSummary {
    summarize_cause_counts(attributions.iter().map(|a| a.cause))
}

/// Summary from bare causes, one per misclassified case.
pub fn summarize_cause_counts(causes: impl IntoIterator<Item = ErrorCause>) -> AttributionSummary {
    let mut counts: BTreeMap<ErrorCause, u64> = ErrorCause::ALL.iter().map(|&c| (c, 0)).collect();
    for c in causes {
        *counts.entry(c).or_default() += 1;
    }
    let total: u64 = counts.values().sum();
    let remediable: u64 = counts
        .iter()
        .filter(|(c, _)| c.is_remediable())
        .map(|(_, n)| n)
        .sum();
    let irreducible = total - remediable;
    AttributionSummary {
        total,
        causes: counts
            .into_iter()
            .map(|(cause, count)| CauseCount {
                cause,
                count,
                percent: pct(count, total),
            })
            .collect(),
        remediable,
        remediable_percent: pct(remediable, total),
        irreducible,
        irreducible_percent: pct(irreducible, total),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeilingScenarios {
    pub n: u64,
    pub current: f64,
    pub perfect_extraction: f64,
    pub perfect_algorithm: f64,
    pub perfect_both: f64,
    pub theoretical_max: f64,
    pub current_correct: u64,
    pub perfect_extraction_correct: u64,
    pub perfect_algorithm_correct: u64,
    pub perfect_both_correct: u64,
}

/// Per-case outcome for ceiling analysis: correctness, plus counterfactual
/// flags when misclassified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseOutcome<'a> {
    pub correct: bool,
    pub attribution: Option<&'a ErrorAttribution>,
}

pub fn ceiling_analysis(outcomes: &[CaseOutcome<'_>], n_nonstandard: u64) -> Result<CeilingScenarios, StatsError> {
    let n = outcomes.len() as u64;
    if n == 0 {
        return Err(StatsError::domain("ceiling_analysis on an empty cohort"));
    }
    if n_nonstandard > n {
        return Err(StatsError::domain("more non-standard cases than cases"));
    }
    let mut current = 0;
    let (mut ext, mut alg, mut both) = (0, 0, 0);
    for o in outcomes {
        if o.correct {
            current += 1;
            continue;
        }
        if let Some(a) = o.attribution {
            ext += a.correct_if_perfect_extraction as u64;
            alg += a.correct_if_perfect_algorithm as u64;
            both += a.fixed_by_both() as u64;
        }
    }
    let frac = |k: u64| k as f64 / n as f64;
    Ok(CeilingScenarios {
        n,
        current: frac(current),
        perfect_extraction: frac(current + ext),
        perfect_algorithm: frac(current + alg),
        perfect_both: frac(current + both),
        theoretical_max: frac(n - n_nonstandard),
        current_correct: current,
        perfect_extraction_correct: current + ext,
        perfect_algorithm_correct: current + alg,
        perfect_both_correct: current + both,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    pub n: u64,
    pub correct: u64,
    pub accuracy: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// A named, mutually exclusive partition of items; the first matching
/// predicate wins and unmatched items are left out.
pub struct Stratification<'a, T> {
    pub name: String,
    pub strata: Vec<(String, Box<dyn Fn(&T) -> bool + Send + Sync + 'a>)>,
}

impl<'a, T> Stratification<'a, T> {
    pub fn new(name: impl Into<String>) -> Self {
        Stratification {
            name: name.into(),
            strata: Vec::new(),
        }
    }

    pub fn stratum(mut self, label: impl Into<String>, pred: impl Fn(&T) -> bool + Send + Sync + 'a) -> Self {
        self.strata.push((label.into(), Box::new(pred)));
        self
    }

    pub fn assign(&self, item: &T) -> Option<usize> {
        self.strata.iter().position(|(_, p)| p(item))
    }
}

pub fn stratified_accuracy<T>(
    items: &[T],
    correct: impl Fn(&T) -> bool,
    scheme: &Stratification<'_, T>,
    level: f64,
) -> Result<Vec<Stratum>, StatsError> {
    let mut tallies = vec![(0u64, 0u64); scheme.strata.len()];
    for it in items {
        if let Some(s) = scheme.assign(it) {
            tallies[s].0 += 1;
            tallies[s].1 += correct(it) as u64;
        }
    }
    scheme
        .strata
        .iter()
        .zip(tallies)
        .map(|((label, _), (n, k))| {
            Ok(Stratum {
                label: label.clone(),
                n,
                correct: k,
                accuracy: ratio(k, n),
                ci: if n > 0 { Some(wilson_ci(k, n, level)?) } else { None },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Reference values computed with an independent statistics package.
    #[test]
    fn wilson_reference_values() {
        let cases = [
            (374, 492, 0.72051, 0.795784),
            (283, 492, 0.531108, 0.618133),
            (51, 55, 0.827401, 0.971356),
            (51, 51, 0.929953, 1.0),
            (0, 10, 0.0, 0.277533),
            (12, 21, 0.365466, 0.7553),
            (14, 16, 0.639772, 0.965023),
        ];
        for (k, n, lo, hi) in cases {
            let (l, h) = wilson_ci(k, n, 0.95).unwrap();
            assert!(close(l, lo, 1e-6) && close(h, hi, 1e-6), "{k}/{n}: {l} {h}");
        }
        assert_eq!(wilson_ci(0, 10, 0.95).unwrap().0, 0.0);
        assert!(wilson_ci(1, 0, 0.95).is_err());
        assert!(wilson_ci(3, 2, 0.95).is_err());
    }

    #[test]
    fn z_values() {
        assert!(close(z_for_level(0.95).unwrap(), 1.959963984540054, 1e-9));
        assert!(close(z_for_level(0.90).unwrap(), 1.6448536269514722, 1e-9));
        assert!(z_for_level(1.0).is_err());
    }

    /// Upper tail of chi-square(1) by Simpson integration of the normal
    /// density: P(X > x) = 2 * P(Z > sqrt(x)).
    fn chi2_tail_quadrature(x: f64) -> f64 {
        let a = x.sqrt();
        let b = a + 40.0;
        let steps = 200_000;
        let h = (b - a) / steps as f64;
        let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(a) + phi(b);
        for i in 1..steps {
            let t = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * phi(t);
        }
        2.0 * s * h / 3.0
    }

    #[test]
    fn chi2_tail_matches_table_and_quadrature() {
        for (x, p) in [
            (3.841458820694124, 0.05),
            (6.634896601021214, 0.01),
            (10.827566170662733, 0.001),
        ] {
            assert!(close(chi2_sf_1df(x), p, 1e-9), "{x}");
        }
        for x in [0.1, 1.0, 8.1, 28.62, 50.0] {
            let q = chi2_tail_quadrature(x);
            assert!(close(chi2_sf_1df(x), q, 1e-9 + 1e-6 * q), "{x}");
        }
        assert_eq!(chi2_sf_1df(0.0), 1.0);
    }

    #[test]
    fn mcnemar_examples() {
        let r = mcnemar_test(187, 96).unwrap();
        assert!(close(r.chi2, 28.62190812720848, 1e-9));
        assert!(r.p_value < 0.001);
        assert!(close(r.p_value, 8.798111961790239e-08, 1e-12));
        assert_eq!(mcnemar_test(5, 5).unwrap().chi2, 0.0);
        assert_eq!(mcnemar_test(5, 6).unwrap().chi2, 0.0);
        let r = mcnemar_test(10, 0).unwrap();
        assert!(close(r.chi2, 8.1, 1e-12));
        assert!(close(r.p_value, 0.004426525857919834, 1e-9));
        assert!(r.p_value > 0.001 && r.p_value < 0.005);
        assert!(mcnemar_test(0, 0).is_err());
    }

    fn grid(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_grid(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Brute force over individual cases: observed agreement is the mean
    /// over real (reference, predicted) pairs; chance agreement is the mean
    /// over every cross pairing of one case's reference with any case's
    /// prediction.
    fn kappa_oracle(m: &ConfusionMatrix, weight: impl Fn(usize, usize) -> f64) -> f64 {
        let mut refs = Vec::new();
        let mut preds = Vec::new();
        for (i, row) in m.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    refs.push(i);
                    preds.push(j);
                }
            }
        }
        let n = refs.len() as f64;
        let obs: f64 = refs.iter().zip(&preds).map(|(&a, &b)| weight(a, b)).sum::<f64>() / n;
        let mut exp = 0.0;
        for &a in &refs {
            for &b in &preds {
                exp += weight(a, b);
            }
        }
        exp /= n * n;
        1.0 - obs / exp
    }

    #[test]
    fn kappa_oracle_matrix() {
        let m = grid(&[&[20, 5, 0], &[5, 20, 5], &[0, 5, 20]]);
        let k_or = kappa_oracle(&m, |a, b| (a != b) as u8 as f64);
        let kw_or = kappa_oracle(&m, |a, b| ((a as f64 - b as f64) / 2.0).powi(2));
        let k = cohen_kappa(&m).unwrap();
        let kw = weighted_kappa_quadratic(&m, &[0.0, 1.0, 2.0]).unwrap();
        assert!(close(k, k_or, 1e-12));
        assert!(close(kw, kw_or, 1e-12));
        // Frozen after the oracle and an external package agreed.
        assert!(close(k, 0.6235294117647059, 1e-12));
        assert!(close(kw, 0.8, 1e-12));
    }

    #[test]
    fn kappa_edge_cases() {
        assert_eq!(cohen_kappa(&grid(&[&[25, 25], &[25, 25]])).unwrap(), 0.0);
        let d = grid(&[&[3, 0, 0], &[0, 4, 0], &[0, 0, 5]]);
        assert_eq!(cohen_kappa(&d).unwrap(), 1.0);
        assert_eq!(weighted_kappa_quadratic(&d, &[0.0, 1.0, 2.0]).unwrap(), 1.0);
        assert!(cohen_kappa(&grid(&[&[5, 0], &[0, 0]])).is_err());
        assert!(cohen_kappa(&grid(&[&[0, 0], &[0, 0]])).is_err());
        assert!(weighted_kappa_quadratic(&grid(&[&[5]]), &[0.0]).is_err());
        assert!(weighted_kappa_quadratic(&d, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn kappa_ci_behaviour() {
        let d = grid(&[&[3, 0, 0], &[0, 4, 0], &[0, 0, 5]]);
        let ci = kappa_ci(&d, false, 0.95, 500, 7).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));

        let m = grid(&[&[20, 5, 0], &[5, 20, 5], &[0, 5, 20]]);
        for weighted in [false, true] {
            let a = kappa_ci(&m, weighted, 0.95, 2000, 42).unwrap();
            let b = kappa_ci(&m, weighted, 0.95, 2000, 42).unwrap();
            assert_eq!(a, b);
            assert!(a.low <= a.estimate && a.estimate <= a.high);
            assert!(a.low < a.high);
        }
    }

    #[test]
    fn bt4_one_vs_all() {
        let d = DiagnosticMetrics::from_counts("BT-4", 52, 4, 23, 413);
        let r1 = |x: Option<f64>| (x.unwrap() * 1000.0).round() / 10.0;
        assert_eq!(r1(d.sensitivity), 69.3);
        assert_eq!(r1(d.specificity), 99.0);
        assert_eq!(r1(d.ppv), 92.9);
        assert_eq!(r1(d.npv), 94.7);
        assert_eq!((d.lr_neg.unwrap() * 100.0).round() / 100.0, 0.31);
        assert!(close(d.lr_pos_rounded.unwrap(), 69.3, 1e-9));
        assert!(close(d.lr_pos.unwrap(), 72.2, 0.5));
        assert_eq!(d.total(), 492);
    }

    #[test]
    fn one_vs_all_perfect_and_serde() {
        let m = grid(&[&[1, 0], &[0, 1]]);
        for c in ["0", "1"] {
            let d = one_vs_all(&m, c).unwrap();
            for p in [d.sensitivity, d.specificity, d.ppv, d.npv] {
                assert_eq!(p, Some(1.0));
            }
            assert_eq!(d.lr_pos, Some(f64::INFINITY));
            let json = serde_json::to_string(&d).unwrap();
            assert!(json.contains("\"lr_pos\":\"Infinity\""));
            let back: DiagnosticMetrics = serde_json::from_str(&json).unwrap();
            assert_eq!(back, d);
        }
        assert!(one_vs_all(&m, "BT-9").is_err());
    }

    #[test]
    fn per_category_rows() {
        let m = grid(&[&[51, 0, 0], &[4, 12, 5], &[0, 0, 0]]);
        let rows = per_category_sensitivity(&m, 0.95).unwrap();
        assert_eq!(rows[0].proportion, Some(1.0));
        let (lo, hi) = rows[0].ci.unwrap();
        assert!(close(lo, 0.929953, 1e-6) && hi == 1.0);
        assert!(close(rows[1].proportion.unwrap(), 12.0 / 21.0, 1e-12));
        assert_eq!(rows[2].proportion, None);
        assert_eq!(rows[2].ci, None);
    }

    #[test]
    fn concordance_examples() {
        let t = vec![true; 10];
        let q = concordance_quadrants(&t, &t).unwrap();
        assert_eq!((q.both, q.system_only, q.initial_only, q.neither), (10, 0, 0, 0));
        let a: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let b: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let q = concordance_quadrants(&a, &b).unwrap();
        assert_eq!((q.both, q.system_only, q.initial_only, q.neither), (0, 5, 5, 0));
        assert!(concordance_quadrants(&a, &b[..3]).is_err());
    }

    #[test]
    fn attribution_percentages() {
        let causes = [
            (ErrorCause::ThresholdBoundary, 52),
            (ErrorCause::ExtractionError, 34),
            (ErrorCause::AlgorithmLimitation, 18),
            (ErrorCause::GroundTruthAmbiguity, 14),
        ];
        let s = summarize_cause_counts(
            causes
                .iter()
                .flat_map(|&(c, n)| std::iter::repeat_n(c, n)),
        );
        assert_eq!(s.total, 118);
        let r1 = |x: f64| (x * 10.0).round() / 10.0;
        assert_eq!(r1(s.percent(ErrorCause::ThresholdBoundary)), 44.1);
        assert_eq!(r1(s.percent(ErrorCause::ExtractionError)), 28.8);
        assert_eq!(r1(s.percent(ErrorCause::AlgorithmLimitation)), 15.3);
        assert_eq!(r1(s.percent(ErrorCause::GroundTruthAmbiguity)), 11.9);
        assert_eq!(s.remediable, 52);
        assert_eq!(r1(s.remediable_percent), 44.1);

        let e = error_attribution_summary(&[]);
        assert_eq!(e.total, 0);
        assert!(e.causes.iter().all(|c| c.count == 0 && c.percent == 0.0));
    }

    #[test]
    fn ceiling_examples() {
        let all = vec![
            CaseOutcome {
                correct: true,
                attribution: None
            };
            4
        ];
        let c = ceiling_analysis(&all, 0).unwrap();
        assert_eq!(
            [c.current, c.perfect_extraction, c.perfect_algorithm, c.perfect_both, c.theoretical_max],
            [1.0; 5]
        );

        let mut outcomes = vec![
            CaseOutcome {
                correct: true,
                attribution: None
            };
            374
        ];
        let attrs: Vec<ErrorAttribution> = (0..118)
            .map(|i| ErrorAttribution {
                case_id: format!("c{i}"),
                cause: ErrorCause::ThresholdBoundary,
                correct_if_perfect_extraction: i < 12,
                correct_if_perfect_algorithm: (12..45).contains(&i),
                correct_if_perfect_both: (45..59).contains(&i),
            })
            .collect();
        outcomes.extend(attrs.iter().map(|a| CaseOutcome {
            correct: false,
            attribution: Some(a),
        }));
        let c = ceiling_analysis(&outcomes, 3).unwrap();
        assert!(close(c.theoretical_max, 489.0 / 492.0, 1e-12));
        assert_eq!(c.perfect_extraction_correct, 386);
        assert_eq!(c.perfect_algorithm_correct, 407);
        assert_eq!(c.perfect_both_correct, 433);
        assert!(c.current <= c.perfect_extraction && c.perfect_both <= c.theoretical_max);
    }

    #[test]
    fn stratification_first_match_wins() {
        let items: Vec<(i32, bool)> = vec![(1, true), (5, false), (5, true), (50, true), (-3, false)];
        let scheme = Stratification::new("size")
            .stratum("small", |x: &(i32, bool)| x.0 < 10 && x.0 >= 0)
            .stratum("any non-negative", |x: &(i32, bool)| x.0 >= 0)
            .stratum("empty", |_: &(i32, bool)| false);
        let s = stratified_accuracy(&items, |x| x.1, &scheme, 0.95).unwrap();
        assert_eq!((s[0].n, s[0].correct), (3, 2));
        assert_eq!((s[1].n, s[1].correct), (1, 1));
        assert_eq!(s[2].accuracy, None);
    }

    #[test]
    fn matrix_record_and_export() {
        let mut m = ConfusionMatrix::follow_up();
        m.record("BT-2", "BT-3c").unwrap();
        m.record("Other", "BT-1a").unwrap();
        assert_eq!(m.len(), 8);
        m.record("BT-0", "BT-0").unwrap();
        assert_eq!(m.labels[0], "BT-0");
        assert_eq!(m.total(), 3);
        assert!(m.record("BT-9", "BT-2").is_err());
        let csv = m.to_delimited();
        assert!(csv.lines().next().unwrap().starts_with("reference\\predicted,BT-0,BT-1a"));
        assert_eq!(csv.lines().count(), 10);
        let s = m.standard_submatrix();
        assert_eq!(s.len(), 8);
        assert_eq!(s.category_ranks().unwrap()[0], 0.0);
    }

    fn matrix_strategy(k: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
        proptest::collection::vec(proptest::collection::vec(0u64..30, k), k)
    }

    proptest! {
        #[test]
        fn wilson_contains_point(n in 1u64..2000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let (l, h) = wilson_ci(k, n, 0.95).unwrap();
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= l && l <= p && p <= h && h <= 1.0);
            let (l2, h2) = wilson_ci(2 * k, 2 * n, 0.95).unwrap();
            prop_assert!(h2 - l2 < h - l);
        }

        #[test]
        fn kappa_bounded(g in (2usize..6).prop_flat_map(matrix_strategy)) {
            let m = ConfusionMatrix::from_grid(g).unwrap();
            let ranks: Vec<f64> = (0..m.len()).map(|i| i as f64).collect();
            if let Ok(k) = cohen_kappa(&m) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
                prop_assert_eq!(k == 1.0, m.is_diagonal());
            }
            if let Ok(k) = weighted_kappa_quadratic(&m, &ranks) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
            }
        }

        #[test]
        fn two_category_weighted_equals_unweighted(g in matrix_strategy(2)) {
            let m = ConfusionMatrix::from_grid(g).unwrap();
            match (cohen_kappa(&m), weighted_kappa_quadratic(&m, &[0.0, 1.0])) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn kappa_permutation_invariant(g in matrix_strategy(4), perm in Just(vec![2usize, 0, 3, 1])) {
            let m = ConfusionMatrix::from_grid(g.clone()).unwrap();
            let p: Vec<Vec<u64>> = perm.iter().map(|&i| perm.iter().map(|&j| g[i][j]).collect()).collect();
            let mp = ConfusionMatrix::from_grid(p).unwrap();
            if let (Ok(a), Ok(b)) = (cohen_kappa(&m), cohen_kappa(&mp)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // Rank-order-preserving relabeling: evenly spaced ranks shifted
            // and scaled.
            let r1 = [0.0, 1.0, 2.0, 3.0];
            let r2 = [10.0, 12.5, 15.0, 17.5];
            if let (Ok(a), Ok(b)) = (weighted_kappa_quadratic(&m, &r1), weighted_kappa_quadratic(&m, &r2)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn one_vs_all_partitions_total(g in matrix_strategy(4)) {
            let m = ConfusionMatrix::from_grid(g).unwrap();
            for l in m.labels.clone() {
                let d = one_vs_all(&m, &l).unwrap();
                prop_assert_eq!(d.total(), m.total());
                for p in [d.sensitivity, d.specificity, d.ppv, d.npv].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}
