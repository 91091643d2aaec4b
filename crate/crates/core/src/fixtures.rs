//! Synthetic "paper-profile" cohort.
//!
//! 509 cases: 492 evaluable plus 9 without a usable baseline and 8 failing
//! volumetric QC. Each evaluable case is built from a target
//! (reference, predicted, initial) triple, a post-radiation stratum and a
//! medication stratum, then realized as volumes and a clinical note that the
//! pattern backend reads back exactly. Generation re-scores every case and
//! fails if any prediction differs from its target.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{parse_btrads_label, BtradsCategory, CaseRecord, MedicationStatus, ObservedLabel};
use crate::error::PipelineError;
use crate::evalstats::{ErrorAttribution, ErrorCause};
use crate::extractor::pattern_rules;
use crate::pipeline::{write_jsonl, PipelineConfig};
use crate::scorer::{radiation_window_status, score_case, ScoringPolicy};
use crate::volumetrics::{compute_case_volumetrics, percent_change, classify_trend, Thresholds, Trend, VolumeRow};

pub const PAPER_PROFILE_SEED: u64 = 509;
pub const NOTE_CORPUS_SIZE: usize = 400;

use BtradsCategory::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    No,
    Extraction,
    Algorithm,
    Both,
}

/// Reference-by-prediction cell counts (rows sum to the reference
/// distribution, standard columns to the predicted distribution).
const CELLS: &[(&str, BtradsCategory, usize)] = &[
    ("BT-1a", Bt1a, 51),
    ("BT-1a", Bt1b, 4),
    ("BT-1b", Bt1b, 51),
    ("BT-2", Bt2, 108),
    ("BT-2", Bt1a, 18),
    ("BT-2", Bt1b, 5),
    ("BT-2", Bt3b, 5),
    ("BT-2", Bt3c, 20),
    ("BT-3a", Bt3a, 14),
    ("BT-3a", Bt3b, 1),
    ("BT-3a", Bt3c, 1),
    ("BT-3b", Bt3b, 12),
    ("BT-3b", Bt1a, 3),
    ("BT-3b", Bt2, 4),
    ("BT-3b", Bt3a, 1),
    ("BT-3b", Bt4, 1),
    ("BT-3c", Bt3c, 86),
    ("BT-3c", Bt1a, 2),
    ("BT-3c", Bt1b, 2),
    ("BT-3c", Bt2, 17),
    ("BT-3c", Bt3b, 5),
    ("BT-3c", Bt4, 3),
    ("BT-4", Bt4, 52),
    ("BT-4", Bt1a, 2),
    ("BT-4", Bt1b, 5),
    ("BT-4", Bt3a, 1),
    ("BT-4", Bt3b, 2),
    ("BT-4", Bt3c, 13),
    ("BT-1", Bt1a, 1),
    ("BT-3", Bt3b, 1),
    ("BT-3", Bt3c, 1),
];

use ErrorCause::{AlgorithmLimitation as Alg, ExtractionError as Ext, GroundTruthAmbiguity as Gt, ThresholdBoundary as Thr};

/// Cause and counterfactual fix for each misclassified cell.
const ERRORS: &[(&str, BtradsCategory, &[(usize, ErrorCause, Fix)])] = &[
    ("BT-1a", Bt1b, &[(4, Ext, Fix::Extraction)]),
    ("BT-2", Bt1a, &[(15, Thr, Fix::Algorithm), (3, Thr, Fix::No)]),
    ("BT-2", Bt1b, &[(2, Ext, Fix::Extraction), (3, Ext, Fix::Both)]),
    ("BT-2", Bt3b, &[(5, Thr, Fix::No)]),
    ("BT-2", Bt3c, &[(20, Thr, Fix::No)]),
    ("BT-3a", Bt3b, &[(1, Ext, Fix::Extraction)]),
    ("BT-3a", Bt3c, &[(1, Ext, Fix::Extraction)]),
    ("BT-3b", Bt1a, &[(3, Alg, Fix::Algorithm)]),
    ("BT-3b", Bt2, &[(4, Thr, Fix::No)]),
    ("BT-3b", Bt3a, &[(1, Ext, Fix::Extraction)]),
    ("BT-3b", Bt4, &[(1, Gt, Fix::No)]),
    ("BT-3c", Bt1a, &[(2, Alg, Fix::Algorithm)]),
    ("BT-3c", Bt1b, &[(2, Ext, Fix::Extraction)]),
    ("BT-3c", Bt2, &[(1, Ext, Fix::No), (9, Alg, Fix::Algorithm), (7, Gt, Fix::No)]),
    ("BT-3c", Bt3b, &[(5, Thr, Fix::No)]),
    ("BT-3c", Bt4, &[(3, Gt, Fix::No)]),
    ("BT-4", Bt1a, &[(2, Alg, Fix::Algorithm)]),
    ("BT-4", Bt1b, &[(5, Ext, Fix::Both)]),
    ("BT-4", Bt3a, &[(1, Ext, Fix::Extraction)]),
    ("BT-4", Bt3b, &[(2, Alg, Fix::Algorithm)]),
    ("BT-4", Bt3c, &[(6, Ext, Fix::Both), (7, Ext, Fix::No)]),
    ("BT-1", Bt1a, &[(1, Gt, Fix::No)]),
    ("BT-3", Bt3b, &[(1, Gt, Fix::No)]),
    ("BT-3", Bt3c, &[(1, Gt, Fix::No)]),
];

/// Misclassified cells where the initial clinical label is also wrong.
const NEITHER: &[(&str, BtradsCategory, usize, &str)] = &[
    ("BT-2", Bt3c, 5, "BT-3c"),
    ("BT-3c", Bt2, 5, "BT-2"),
    ("BT-4", Bt3c, 4, "BT-3c"),
    ("BT-2", Bt1a, 5, "BT-1a"),
    ("BT-1", Bt1a, 1, "BT-2"),
    ("BT-3", Bt3b, 1, "BT-3c"),
    ("BT-3", Bt3c, 1, "BT-4"),
];

/// Wrong initial labels among correctly scored cases, per reference row.
const INITIAL_WRONG: &[(&str, &[(usize, &[&str])])] = &[
    ("BT-1a", &[(14, &["BT-1b"]), (3, &["BT-1"]), (8, &["BT-2"])]),
    ("BT-1b", &[(13, &["BT-1a"]), (3, &["BT-1"]), (2, &["BT-1c"]), (7, &["BT-2"])]),
    ("BT-2", &[(5, &["BT-2b"]), (55, &["BT-3c", "BT-1a", "BT-3b"])]),
    ("BT-3a", &[(13, &["BT-3c", "BT-4", "BT-3b"])]),
    ("BT-3b", &[(2, &["BT-3"]), (5, &["BT-3c", "BT-2"])]),
    ("BT-3c", &[(12, &["BT-3"]), (2, &["BT-3d"]), (26, &["BT-4", "BT-2", "BT-3b"])]),
    ("BT-4", &[(4, &["BT-4a"]), (13, &["BT-3c"])]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rt {
    Within,
    Mid,
    Late,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Meds {
    Bev,
    Steroid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Special {
    /// FLAIR 10 -> 33.1 mL, enhancement 4 -> 11.48 mL.
    MajorProgression,
    /// Enhancement 1.0 -> 29.82 mL.
    EnhancementSurge,
    /// Enhancement 2 -> 0 mL.
    EnhancementResolved,
    FlairMinus87,
    FlairPlus854,
}

#[derive(Debug, Clone)]
struct Spec {
    reference: &'static str,
    pred: BtradsCategory,
    cause: Option<ErrorCause>,
    fix: Fix,
    initial: &'static str,
    boundary: bool,
    rt: Option<Rt>,
    meds: Option<Meds>,
    special: Option<Special>,
}

impl Spec {
    fn correct(&self) -> bool {
        parse_btrads_label(self.reference).matches(self.pred)
    }

    fn standard_reference(&self) -> bool {
        parse_btrads_label(self.reference).standard().is_some()
    }
}

fn build_specs() -> Vec<Spec> {
    let mut specs = Vec::new();
    for &(reference, pred, n) in CELLS {
        let mut groups: Vec<(ErrorCause, Fix)> = ERRORS
            .iter()
            .filter(|(r, p, _)| *r == reference && *p == pred)
            .flat_map(|(_, _, g)| g.iter().flat_map(|&(k, c, f)| std::iter::repeat_n((c, f), k)))
            .collect();
        let mut neither: Vec<&'static str> = NEITHER
            .iter()
            .filter(|(r, p, _, _)| *r == reference && *p == pred)
            .flat_map(|&(_, _, k, l)| std::iter::repeat_n(l, k))
            .collect();
        groups.reverse();
        neither.reverse();
        let boundary = matches!(
            (reference, pred),
            ("BT-2", Bt1a) | ("BT-2", Bt3b) | ("BT-2", Bt3c) | ("BT-3b", Bt2) | ("BT-3c", Bt3b)
        );
        for _ in 0..n {
            let (cause, fix) = match groups.pop() {
                Some((c, f)) => (Some(c), f),
                None => (None, Fix::No),
            };
            let initial = neither.pop().unwrap_or(reference);
            specs.push(Spec {
                reference,
                pred,
                cause,
                fix,
                initial,
                boundary: boundary && cause == Some(Thr),
                rt: None,
                meds: None,
                special: None,
            });
        }
    }
    // Wrong initial labels for correctly scored cases.
    for &(reference, groups) in INITIAL_WRONG {
        let mut labels: Vec<&'static str> = Vec::new();
        for &(k, opts) in groups {
            labels.extend((0..k).map(|i| opts[i % opts.len()]));
        }
        let mut it = labels.into_iter();
        for s in specs.iter_mut().filter(|s| s.reference == reference && s.correct()) {
            match it.next() {
                Some(l) => s.initial = l,
                None => break,
            }
        }
    }
    specs
}

fn take<'a>(pool: &mut Vec<usize>, n: usize, what: &str) -> Result<Vec<usize>, PipelineError> {
    if pool.len() < n {
        return Err(PipelineError::Validation(format!("fixture quota {what}: need {n}, have {}", pool.len())));
    }
    Ok(pool.split_off(pool.len() - n))
}

fn split_by_correct(specs: &[Spec], idx: impl Iterator<Item = usize>) -> (Vec<usize>, Vec<usize>) {
    idx.partition(|&i| specs[i].correct())
}

fn assign_strata(specs: &mut [Spec], rng: &mut ChaCha8Rng) -> Result<(), PipelineError> {
    let standard: Vec<usize> = (0..specs.len()).filter(|&i| specs[i].standard_reference()).collect();
    for i in 0..specs.len() {
        if !specs[i].standard_reference() {
            specs[i].rt = Some(Rt::Late);
            specs[i].meds = Some(Meds::None);
        }
    }

    // Post-radiation strata.
    let of_pred = |specs: &[Spec], c: BtradsCategory| -> Vec<usize> {
        standard.iter().copied().filter(|&i| specs[i].pred == c).collect()
    };
    for i in of_pred(specs, Bt3a) {
        specs[i].rt = Some(Rt::Within);
    }
    for c in [Bt1a, Bt1b, Bt2] {
        let (mut ok, mut bad) = split_by_correct(specs, of_pred(specs, c).into_iter());
        ok.shuffle(rng);
        bad.shuffle(rng);
        for i in take(&mut ok, 5, "within/correct")?.into_iter().chain(take(&mut bad, 3, "within/wrong")?) {
            specs[i].rt = Some(Rt::Within);
        }
    }
    let rest = standard.iter().copied().filter(|&i| specs[i].rt.is_none());
    let (mut ok, mut bad) = split_by_correct(specs, rest);
    ok.shuffle(rng);
    bad.shuffle(rng);
    for (rt, nc, nw) in [(Rt::Unknown, 59, 25), (Rt::Mid, 74, 11)] {
        for i in take(&mut ok, nc, "rt/correct")?.into_iter().chain(take(&mut bad, nw, "rt/wrong")?) {
            specs[i].rt = Some(rt);
        }
    }
    for i in ok.into_iter().chain(bad) {
        specs[i].rt = Some(Rt::Late);
    }

    // Medication strata.
    for i in of_pred(specs, Bt1a) {
        specs[i].meds = Some(Meds::None);
    }
    let (mut ok, mut bad) = split_by_correct(specs, of_pred(specs, Bt1b).into_iter());
    ok.shuffle(rng);
    bad.shuffle(rng);
    for (m, nc, nw) in [(Meds::Bev, 34, 10), (Meds::Steroid, 17, 6)] {
        for i in take(&mut ok, nc, "1b/correct")?.into_iter().chain(take(&mut bad, nw, "1b/wrong")?) {
            specs[i].meds = Some(m);
        }
    }
    let rest = standard.iter().copied().filter(|&i| specs[i].meds.is_none());
    let (mut ok, mut bad) = split_by_correct(specs, rest);
    ok.shuffle(rng);
    bad.shuffle(rng);
    for (m, nc, nw) in [(Meds::None, 135, 37), (Meds::Bev, 91, 32), (Meds::Steroid, 46, 5)] {
        for i in take(&mut ok, nc, "meds/correct")?.into_iter().chain(take(&mut bad, nw, "meds/wrong")?) {
            specs[i].meds = Some(m);
        }
    }
    if !(ok.is_empty() && bad.is_empty()) {
        return Err(PipelineError::Validation("medication quotas do not cover the cohort".into()));
    }

    // Named extremes, each on the first case meeting its constraints.
    let wants: [(Special, BtradsCategory, Option<Rt>, Option<Meds>); 5] = [
        (Special::MajorProgression, Bt4, Some(Rt::Late), Some(Meds::None)),
        (Special::EnhancementSurge, Bt3c, None, None),
        (Special::EnhancementResolved, Bt1b, None, Some(Meds::Bev)),
        (Special::FlairMinus87, Bt1a, None, None),
        (Special::FlairPlus854, Bt3b, None, None),
    ];
    for (sp, pred, rt, meds) in wants {
        let i = standard
            .iter()
            .copied()
            .find(|&i| {
                let s = &specs[i];
                s.special.is_none()
                    && s.correct()
                    && s.pred == pred
                    && rt.is_none_or(|r| s.rt == Some(r))
                    && meds.is_none_or(|m| s.meds == Some(m))
            })
            .ok_or_else(|| PipelineError::Validation(format!("no case available for {sp:?}")))?;
        specs[i].special = Some(sp);
    }
    Ok(())
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pct_for(rng: &mut ChaCha8Rng, t: Trend, boundary: bool) -> f64 {
    match (t, boundary) {
        (Trend::Improved, true) => rng.random_range(-24.0..-21.0),
        (Trend::Improved, false) => rng.random_range(-85.0..-25.0),
        (Trend::Stable, true) => {
            let m = rng.random_range(15.5..19.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        }
        (Trend::Stable, false) => rng.random_range(-15.0..15.0),
        (Trend::Worse, true) => rng.random_range(21.0..25.0),
        (Trend::Worse, false) => rng.random_range(22.0..39.0),
        (Trend::MajorWorse, _) => rng.random_range(45.0..320.0),
    }
}

/// Target (FLAIR, enhancement) trends for a predicted category.
fn trend_pair(rng: &mut ChaCha8Rng, s: &Spec) -> (Trend, Trend, bool, bool) {
    use Trend::*;
    let b = s.boundary;
    match (s.reference, s.pred, b) {
        ("BT-2", Bt1a, true) => {
            if rng.random_bool(0.5) {
                (Improved, Stable, true, false)
            } else {
                (Stable, Improved, false, true)
            }
        }
        ("BT-2", Bt3b, true) => (Worse, Stable, true, false),
        ("BT-2", Bt3c, true) => (Stable, Worse, false, true),
        ("BT-3b", Bt2, true) => (Stable, Stable, true, false),
        ("BT-3c", Bt3b, true) => (Worse, Stable, false, true),
        _ => {
            let opts: &[(Trend, Trend)] = match s.pred {
                Bt1a | Bt1b => &[(Improved, Improved), (Improved, Stable), (Stable, Improved)],
                Bt2 => &[(Stable, Stable)],
                Bt3a => &[(MajorWorse, Stable), (Stable, Worse), (Worse, Worse), (MajorWorse, MajorWorse), (Improved, Worse)],
                Bt3b => &[(Worse, Stable), (MajorWorse, Stable), (Worse, Improved), (MajorWorse, Improved)],
                Bt3c => &[(Stable, Worse), (Stable, MajorWorse), (Improved, Worse), (Improved, MajorWorse), (Worse, Worse)],
                Bt4 | Bt0 => &[(MajorWorse, MajorWorse), (MajorWorse, Worse), (Worse, MajorWorse)],
            };
            let (f, e) = *opts.choose(rng).expect("options");
            (f, e, false, false)
        }
    }
}

struct Volumes {
    bf: f64,
    ff: f64,
    be: f64,
    fe: f64,
}

fn realize_compartment(rng: &mut ChaCha8Rng, t: Trend, boundary: bool, lo: f64, hi: f64) -> (f64, f64) {
    loop {
        let base = round2(rng.random_range(lo..hi));
        let p = pct_for(rng, t, boundary);
        let fu = round2(base * (1.0 + p / 100.0)).max(0.0);
        let change = percent_change(base, fu).expect("valid volumes");
        if classify_trend(change) == t {
            return (base, fu);
        }
    }
}

fn realize_volumes(rng: &mut ChaCha8Rng, s: &Spec) -> Volumes {
    match s.special {
        Some(Special::MajorProgression) => return Volumes { bf: 10.0, ff: 33.1, be: 4.0, fe: 11.48 },
        Some(Special::EnhancementSurge) => return Volumes { bf: 30.0, ff: 31.2, be: 1.0, fe: 29.82 },
        Some(Special::EnhancementResolved) => return Volumes { bf: 24.6, ff: 23.1, be: 2.0, fe: 0.0 },
        Some(Special::FlairMinus87) => return Volumes { bf: 40.0, ff: 5.2, be: 1.5, fe: 1.4 },
        Some(Special::FlairPlus854) => return Volumes { bf: 5.0, ff: 47.7, be: 2.0, fe: 2.1 },
        None => {}
    }
    let (ft, et, fb, eb) = trend_pair(rng, s);
    let (bf, ff) = realize_compartment(rng, ft, fb, 8.0, 90.0);
    // Some non-enhancing tumors, and some new enhancement from zero.
    let zero_ok = et == Trend::Stable && !eb && rng.random_bool(0.08);
    let new_from_zero = et == Trend::MajorWorse && rng.random_bool(0.08);
    let (be, fe) = if zero_ok {
        (0.0, 0.0)
    } else if new_from_zero {
        (0.0, round2(rng.random_range(0.3..3.0)))
    } else {
        realize_compartment(rng, et, eb, 0.8, 25.0)
    };
    Volumes { bf, ff, be, fe }
}

fn medication_statuses(rng: &mut ChaCha8Rng, s: &Spec) -> (MedicationStatus, MedicationStatus) {
    use MedicationStatus as M;
    // A recent stop with worsening outside the radiation window would score
    // BT-3a, so worsening predictions only see active or absent drugs.
    let worsening = matches!(s.pred, Bt3b | Bt3c | Bt4);
    match s.meds.unwrap_or(Meds::None) {
        Meds::None => (M::None, M::None),
        Meds::Bev => {
            let steroid = if worsening {
                *[M::None, M::None, M::Active].choose(rng).unwrap()
            } else {
                *[M::None, M::None, M::Active, M::Recent].choose(rng).unwrap()
            };
            (steroid, M::Active)
        }
        Meds::Steroid => {
            let steroid = if worsening { M::Active } else { *[M::Active, M::Active, M::Recent].choose(rng).unwrap() };
            (steroid, M::None)
        }
    }
}

fn long_date(d: NaiveDate) -> String {
    d.format("%B %-d, %Y").to_string()
}

fn fill(t: &str, rng: &mut ChaCha8Rng, date: Option<NaiveDate>) -> String {
    let mut s = t.to_string();
    if let Some(d) = date {
        s = s.replace("{iso}", &d.to_string()).replace("{long}", &long_date(d));
    }
    s.replace("{dose}", ["1", "2", "4", "0.5"].choose(rng).unwrap())
        .replace("{pdose}", ["5", "10", "20"].choose(rng).unwrap())
        .replace("{weeks}", ["2", "3", "4", "6"].choose(rng).unwrap())
        .replace("{cycle}", ["3", "4", "6", "8", "12"].choose(rng).unwrap())
}

const STEROID_ACTIVE: &[&str] = &[
    "Continues dexamethasone {dose} mg daily.",
    "On dexamethasone {dose} mg twice daily.",
    "Currently taking prednisone {pdose} mg daily.",
    "Remains on Decadron {dose} mg.",
];
const STEROID_RECENT: &[&str] = &[
    "Dexamethasone was tapered off {weeks} weeks ago.",
    "Steroids were discontinued last month.",
    "Completed a dexamethasone taper {weeks} weeks ago.",
    "Prednisone stopped after a short course.",
];
const STEROID_NONE: &[&str] = &["Not on steroids.", "No steroid use.", ""];
const BEV_ACTIVE: &[&str] = &[
    "Continues bevacizumab 10 mg/kg every 2 weeks.",
    "Receiving Avastin every 3 weeks.",
    "On bevacizumab, cycle {cycle}.",
];
const BEV_RECENT: &[&str] = &[
    "Avastin held since last month.",
    "Bevacizumab was discontinued {weeks} weeks ago.",
    "Bevacizumab stopped after cycle {cycle}.",
];
const BEV_NONE: &[&str] = &["Not on bevacizumab.", "", ""];
const RT_DATED: &[&str] = &[
    "Completed chemoradiation on {iso}.",
    "Completed radiation therapy {long}.",
    "RT completed {iso} with concurrent temozolomide.",
    "Status post chemoradiation, completed {long}.",
    "Finished radiotherapy on {iso}.",
];
const RT_UNDATED: &[&str] = &[
    "",
    "Radiation was delivered at an outside hospital and the completion date is not available.",
    "History of chemoradiation, dates not documented.",
];
const OPENERS: &[&str] = &[
    "Neuro-oncology follow-up visit.",
    "Interval history reviewed in clinic.",
    "Follow-up for glioblastoma, IDH-wildtype, status post resection.",
    "Patient returns for surveillance imaging review.",
];
const CLOSERS: &[&str] = &[
    "Plan: repeat MRI in 8 weeks.",
    "Continue temozolomide per protocol.",
    "Neurologic exam is stable.",
    "Mild fatigue, no new deficits.",
];

fn choose_template(rng: &mut ChaCha8Rng, list: &[&'static str]) -> &'static str {
    list.choose(rng).copied().unwrap_or("")
}

fn compose_note(
    rng: &mut ChaCha8Rng,
    steroid: MedicationStatus,
    bev: MedicationStatus,
    rt_date: Option<NaiveDate>,
    followup: NaiveDate,
) -> String {
    use MedicationStatus as M;
    let mut body: Vec<String> = Vec::new();
    let st = match steroid {
        M::Active => STEROID_ACTIVE,
        M::Recent => STEROID_RECENT,
        M::None => STEROID_NONE,
    };
    let bv = match bev {
        M::Active => BEV_ACTIVE,
        M::Recent => BEV_RECENT,
        M::None => BEV_NONE,
    };
    body.push(fill(choose_template(rng, st), rng, None));
    body.push(fill(choose_template(rng, bv), rng, None));
    body.shuffle(rng);
    let rt = match rt_date {
        Some(d) => fill(choose_template(rng, RT_DATED), rng, Some(d)),
        None => choose_template(rng, RT_UNDATED).to_string(),
    };
    let mut parts = vec![choose_template(rng, OPENERS).to_string()];
    if rng.random_bool(0.3) {
        let seen = followup - Duration::days(rng.random_range(20..80));
        parts.push(format!("Last clinic visit {seen}."));
    }
    parts.push(rt);
    if rng.random_bool(0.15) {
        parts.push("Re-irradiation will be discussed at tumor board if needed.".into());
    }
    parts.extend(body);
    parts.push(choose_template(rng, CLOSERS).to_string());
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

/// One note of the labeled extraction corpus with its gold values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledNote {
    pub id: String,
    pub note: String,
    pub steroid_status: MedicationStatus,
    pub bevacizumab_status: MedicationStatus,
    pub radiation_completion_date: Option<NaiveDate>,
}

/// Everything the paper-profile run needs, ready to write to disk.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub cases: Vec<CaseRecord>,
    pub volumes: Vec<VolumeRow>,
    pub attributions: Vec<ErrorAttribution>,
    pub config: PipelineConfig,
    pub note_corpus: Vec<LabeledNote>,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), PipelineError> {
    if cond {
        Ok(())
    } else {
        Err(PipelineError::Validation(msg()))
    }
}

fn realize_case(rng: &mut ChaCha8Rng, s: &Spec, case_id: String) -> Result<CaseRecord, PipelineError> {
    let followup = date(2018, 6, 1) + Duration::days(rng.random_range(0..2000));
    let baseline = followup - Duration::days(rng.random_range(42..=183));
    let rt_date = match s.rt.unwrap_or(Rt::Unknown) {
        Rt::Within => Some(followup - Duration::days(rng.random_range(21..=89))),
        Rt::Mid => Some(followup - Duration::days(rng.random_range(90..=180))),
        Rt::Late => Some(followup - Duration::days(rng.random_range(181..=1500))),
        Rt::Unknown => None,
    };
    let (steroid, bev) = medication_statuses(rng, s);
    let v = realize_volumes(rng, s);
    let note = compose_note(rng, steroid, bev, rt_date, followup);
    let record = CaseRecord {
        baseline_exam_id: Some(format!("{case_id}-base")),
        case_id,
        baseline_date: Some(baseline),
        followup_date: followup,
        baseline_flair_ml: Some(v.bf),
        followup_flair_ml: v.ff,
        baseline_enh_ml: Some(v.be),
        followup_enh_ml: v.fe,
        note_text: note,
        reference_label: Some(parse_btrads_label(s.reference)),
        initial_clinical_label: Some(parse_btrads_label(s.initial)),
    };

    // Self-check: extraction reads back the intended values and the score
    // matches the target prediction.
    let vars = pattern_rules(&record.note_text);
    check(
        vars.steroid_status == steroid && vars.bevacizumab_status == bev && vars.radiation_completion_date == rt_date,
        || format!("{}: note does not extract as intended: {:?}", record.case_id, record.note_text),
    )?;
    let vol = compute_case_volumetrics(&record, &Thresholds::default())?;
    let window = radiation_window_status(vars.radiation_completion_date, record.followup_date);
    let got = score_case(vol.as_ref(), &vars, window, ScoringPolicy::default()).category;
    check(got == s.pred, || format!("{}: scored {got}, target {}", record.case_id, s.pred))?;
    Ok(record)
}

fn excluded_case(rng: &mut ChaCha8Rng, case_id: String, kind: usize) -> CaseRecord {
    let followup = date(2018, 6, 1) + Duration::days(rng.random_range(0..2000));
    let rt = Some(followup - Duration::days(rng.random_range(181..=900)));
    let note = compose_note(rng, MedicationStatus::None, MedicationStatus::None, rt, followup);
    let label = *["BT-2", "BT-3c", "BT-4", "BT-1a"].choose(rng).unwrap();
    let mut r = CaseRecord {
        baseline_exam_id: Some(format!("{case_id}-base")),
        case_id,
        baseline_date: None,
        followup_date: followup,
        baseline_flair_ml: None,
        followup_flair_ml: round2(rng.random_range(8.0..60.0)),
        baseline_enh_ml: None,
        followup_enh_ml: round2(rng.random_range(0.5..10.0)),
        note_text: note,
        reference_label: Some(parse_btrads_label(label)),
        initial_clinical_label: Some(parse_btrads_label(label)),
    };
    match kind {
        // No baseline exam at all.
        0 => r.baseline_exam_id = None,
        // Baseline too far back.
        _ => {
            let gap = [214, 365, 802, 1575][kind % 4];
            r.baseline_date = Some(followup - Duration::days(gap));
            r.baseline_flair_ml = Some(round2(r.followup_flair_ml * 0.9));
            r.baseline_enh_ml = Some(round2(r.followup_enh_ml * 1.1));
        }
    }
    r
}

/// Generate the paper-profile cohort deterministically from `seed`.
pub fn paper_profile(seed: u64) -> Result<FixtureSet, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = build_specs();
    check(specs.len() == 492, || format!("{} evaluable specs", specs.len()))?;
    assign_strata(&mut specs, &mut rng)?;

    // Interleave evaluable and excluded cases under shuffled ids.
    enum Slot {
        Eval(usize),
        NoBaseline(usize),
        Qc,
    }
    let mut slots: Vec<Slot> = (0..specs.len()).map(Slot::Eval).collect();
    slots.extend((0..9).map(|k| Slot::NoBaseline(if k < 5 { 0 } else { k - 4 })));
    slots.extend((0..8).map(|_| Slot::Qc));
    slots.shuffle(&mut rng);

    let mut cases = Vec::with_capacity(slots.len());
    let mut volumes = Vec::new();
    let mut attributions = Vec::new();
    for (n, slot) in slots.iter().enumerate() {
        let id = format!("case-{:04}", n + 1);
        let (record, qc_pass) = match slot {
            Slot::Eval(i) => {
                let s = &specs[*i];
                let r = realize_case(&mut rng, s, id.clone())?;
                if let Some(cause) = s.cause {
                    attributions.push(ErrorAttribution {
                        case_id: id.clone(),
                        cause,
                        correct_if_perfect_extraction: s.fix == Fix::Extraction,
                        correct_if_perfect_algorithm: s.fix == Fix::Algorithm,
                        correct_if_perfect_both: s.fix == Fix::Both,
                    });
                }
                (r, true)
            }
            Slot::NoBaseline(kind) => (excluded_case(&mut rng, id.clone(), *kind), true),
            Slot::Qc => {
                let spec = Spec {
                    reference: "BT-2",
                    pred: Bt2,
                    cause: None,
                    fix: Fix::No,
                    initial: "BT-2",
                    boundary: false,
                    rt: Some(Rt::Late),
                    meds: Some(Meds::None),
                    special: None,
                };
                (realize_case(&mut rng, &spec, id.clone())?, false)
            }
        };
        volumes.push(VolumeRow {
            exam_id: record.case_id.clone(),
            flair_ml: record.followup_flair_ml,
            enh_ml: record.followup_enh_ml,
            qc_pass,
        });
        if let (Some(b), Some(f), Some(e)) = (&record.baseline_exam_id, record.baseline_flair_ml, record.baseline_enh_ml) {
            volumes.push(VolumeRow {
                exam_id: b.clone(),
                flair_ml: f,
                enh_ml: e,
                qc_pass: true,
            });
        }
        cases.push(record);
    }

    let config = PipelineConfig {
        volumetrics_table: Some("volumes.csv".into()),
        attributions: Some("attributions.jsonl".into()),
        ..Default::default()
    };
    Ok(FixtureSet {
        cases,
        volumes,
        attributions,
        config,
        note_corpus: labeled_note_corpus(seed, NOTE_CORPUS_SIZE),
    })
}

const HARD_STEROID: &[(&str, MedicationStatus)] = &[
    ("Dexamethasone was restarted after being discontinued in May.", MedicationStatus::Active),
    ("Weaned off dexamethasone over the past month.", MedicationStatus::Recent),
    ("Decadron 2 mg BID.", MedicationStatus::Active),
    ("Dexamethasone was increased to 4 mg daily for headaches.", MedicationStatus::Active),
    ("Prednisone is no longer needed.", MedicationStatus::Recent),
];
const HARD_BEV: &[(&str, MedicationStatus)] = &[
    ("Bevacizumab every 2 weeks, last dose 3 days ago.", MedicationStatus::Active),
    ("Avastin infusions continue without interruption.", MedicationStatus::Active),
    ("Bevacizumab is currently on hold for wound healing.", MedicationStatus::Recent),
];

/// Labeled notes with wider phrasing than the cohort notes, including a
/// small share of constructions the pattern rules are not built for.
pub fn labeled_note_corpus(seed: u64, n: usize) -> Vec<LabeledNote> {
    use MedicationStatus as M;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    (0..n)
        .map(|i| {
            let followup = date(2019, 1, 1) + Duration::days(rng.random_range(0..1800));
            let steroid = *[M::None, M::Active, M::Recent].choose(&mut rng).unwrap();
            let bev = *[M::None, M::None, M::Active, M::Recent].choose(&mut rng).unwrap();
            let rt = rng
                .random_bool(0.8)
                .then(|| followup - Duration::days(rng.random_range(15..1200)));
            let mut note = compose_note(&mut rng, steroid, bev, rt, followup);
            let (mut steroid, mut bev) = (steroid, bev);
            // Replace a medication sentence with a harder phrasing now and then.
            if rng.random_bool(0.06) {
                let (text, gold) = *HARD_STEROID.choose(&mut rng).unwrap();
                note = without_drug(&note, &crate::extractor::patterns::steroid_regex());
                note.push(' ');
                note.push_str(text);
                steroid = gold;
            }
            if rng.random_bool(0.05) {
                let (text, gold) = *HARD_BEV.choose(&mut rng).unwrap();
                note = without_drug(&note, &crate::extractor::patterns::bevacizumab_regex());
                note.push(' ');
                note.push_str(text);
                bev = gold;
            }
            let mut radiation = rt;
            if rt.is_some() && rng.random_bool(0.03) {
                // Day-month-year order is outside the supported date forms.
                let d = rt.unwrap();
                note = format!(
                    "Radiation completed {} {}. {}",
                    d.format("%-d"),
                    d.format("%B %Y"),
                    without_radiation(&note)
                );
                radiation = rt;
            }
            LabeledNote {
                id: format!("note-{:04}", i + 1),
                note,
                steroid_status: steroid,
                bevacizumab_status: bev,
                radiation_completion_date: radiation,
            }
        })
        .collect()
}

fn split_sentences(note: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let b = note.as_bytes();
    for i in 0..b.len() {
        if b[i] == b'.' && (i + 1 == b.len() || b[i + 1] == b' ') && !note[start..i].ends_with(" Dr") {
            let s = note[start..=i].trim();
            // Keep decimals like "0.5 mg" together: a period followed by a space ends a sentence.
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    if start < note.len() && !note[start..].trim().is_empty() {
        out.push(note[start..].trim());
    }
    out
}

fn without_drug(note: &str, re: &regex::Regex) -> String {
    split_sentences(note)
        .into_iter()
        .filter(|s| !re.is_match(s))
        .collect::<Vec<_>>()
        .join(" ")
}

fn without_radiation(note: &str) -> String {
    let re = crate::extractor::patterns::radiation_regex();
    split_sentences(note)
        .into_iter()
        .filter(|s| !re.is_match(s))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-variable accuracy of the pattern backend on a labeled corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusAccuracy {
    pub n: usize,
    pub steroid: f64,
    pub bevacizumab: f64,
    pub radiation_date: f64,
}

impl CorpusAccuracy {
    pub fn min(&self) -> f64 {
        self.steroid.min(self.bevacizumab).min(self.radiation_date)
    }
}

pub fn pattern_accuracy(corpus: &[LabeledNote]) -> CorpusAccuracy {
    let n = corpus.len();
    let mut hits = [0usize; 3];
    for item in corpus {
        let v = pattern_rules(&item.note);
        hits[0] += (v.steroid_status == item.steroid_status) as usize;
        hits[1] += (v.bevacizumab_status == item.bevacizumab_status) as usize;
        hits[2] += (v.radiation_completion_date == item.radiation_completion_date) as usize;
    }
    let f = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    CorpusAccuracy {
        n,
        steroid: f(hits[0]),
        bevacizumab: f(hits[1]),
        radiation_date: f(hits[2]),
    }
}

pub const CASES_FILE: &str = "cases.jsonl";
pub const VOLUMES_FILE: &str = "volumes.csv";
pub const ATTRIBUTIONS_FILE: &str = "attributions.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const NOTE_CORPUS_FILE: &str = "note_corpus.jsonl";

pub fn write_fixture_set(dir: impl AsRef<Path>, set: &FixtureSet) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    write_jsonl(dir.join(CASES_FILE), &set.cases)?;
    write_jsonl(dir.join(ATTRIBUTIONS_FILE), &set.attributions)?;
    write_jsonl(dir.join(NOTE_CORPUS_FILE), &set.note_corpus)?;
    let vol_path = dir.join(VOLUMES_FILE);
    let f = fs::File::create(&vol_path).map_err(|e| PipelineError::io(&vol_path, e))?;
    crate::volumetrics::write_volume_table(f, &set.volumes).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, set.config.to_toml_string()).map_err(|e| PipelineError::io(&cfg_path, e))?;
    Ok(())
}

/// Count of evaluable fixture cases per reference label.
pub fn reference_distribution(cases: &[CaseRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in cases {
        if let Some(l) = &c.reference_label {
            let key = match l {
                ObservedLabel::Standard(c) => c.as_str().to_string(),
                ObservedLabel::NonStandard { .. } => "Other".to_string(),
            };
            *out.entry(key).or_insert(0) += 1;
        }
    }
    out
}
