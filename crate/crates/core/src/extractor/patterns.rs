//! Keyword and cue rules over note sentences.
//!
//! A note is split into sentences, and each sentence into comma/conjunction
//! fragments. A fragment naming a drug opens a clause that runs on through
//! following fragments until another drug is named or the sentence ends.
//! Each clause is resolved to `recent`, `active`, or nothing:
//!
//! * a discontinuation cue (tapered, discontinued, stopped, held, ...) gives
//!   `recent`, overriding weak ongoing cues such as "on" or a dose;
//! * a strong ongoing cue ("continues", "remains", "currently") together with
//!   a discontinuation cue in one clause takes whichever comes later and is a
//!   conflict;
//! * a negated mention ("no steroids", "not on Avastin") is ignored.
//!
//! When clauses disagree the last one wins and the variable is marked as
//! conflicting. The radiation completion date is the first ISO or
//! "Month DD, YYYY" date in the first sentence mentioning radiation.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;

use crate::domain::{ClinicalVariables, EvidenceSpan, MedicationStatus, Variable};

static STEROID: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(dexamethasone|decadron|dex|prednisone|prednisolone|methylprednisolone|medrol|hydrocortisone|corticosteroids?|steroids?)\b",
    )
    .unwrap()
});

static BEVACIZUMAB: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(bevacizumab|avastin|mvasi|zirabev|bev)\b").unwrap());

static RECENT_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(tapered|tapering|taper|discontinued|discontinue|discontinuation|stopped|stop|held|holding|hold|weaned|weaning|off|no longer|completed|finished|last dose|ceased)\b",
    )
    .unwrap()
});

static STRONG_ACTIVE_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(continues|continue|continued|continuing|remains|currently|ongoing|still)\b")
        .unwrap()
});

static WEAK_ACTIVE_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(on|receiving|receives|received|started|restarted|resumed|taking|takes|maintained|increased|initiated|\d+(\.\d+)?\s*mg|daily|bid|tid|q\s?\d+\s?(h|hrs?|weeks?|wks?)?|every)\b",
    )
    .unwrap()
});

static NEGATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(no|not|denies|denied|never|without|declined)\b(\s+\w+){0,2}\s*$").unwrap()
});

static NO_LONGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bno longer\b").unwrap());

static RADIATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(radiation|radiotherapy|chemoradiation|chemoradiotherapy|chemo-radiation|chemo-radiotherapy|re-?irradiation|irradiation)\b|\b(RT|XRT|IMRT|CRT)\b",
    )
    .unwrap()
});

static PLANNED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(planned|scheduled|will|plan|to begin|to start|pending)\b").unwrap()
});

static ISO_DATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap());

static MONTH_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(january|february|march|april|may|june|july|august|september|october|november|december|jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec)\.?\s+(\d{1,2}),?\s+(\d{4})\b",
    )
    .unwrap()
});

pub fn steroid_regex() -> &'static Regex {
    &STEROID
}

pub fn bevacizumab_regex() -> &'static Regex {
    &BEVACIZUMAB
}

pub fn radiation_regex() -> &'static Regex {
    &RADIATION
}

static FRAGMENT_BREAK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i),|\s+(and|but|while|whereas|although)\s+").unwrap());

fn month_number(name: &str) -> Option<u32> {
    let m = match &name.to_ascii_lowercase()[..3] {
        "jan" => 1,
        "feb" => 2,
        "mar" => 3,
        "apr" => 4,
        "may" => 5,
        "jun" => 6,
        "jul" => 7,
        "aug" => 8,
        "sep" => 9,
        "oct" => 10,
        "nov" => 11,
        "dec" => 12,
        _ => return None,
    };
    Some(m)
}

/// Byte ranges of sentences, trimmed of surrounding whitespace.
fn sentences(note: &str) -> Vec<(usize, usize)> {
    let bytes = note.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in note.char_indices() {
        let boundary = match c {
            '\n' | ';' | '!' | '?' => true,
            // a period ends a sentence only before whitespace or end of text,
            // so decimals ("2.5 mg") stay intact
            '.' => {
                bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace())
                    && !ends_with_abbreviation(&note[start..i])
            }
            _ => false,
        };
        if boundary {
            push_trimmed(note, start, i, &mut out);
            start = i + c.len_utf8();
        }
    }
    push_trimmed(note, start, note.len(), &mut out);
    out
}

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "vs", "approx", "e.g", "i.e", "jan", "feb", "mar", "apr", "jun",
    "jul", "aug", "sep", "sept", "oct", "nov", "dec", "pt", "hx", "st",
];

fn ends_with_abbreviation(text: &str) -> bool {
    let word = text
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_trimmed(note: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let piece = &note[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trail = piece.len() - piece.trim_end().len();
    if start + lead < end - trail {
        out.push((start + lead, end - trail));
    }
}

fn fragments(note: &str, (start, end): (usize, usize)) -> Vec<(usize, usize)> {
    let text = &note[start..end];
    let mut out = Vec::new();
    let mut cursor = 0;
    for m in FRAGMENT_BREAK.find_iter(text) {
        push_trimmed(note, start + cursor, start + m.start(), &mut out);
        cursor = m.end();
    }
    push_trimmed(note, start + cursor, end, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ClauseReading {
    status: MedicationStatus,
    conflicting: bool,
    start: usize,
    end: usize,
}

fn is_negated(clause: &str, term_start: usize) -> bool {
    let before = &clause[..term_start];
    NEGATION.is_match(before) && !NO_LONGER.is_match(before)
}

fn read_clause(note: &str, drug: &Regex, start: usize, end: usize) -> Option<ClauseReading> {
    let clause = &note[start..end];
    let term = drug.find(clause)?;
    if is_negated(clause, term.start()) {
        return None;
    }
    let last_recent = RECENT_CUE.find_iter(clause).last();
    let last_strong = STRONG_ACTIVE_CUE.find_iter(clause).last();
    let weak = WEAK_ACTIVE_CUE.is_match(clause);

    let (status, conflicting) = match (last_recent, last_strong) {
        (Some(r), Some(s)) => {
            let later = if r.start() > s.start() {
                MedicationStatus::Recent
            } else {
                MedicationStatus::Active
            };
            (later, true)
        }
        (Some(_), None) => (MedicationStatus::Recent, false),
        (None, Some(_)) => (MedicationStatus::Active, false),
        (None, None) if weak => (MedicationStatus::Active, false),
        (None, None) => return None,
    };
    Some(ClauseReading {
        status,
        conflicting,
        start,
        end,
    })
}

/// Readings for one drug class across the whole note, in text order.
fn drug_readings(note: &str, drug: &Regex, others: &[&Regex]) -> Vec<ClauseReading> {
    let names_drug = |s: &str| drug.is_match(s) || others.iter().any(|o| o.is_match(s));
    let mut readings = Vec::new();
    for sentence in sentences(note) {
        let frags = fragments(note, sentence);
        let mut i = 0;
        while i < frags.len() {
            let (fs, fe) = frags[i];
            if !drug.is_match(&note[fs..fe]) {
                i += 1;
                continue;
            }
            let mut end = fe;
            let mut j = i + 1;
            while j < frags.len() && !names_drug(&note[frags[j].0..frags[j].1]) {
                end = frags[j].1;
                j += 1;
            }
            readings.extend(read_clause(note, drug, fs, end));
            i = j;
        }
    }
    readings
}

fn resolve(
    note: &str,
    readings: &[ClauseReading],
) -> (MedicationStatus, Option<EvidenceSpan>, bool) {
    let Some(last) = readings.last() else {
        return (MedicationStatus::None, None, false);
    };
    let disagree = readings.iter().any(|r| r.status != last.status);
    let conflicting = disagree || readings.iter().any(|r| r.conflicting);
    (
        last.status,
        Some(EvidenceSpan::from_byte_range(note, last.start, last.end)),
        conflicting,
    )
}

fn first_date(text: &str) -> Option<NaiveDate> {
    let iso = ISO_DATE.captures_iter(text).find_map(|c| {
        let d = NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?)?;
        Some((c.get(0)?.start(), d))
    });
    let named = MONTH_DATE.captures_iter(text).find_map(|c| {
        let d = NaiveDate::from_ymd_opt(c[3].parse().ok()?, month_number(&c[1])?, c[2].parse().ok()?)?;
        Some((c.get(0)?.start(), d))
    });
    match (iso, named) {
        (Some(a), Some(b)) => Some(if a.0 <= b.0 { a.1 } else { b.1 }),
        (a, b) => a.or(b).map(|x| x.1),
    }
}

fn radiation_date(note: &str) -> Option<(NaiveDate, EvidenceSpan)> {
    sentences(note).into_iter().find_map(|(s, e)| {
        let text = &note[s..e];
        if !RADIATION.is_match(text) || PLANNED.is_match(text) {
            return None;
        }
        let date = first_date(text)?;
        Some((date, EvidenceSpan::from_byte_range(note, s, e)))
    })
}

/// Deterministic extraction. Pure: the same note always yields the same
/// variables.
pub fn pattern_rules(note: &str) -> ClinicalVariables {
    let mut vars = ClinicalVariables::default();

    let steroid = drug_readings(note, &STEROID, &[&BEVACIZUMAB]);
    let (status, span, conflict) = resolve(note, &steroid);
    vars.steroid_status = status;
    vars.evidence.steroid_status = span;
    if conflict {
        vars.conflicts.push(Variable::SteroidStatus);
    }

    let bev = drug_readings(note, &BEVACIZUMAB, &[&STEROID]);
    let (status, span, conflict) = resolve(note, &bev);
    vars.bevacizumab_status = status;
    vars.evidence.bevacizumab_status = span;
    if conflict {
        vars.conflicts.push(Variable::BevacizumabStatus);
    }

    if let Some((date, span)) = radiation_date(note) {
        vars.radiation_completion_date = Some(date);
        vars.evidence.radiation_completion_date = Some(span);
    }
    vars
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_clinical_variables;
    use MedicationStatus::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn active_steroid_with_span() {
        let note = "continues dexamethasone 4 mg twice daily";
        let v = pattern_rules(note);
        assert_eq!(v.steroid_status, Active);
        let span = v.evidence.steroid_status.as_ref().unwrap();
        assert_eq!(span.quoted_text, note);
        assert_eq!((span.start, span.end), (0, note.chars().count()));
        assert!(validate_clinical_variables(&v, note).is_empty());
    }

    #[test]
    fn radiation_dates() {
        let v = pattern_rules("completed chemoradiation on 2023-05-10");
        assert_eq!(v.radiation_completion_date, Some(d("2023-05-10")));
        let v = pattern_rules("completed radiation therapy January 15, 2024");
        assert_eq!(v.radiation_completion_date, Some(d("2024-01-15")));
        let v = pattern_rules("RT completed Sept. 3 2022 at outside hospital.");
        assert_eq!(v.radiation_completion_date, Some(d("2022-09-03")));
    }

    #[test]
    fn two_digit_years_are_rejected() {
        let v = pattern_rules("Completed radiation January 15, 24.");
        assert!(v.radiation_completion_date.is_none());
        let v = pattern_rules("Completed radiation 01/15/24.");
        assert!(v.radiation_completion_date.is_none());
    }

    #[test]
    fn planned_radiation_is_not_completion() {
        let v = pattern_rules("Radiation planned to start 2024-03-01.");
        assert!(v.radiation_completion_date.is_none());
    }

    #[test]
    fn recent_cues() {
        assert_eq!(
            pattern_rules("bevacizumab was discontinued last month").bevacizumab_status,
            Recent
        );
        assert_eq!(
            pattern_rules("Avastin held since last month").bevacizumab_status,
            Recent
        );
        let v = pattern_rules("on dexamethasone taper, now discontinued");
        assert_eq!(v.steroid_status, Recent);
        assert!(v.conflicts.is_empty());
    }

    #[test]
    fn defaults_when_nothing_mentioned() {
        let note = "Presents for surveillance MRI. Neurologically stable.";
        let v = pattern_rules(note);
        assert_eq!(v, ClinicalVariables::default());
    }

    #[test]
    fn negated_mentions_are_ignored() {
        let v = pattern_rules("No steroids. Not on Avastin at this time.");
        assert_eq!(v.steroid_status, None);
        assert_eq!(v.bevacizumab_status, None);
        assert_eq!(
            pattern_rules("No longer taking dexamethasone.").steroid_status,
            Recent
        );
    }

    #[test]
    fn conflicting_cues_take_later_and_flag() {
        let v = pattern_rules("Continues dexamethasone 2 mg daily. Dexamethasone discontinued last week.");
        assert_eq!(v.steroid_status, Recent);
        assert_eq!(v.conflicts, vec![Variable::SteroidStatus]);
        let v = pattern_rules("Dexamethasone was discontinued, but she continues it at night.");
        assert_eq!(v.steroid_status, Active);
        assert_eq!(v.conflicts, vec![Variable::SteroidStatus]);
    }

    #[test]
    fn drugs_in_one_sentence_are_separated() {
        let v = pattern_rules("Avastin was discontinued and dexamethasone continues at 2 mg.");
        assert_eq!(v.bevacizumab_status, Recent);
        assert_eq!(v.steroid_status, Active);
        assert!(v.conflicts.is_empty());
    }

    #[test]
    fn decimal_points_do_not_split_sentences() {
        let note = "Dexamethasone 0.5 mg daily. Completed RT 2023-01-02.";
        let v = pattern_rules(note);
        assert_eq!(v.steroid_status, Active);
        assert_eq!(
            v.evidence.steroid_status.unwrap().quoted_text,
            "Dexamethasone 0.5 mg daily"
        );
        assert_eq!(v.radiation_completion_date, Some(d("2023-01-02")));
    }

    #[test]
    fn continues_does_not_match_inside_discontinued() {
        assert_eq!(pattern_rules("dexamethasone discontinued").steroid_status, Recent);
    }

    #[test]
    fn spans_are_verbatim_for_multibyte_notes() {
        let note = "Résumé: patient on Avastin q2 weeks · tolerating well. Completed radiation 2022-11-30.";
        let v = pattern_rules(note);
        assert_eq!(v.bevacizumab_status, Active);
        assert!(validate_clinical_variables(&v, note).is_empty());
    }
}
