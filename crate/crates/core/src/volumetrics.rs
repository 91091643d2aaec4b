//! Percent volume change and threshold trend classes for the FLAIR and
//! enhancing compartments.

use serde::{Deserialize, Serialize};

use crate::domain::{Baseline, CaseRecord};
use crate::error::DomainError;

/// Decision thresholds. Defaults are 20% (stability band), 40% (major
/// worsening) and 90 days (post-radiation window).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub stable_pct: f64,
    pub major_pct: f64,
    pub radiation_window_days: i64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            stable_pct: 20.0,
            major_pct: 40.0,
            radiation_window_days: 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "percent", rename_all = "snake_case")]
pub enum PercentChange {
    Value(f64),
    /// Baseline 0, follow-up above 0.
    NewFromZero,
    BothZero,
}

impl PercentChange {
    pub fn value(self) -> Option<f64> {
        match self {
            PercentChange::Value(p) => Some(p),
            _ => None,
        }
    }

    pub fn involves_zero_baseline(self) -> bool {
        !matches!(self, PercentChange::Value(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Improved,
    Stable,
    Worse,
    MajorWorse,
}

impl Trend {
    pub fn is_worse(self) -> bool {
        matches!(self, Trend::Worse | Trend::MajorWorse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Trend::Improved => "improved",
            Trend::Stable => "stable",
            Trend::Worse => "worse",
            Trend::MajorWorse => "major_worse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumetricChange {
    pub flair_change: PercentChange,
    pub enh_change: PercentChange,
    pub flair_trend: Trend,
    pub enh_trend: Trend,
}

impl VolumetricChange {
    pub fn from_changes(flair: PercentChange, enh: PercentChange, t: &Thresholds) -> Self {
        VolumetricChange {
            flair_change: flair,
            enh_change: enh,
            flair_trend: classify_trend_with(flair, t),
            enh_trend: classify_trend_with(enh, t),
        }
    }

    /// Both trends agree with `classify_trend_with` applied to the changes.
    pub fn is_consistent(&self, t: &Thresholds) -> bool {
        classify_trend_with(self.flair_change, t) == self.flair_trend
            && classify_trend_with(self.enh_change, t) == self.enh_trend
    }

    pub fn has_zero_baseline(&self) -> bool {
        self.flair_change.involves_zero_baseline() || self.enh_change.involves_zero_baseline()
    }
}

fn check_volume(field: &'static str, v: f64) -> Result<(), DomainError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(DomainError::InvalidVolume { field, value: v })
    }
}

pub fn percent_change(baseline_ml: f64, followup_ml: f64) -> Result<PercentChange, DomainError> {
    check_volume("baseline", baseline_ml)?;
    check_volume("followup", followup_ml)?;
    Ok(if baseline_ml > 0.0 {
        PercentChange::Value(100.0 * (followup_ml - baseline_ml) / baseline_ml)
    } else if followup_ml > 0.0 {
        PercentChange::NewFromZero
    } else {
        PercentChange::BothZero
    })
}

pub fn classify_trend(change: PercentChange) -> Trend {
    classify_trend_with(change, &Thresholds::default())
}

/// `|p| <= stable` is stable (closed band); above `major` (strict) is major
/// worsening.
pub fn classify_trend_with(change: PercentChange, t: &Thresholds) -> Trend {
    match change {
        PercentChange::BothZero => Trend::Stable,
        PercentChange::NewFromZero => Trend::MajorWorse,
        PercentChange::Value(p) => {
            if p < -t.stable_pct {
                Trend::Improved
            } else if p <= t.stable_pct {
                Trend::Stable
            } else if p <= t.major_pct {
                Trend::Worse
            } else {
                Trend::MajorWorse
            }
        }
    }
}

pub fn compute_volumetrics(
    baseline: &Baseline,
    followup_flair_ml: f64,
    followup_enh_ml: f64,
    t: &Thresholds,
) -> Result<VolumetricChange, DomainError> {
    let flair = percent_change(baseline.flair_ml, followup_flair_ml)?;
    let enh = percent_change(baseline.enh_ml, followup_enh_ml)?;
    Ok(VolumetricChange::from_changes(flair, enh, t))
}

/// Volumetric change for a case, or `None` when it has no baseline.
pub fn compute_case_volumetrics(
    case: &CaseRecord,
    t: &Thresholds,
) -> Result<Option<VolumetricChange>, DomainError> {
    match case.baseline() {
        Some(b) => compute_volumetrics(&b, case.followup_flair_ml, case.followup_enh_ml, t).map(Some),
        None => Ok(None),
    }
}

/// A row of a standalone segmentation volume table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub exam_id: String,
    pub flair_ml: f64,
    pub enh_ml: f64,
    pub qc_pass: bool,
}

pub fn read_volume_table<R: std::io::Read>(reader: R) -> Result<Vec<VolumeRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

pub fn write_volume_table<W: std::io::Write>(writer: W, rows: &[VolumeRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
