//! Typed representation of athletes, samples and marker panels, plus the
//! substitution / log-transform pipeline that turns raw ng/mL readings into
//! the log-scale vectors the models consume.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markers::{
    apply_detection_limits, compute_ratios, LimitFlag, MarkerId, MarkerKind, Sex, CONCENTRATIONS,
    RATIOS,
};

/// Ground-truth class of one sample, where known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    /// Beyond individual limits but no doping offence detected.
    Atypical,
    /// Confirmed by isotope-ratio mass spectrometry.
    Abnormal,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Some(Label::Normal),
            "atypical" => Some(Label::Atypical),
            "abnormal" => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Atypical => "atypical",
            Label::Abnormal => "abnormal",
        }
    }
}

/// One measured cell: the raw value and its detection-limit status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub flag: LimitFlag,
}

impl Measurement {
    pub fn measured(value: f64) -> Self {
        Measurement { value, flag: LimitFlag::Measured }
    }
}

/// One urine sample as ingested: raw-scale values keyed by marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub athlete_id: String,
    /// Ordinal collection index; strictly increasing within an athlete.
    pub timestamp: u64,
    pub sex: Sex,
    pub values: BTreeMap<MarkerId, Measurement>,
    pub true_label: Option<Label>,
}

impl RawSample {
    /// Detection-limit substitution over the concentrations, keeping measured
    /// ratios as-is. Ratios that were not measured are derived from the
    /// substituted concentrations when all six are present.
    pub fn substituted(&self) -> Result<BTreeMap<MarkerId, f64>> {
        let mut out = BTreeMap::new();
        for (&marker, m) in &self.values {
            match marker.kind() {
                MarkerKind::Concentration => {
                    out.insert(marker, apply_detection_limits(m.value, marker, m.flag)?);
                }
                MarkerKind::Ratio => {
                    if m.value <= 0.0 {
                        return Err(Error::NonPositiveValue { marker, value: m.value });
                    }
                    out.insert(marker, m.value);
                }
            }
        }
        if CONCENTRATIONS.iter().all(|c| out.contains_key(c))
            && RATIOS.iter().any(|r| !out.contains_key(r))
        {
            let conc: [f64; 6] = std::array::from_fn(|i| out[&CONCENTRATIONS[i]]);
            let ratios = compute_ratios(&conc)?;
            for (r, v) in RATIOS.iter().zip(ratios) {
                out.entry(*r).or_insert(v);
            }
        }
        Ok(out)
    }
}

/// A sample's log-scale values over a fixed marker ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerVector {
    log_values: DVector<f64>,
    marker_order: Vec<MarkerId>,
}

impl MarkerVector {
    pub fn new(log_values: DVector<f64>, marker_order: Vec<MarkerId>) -> Result<Self> {
        if log_values.len() != marker_order.len() {
            return Err(Error::DimensionMismatch {
                expected: marker_order.len(),
                got: log_values.len(),
            });
        }
        if let Some(bad) = log_values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite log value {bad}")));
        }
        Ok(MarkerVector { log_values, marker_order })
    }

    pub fn dim(&self) -> usize {
        self.log_values.len()
    }

    pub fn log_values(&self) -> &DVector<f64> {
        &self.log_values
    }

    pub fn marker_order(&self) -> &[MarkerId] {
        &self.marker_order
    }

    pub fn value_for(&self, marker: MarkerId) -> Option<f64> {
        self.marker_order.iter().position(|&m| m == marker).map(|i| self.log_values[i])
    }
}

/// Natural log of the substituted values over `marker_subset`, in order.
pub fn log_transform(
    substituted: &BTreeMap<MarkerId, f64>,
    marker_subset: &[MarkerId],
) -> Result<MarkerVector> {
    let mut logs = Vec::with_capacity(marker_subset.len());
    for &marker in marker_subset {
        let v = *substituted
            .get(&marker)
            .ok_or(Error::UnknownMarkerColumn { column: marker.column_name().to_string() })?;
        if v <= 0.0 {
            return Err(Error::NonPositiveValue { marker, value: v });
        }
        logs.push(v.ln());
    }
    MarkerVector::new(DVector::from_vec(logs), marker_subset.to_vec())
}

/// One athlete's ordered longitudinal series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AthleteSeries {
    pub athlete_id: String,
    pub sex: Sex,
    /// Sorted by timestamp, strictly increasing.
    pub samples: Vec<RawSample>,
}

/// One cross-sectional baseline measurement (no athlete series attached).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSample {
    pub sex: Sex,
    pub values: BTreeMap<MarkerId, Measurement>,
}

impl BaselineSample {
    pub fn log_vector(&self, marker_subset: &[MarkerId]) -> Result<MarkerVector> {
        let raw = RawSample {
            athlete_id: String::new(),
            timestamp: 0,
            sex: self.sex,
            values: self.values.clone(),
            true_label: None,
        };
        log_transform(&raw.substituted()?, marker_subset)
    }
}

/// The full ingested dataset: longitudinal athletes plus the cross-sectional
/// baseline population. Immutable after ingestion; share freely.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileCollection {
    pub athletes: Vec<AthleteSeries>,
    pub population_baseline: Vec<BaselineSample>,
}

impl ProfileCollection {
    pub fn total_samples(&self) -> usize {
        self.athletes.iter().map(|a| a.samples.len()).sum()
    }

    pub fn athlete(&self, athlete_id: &str) -> Option<&AthleteSeries> {
        self.athletes.iter().find(|a| a.athlete_id == athlete_id)
    }

    /// Samples per label across all athletes; unlabeled samples are skipped.
    pub fn label_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for athlete in &self.athletes {
            for s in &athlete.samples {
                if let Some(label) = s.true_label {
                    *counts.entry(label).or_insert(0) += 1;
                }
            }
        }
        counts
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
