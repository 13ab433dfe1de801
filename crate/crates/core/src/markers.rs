//! The urinary steroid profile: six endogenous steroid concentrations, five
//! concentration ratios, detection-limit substitution and ratio arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One marker of the steroid profile.
///
/// Concentrations are measured in ng/mL; ratios are unitless quotients of two
/// concentrations. The declaration order here is the canonical column order
/// used everywhere (CSV columns, marker vectors, threshold tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum MarkerId {
    /// 5alpha-androstane-3alpha,17beta-diol
    A5,
    /// 5beta-androstane-3alpha,17beta-diol
    B5,
    /// Androsterone
    A,
    /// Epitestosterone
    E,
    /// Etiocholanolone
    ETIO,
    /// Testosterone
    T,
    /// T/E
    T_E,
    /// A/T
    A_T,
    /// A/Etio
    A_ETIO,
    /// A5/B5
    A5_B5,
    /// A5/E
    A5_E,
}

/// Whether a marker is a measured concentration or a derived ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    Concentration,
    Ratio,
}

/// The six concentration markers, in canonical order.
pub const CONCENTRATIONS: [MarkerId; 6] = [
    MarkerId::A5,
    MarkerId::B5,
    MarkerId::A,
    MarkerId::E,
    MarkerId::ETIO,
    MarkerId::T,
];

/// The five ratios, in canonical order.
pub const RATIOS: [MarkerId; 5] = [
    MarkerId::T_E,
    MarkerId::A_T,
    MarkerId::A_ETIO,
    MarkerId::A5_B5,
    MarkerId::A5_E,
];

/// All eleven markers, concentrations first.
pub const ALL_MARKERS: [MarkerId; 11] = [
    MarkerId::A5,
    MarkerId::B5,
    MarkerId::A,
    MarkerId::E,
    MarkerId::ETIO,
    MarkerId::T,
    MarkerId::T_E,
    MarkerId::A_T,
    MarkerId::A_ETIO,
    MarkerId::A5_B5,
    MarkerId::A5_E,
];

impl MarkerId {
    pub fn kind(self) -> MarkerKind {
        match self {
            MarkerId::A5 | MarkerId::B5 | MarkerId::A | MarkerId::E | MarkerId::ETIO
            | MarkerId::T => MarkerKind::Concentration,
            _ => MarkerKind::Ratio,
        }
    }

    /// Numerator/denominator pair for ratios, `None` for concentrations.
    pub fn ratio_parts(self) -> Option<(MarkerId, MarkerId)> {
        match self {
            MarkerId::T_E => Some((MarkerId::T, MarkerId::E)),
            MarkerId::A_T => Some((MarkerId::A, MarkerId::T)),
            MarkerId::A_ETIO => Some((MarkerId::A, MarkerId::ETIO)),
            MarkerId::A5_B5 => Some((MarkerId::A5, MarkerId::B5)),
            MarkerId::A5_E => Some((MarkerId::A5, MarkerId::E)),
            _ => None,
        }
    }

    /// Column name used in CSV files (`/` is not filesystem- or header-safe).
    pub fn column_name(self) -> &'static str {
        match self {
            MarkerId::A5 => "A5",
            MarkerId::B5 => "B5",
            MarkerId::A => "A",
            MarkerId::E => "E",
            MarkerId::ETIO => "ETIO",
            MarkerId::T => "T",
            MarkerId::T_E => "T_E",
            MarkerId::A_T => "A_T",
            MarkerId::A_ETIO => "A_ETIO",
            MarkerId::A5_B5 => "A5_B5",
            MarkerId::A5_E => "A5_E",
        }
    }

    /// Human-facing label (T/E rather than T_E).
    pub fn display_name(self) -> &'static str {
        match self {
            MarkerId::T_E => "T/E",
            MarkerId::A_T => "A/T",
            MarkerId::A_ETIO => "A/ETIO",
            MarkerId::A5_B5 => "A5/B5",
            MarkerId::A5_E => "A5/E",
            other => other.column_name(),
        }
    }

    pub fn from_column_name(name: &str) -> Option<MarkerId> {
        ALL_MARKERS.iter().copied().find(|m| m.column_name() == name)
    }

    /// Position in [`ALL_MARKERS`].
    pub fn canonical_index(self) -> usize {
        ALL_MARKERS.iter().position(|&m| m == self).expect("member of ALL_MARKERS")
    }
}

impl std::fmt::Display for MarkerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Athlete sex, the one confounder the models stratify on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn parse(s: &str) -> Option<Sex> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Some(Sex::Male),
            "f" | "female" => Some(Sex::Female),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

/// Detection-limit status of one measured value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitFlag {
    Measured,
    BelowLoq,
    BelowLod,
}

impl LimitFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            LimitFlag::Measured => "",
            LimitFlag::BelowLoq => "<LOQ",
            LimitFlag::BelowLod => "<LOD",
        }
    }
}

/// Replace sub-LOQ/LOD concentration values with the accepted minimum
/// cut-offs: 1 / 0.1 ng/mL for T and E, 5 / 1 ng/mL for the -diols (A5, B5).
/// A and ETIO carry no published cut-off, so a flagged value is an error.
pub fn apply_detection_limits(raw_value: f64, marker: MarkerId, flag: LimitFlag) -> Result<f64> {
    debug_assert_eq!(marker.kind(), MarkerKind::Concentration);
    match flag {
        LimitFlag::Measured => {
            if raw_value <= 0.0 {
                Err(Error::NonPositiveValue { marker, value: raw_value })
            } else {
                Ok(raw_value)
            }
        }
        LimitFlag::BelowLoq => match marker {
            MarkerId::T | MarkerId::E => Ok(1.0),
            MarkerId::A5 | MarkerId::B5 => Ok(5.0),
            _ => Err(Error::SubstitutionUndefined { marker }),
        },
        LimitFlag::BelowLod => match marker {
            MarkerId::T | MarkerId::E => Ok(0.1),
            MarkerId::A5 | MarkerId::B5 => Ok(1.0),
            _ => Err(Error::SubstitutionUndefined { marker }),
        },
    }
}

/// Compute the five ratios from the six concentrations (canonical order in,
/// canonical order out).
pub fn compute_ratios(concentrations: &[f64; 6]) -> Result<[f64; 5]> {
    let value = |m: MarkerId| concentrations[m.canonical_index()];
    let mut out = [0.0; 5];
    for (slot, ratio) in out.iter_mut().zip(RATIOS) {
        let (num, den) = ratio.ratio_parts().expect("ratio");
        let d = value(den);
        if d <= 0.0 {
            return Err(Error::DivisionByNonPositive { marker: den, value: d });
        }
        *slot = value(num) / d;
    }
    Ok(out)
}
