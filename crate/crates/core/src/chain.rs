//! Parameter types, the (γ, h) region taxonomy and symmetry canonicalization.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Default absolute tolerance for "on a line" tests.
pub const REGION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("chain length must be at least 2, got {0}")]
    LengthTooSmall(usize),
    #[error("parameter {name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("negative coupling cannot be absorbed for odd length {0}")]
    OddLengthNegativeCoupling(usize),
    #[error("{0}")]
    Domain(String),
}

/// A point in parameter space: length, coupling, anisotropy and field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub gamma: f64,
    pub h: f64,
}

impl ChainParams {
    /// Unit coupling, the convention used everywhere unless stated.
    pub fn new(l: usize, gamma: f64, h: f64) -> Result<Self, ChainError> {
        Self::with_coupling(l, 1.0, gamma, h)
    }

    pub fn with_coupling(l: usize, j: f64, gamma: f64, h: f64) -> Result<Self, ChainError> {
        if l < 2 {
            return Err(ChainError::LengthTooSmall(l));
        }
        for (name, value) in [("J", j), ("gamma", gamma), ("h", h)] {
            if !value.is_finite() {
                return Err(ChainError::NonFinite { name, value });
            }
        }
        Ok(Self { l, j, gamma, h })
    }

    pub fn with_length(self, l: usize) -> Result<Self, ChainError> {
        Self::with_coupling(l, self.j, self.gamma, self.h)
    }
}

/// Fermionic boundary sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sector {
    /// Antiperiodic, N_L = +1.
    #[serde(rename = "NS")]
    NS,
    /// Periodic, N_L = -1.
    #[serde(rename = "R")]
    R,
}

impl Sector {
    pub const BOTH: [Sector; 2] = [Sector::NS, Sector::R];

    pub fn n_l(self) -> i32 {
        match self {
            Sector::NS => 1,
            Sector::R => -1,
        }
    }

    pub fn from_n_l(n: i32) -> Option<Self> {
        match n {
            1 => Some(Sector::NS),
            -1 => Some(Sector::R),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Sector::NS => Sector::R,
            Sector::R => Sector::NS,
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sector::NS => "NS",
            Sector::R => "R",
        })
    }
}

/// Areas, lines and special points of the (γ, h) plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    Sigma1Minus,
    Sigma2Minus,
    SigmaPlus,
    LinePTL,
    LineCLMinus,
    LineCLPlus,
    LineTRSMinus,
    LineTRSPlus,
    LineXXMinus,
    LineXXPlus,
    PointXX,
    LineIsing,
    PointCI,
}

impl RegionLabel {
    pub fn is_area(self) -> bool {
        matches!(
            self,
            RegionLabel::Sigma1Minus | RegionLabel::Sigma2Minus | RegionLabel::SigmaPlus
        )
    }

    pub fn is_point(self) -> bool {
        matches!(self, RegionLabel::PointXX | RegionLabel::PointCI)
    }
}

/// The winning label plus every set the point belongs to, in precedence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub label: RegionLabel,
    pub memberships: Vec<RegionLabel>,
}

impl RegionInfo {
    pub fn is_ambiguous(&self) -> bool {
        self.memberships.len() > 1
    }
}

/// Classify with precedence points > lines > areas.
pub fn classify_region(gamma: f64, h: f64, tol: f64) -> RegionLabel {
    classify_region_detailed(gamma, h, tol).label
}

pub fn classify_region_detailed(gamma: f64, h: f64, tol: f64) -> RegionInfo {
    let g = gamma.abs();
    let h = h.abs();
    let mut m = Vec::new();

    if (g - 1.0).hypot(h - 1.0) < tol {
        m.push(RegionLabel::PointCI);
    }
    if g < tol && (h - (2.0 * h).round() / 2.0).abs() < tol {
        m.push(RegionLabel::PointXX);
    }

    // Lines, in a fixed order so multi-membership is reported deterministically.
    if (g.hypot(h) - 1.0).abs() < tol {
        m.push(RegionLabel::LinePTL);
    }
    if (h - 1.0).abs() < tol {
        if g < 1.0 - tol {
            m.push(RegionLabel::LineCLMinus);
        } else if g > 1.0 + tol {
            m.push(RegionLabel::LineCLPlus);
        }
    }
    if g < tol {
        if h <= 1.0 {
            m.push(RegionLabel::LineXXMinus);
        } else {
            m.push(RegionLabel::LineXXPlus);
        }
    }
    if h < tol {
        if g > tol && g < 1.0 - tol {
            m.push(RegionLabel::LineTRSMinus);
        } else if g > 1.0 + tol {
            m.push(RegionLabel::LineTRSPlus);
        }
    }
    if (g - 1.0).abs() < tol && (h - 1.0).abs() >= tol {
        m.push(RegionLabel::LineIsing);
    }

    let r2 = g * g + h * h;
    let area = if h > 1.0 {
        RegionLabel::SigmaPlus
    } else if r2 < 1.0 {
        RegionLabel::Sigma1Minus
    } else {
        RegionLabel::Sigma2Minus
    };
    if m.is_empty() {
        m.push(area);
    }
    RegionInfo {
        label: m[0],
        memberships: m,
    }
}

/// Map to γ ≥ 0, h ≥ 0, J ≥ 0 using the discrete symmetries of the chain.
pub fn canonicalize(params: ChainParams) -> Result<ChainParams, ChainError> {
    if params.j < 0.0 && params.l % 2 == 1 {
        return Err(ChainError::OddLengthNegativeCoupling(params.l));
    }
    Ok(ChainParams {
        l: params.l,
        j: params.j.abs(),
        gamma: params.gamma.abs(),
        h: params.h.abs(),
    })
}

/// Angle χ of the exactly degenerate product states on the parity transition line.
pub fn ptl_degeneracy_angle(gamma: f64) -> Result<f64, ChainError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(ChainError::Domain(format!(
            "degeneracy angle needs 0 <= gamma <= 1, got {gamma}"
        )));
    }
    let c = ((1.0 - gamma) / (1.0 + gamma)).sqrt();
    Ok(0.5 * c.clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn representative_points() {
        assert_eq!(classify_region(0.3, 0.5, REGION_TOL), RegionLabel::Sigma1Minus);
        assert_eq!(classify_region(1.0, 1.0, REGION_TOL), RegionLabel::PointCI);
        assert_eq!(classify_region(0.0, 1.5, REGION_TOL), RegionLabel::PointXX);
        assert_eq!(classify_region(0.7, 1.1, REGION_TOL), RegionLabel::SigmaPlus);
        assert_eq!(classify_region(1.3, 0.5, REGION_TOL), RegionLabel::Sigma2Minus);
        assert_eq!(classify_region(0.0, 0.3, REGION_TOL), RegionLabel::LineXXMinus);
        assert_eq!(classify_region(0.0, 1.2, REGION_TOL), RegionLabel::LineXXPlus);
        assert_eq!(classify_region(0.3, 0.0, REGION_TOL), RegionLabel::LineTRSMinus);
        assert_eq!(classify_region(1.2, 0.0, REGION_TOL), RegionLabel::LineTRSPlus);
        assert_eq!(classify_region(0.6, 0.8, REGION_TOL), RegionLabel::LinePTL);
        assert_eq!(classify_region(0.5, 1.0, REGION_TOL), RegionLabel::LineCLMinus);
        assert_eq!(classify_region(1.2, 1.0, REGION_TOL), RegionLabel::LineCLPlus);
        assert_eq!(classify_region(1.0, 1.5, REGION_TOL), RegionLabel::LineIsing);
    }

    #[test]
    fn multi_membership_is_reported() {
        let info = classify_region_detailed(0.0, 1.0, REGION_TOL);
        assert_eq!(info.label, RegionLabel::PointXX);
        assert!(info.memberships.contains(&RegionLabel::LinePTL));
        assert!(info.memberships.contains(&RegionLabel::LineXXMinus));
        assert!(info.is_ambiguous());
    }

    #[test]
    fn canonical_examples() {
        let p = ChainParams::new(8, -0.5, 0.3).unwrap();
        assert_eq!(canonicalize(p).unwrap(), ChainParams::new(8, 0.5, 0.3).unwrap());
        let p = ChainParams::new(8, 0.5, -0.3).unwrap();
        assert_eq!(canonicalize(p).unwrap(), ChainParams::new(8, 0.5, 0.3).unwrap());
        let p = ChainParams::new(8, 0.0, 0.0).unwrap();
        assert_eq!(canonicalize(p).unwrap(), p);
        let odd = ChainParams::with_coupling(7, -1.0, 0.2, 0.1).unwrap();
        assert_eq!(
            canonicalize(odd),
            Err(ChainError::OddLengthNegativeCoupling(7))
        );
    }

    #[test]
    fn degeneracy_angle() {
        assert_eq!(ptl_degeneracy_angle(0.0).unwrap(), 0.0);
        assert!((ptl_degeneracy_angle(1.0).unwrap() - PI / 4.0).abs() < 1e-15);
        let chi = ptl_degeneracy_angle(0.6).unwrap();
        assert!((chi - 0.5 * 0.5f64.acos()).abs() < 1e-15);
        assert!(((2.0 * chi).cos().powi(2) - 0.25).abs() < 1e-14);
        assert!(ptl_degeneracy_angle(1.2).is_err());
    }

    #[test]
    fn params_validation() {
        assert_eq!(ChainParams::new(1, 0.1, 0.1), Err(ChainError::LengthTooSmall(1)));
        assert!(ChainParams::new(4, f64::NAN, 0.1).is_err());
    }
}
