//! Quantum geometric tensor over the (h, γ) plane, its Ricci scalar and the
//! thermodynamic-limit closed forms.
//!
//! Coordinates are ordered (h, γ) throughout: `u = h`, `v = γ`.

use crate::chain::{ChainParams, Sector};
use crate::precision::{dd, div, to_f64, Dd};
use crate::spectrum::{mode_terms, ModeTable, GAPLESS_EPS};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// det g at or below this is treated as a degenerate metric.
pub const DET_FLOOR: f64 = 1e-30;
const FD_FIRST: f64 = 1e-5;
const FD_SECOND: f64 = 1e-3;
const REGION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("gapless mode k={k} in sector {sector}")]
    SingularPoint { sector: Sector, k: usize },
    #[error("finite-difference stencil touches a gapless point at gamma={gamma}, h={h}")]
    StencilCrossesSingularLine { gamma: f64, h: f64 },
    #[error("degenerate metric, det g = {det:e}")]
    DegenerateMetric { det: f64 },
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QgtPoint {
    pub params: ChainParams,
    pub sector: Sector,
    pub q_hh: f64,
    pub q_gg: f64,
    pub q_hg: f64,
    /// Berry curvature. The angles θ_k are real, so this is always zero.
    pub omega_hg: f64,
}

impl QgtPoint {
    pub fn det(&self) -> f64 {
        self.q_hh * self.q_gg - self.q_hg * self.q_hg
    }

    pub fn metric(&self) -> [[f64; 2]; 2] {
        [[self.q_hh, self.q_hg], [self.q_hg, self.q_gg]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivScheme {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDerivs {
    pub dhh_dh: f64,
    pub dhh_dg: f64,
    pub dgg_dh: f64,
    pub dgg_dg: f64,
    pub dhg_dh: f64,
    pub dhg_dg: f64,
    pub scheme: DerivScheme,
}

impl MetricDerivs {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.dhh_dh,
            self.dhh_dg,
            self.dgg_dh,
            self.dgg_dg,
            self.dhg_dh,
            self.dhg_dg,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicciResult {
    /// First-derivative determinant expression.
    pub r_determinant: f64,
    /// Twice the Gaussian curvature (Brioschi formula). NaN when `singular`.
    pub r_christoffel: f64,
    pub discrepancy: f64,
    /// The second-derivative stencil came too close to a gapless line.
    pub singular: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RicciMethod {
    Determinant,
    Christoffel,
}

/// Metric (E, F, G) = (g_hh, g_hγ, g_γγ) and its first derivatives, as
/// double-double sums over modes.
#[derive(Clone, Copy)]
struct Sums {
    e: Dd,
    f: Dd,
    g: Dd,
    eu: Dd,
    ev: Dd,
    fu: Dd,
    fv: Dd,
    gu: Dd,
    gv: Dd,
}

fn mode_sums(params: &ChainParams, sector: Sector, derivs: bool) -> Result<Sums, GeometryError> {
    let table = ModeTable::new(params.l, sector);
    let z = dd(0.0);
    let mut s = Sums {
        e: z,
        f: z,
        g: z,
        eu: z,
        ev: z,
        fu: z,
        fv: z,
        gu: z,
        gv: z,
    };
    let gm = params.gamma;
    for k in 1..=params.l {
        let t = mode_terms(params, &table, k);
        let (a, b) = (t.a, t.b);
        let gb = b * gm;
        let d = a * a + gb * gb;
        if d.hi() < GAPLESS_EPS * GAPLESS_EPS {
            return Err(GeometryError::SingularPoint { sector, k });
        }
        if b.hi() == 0.0 {
            // Unpaired mode: θ is pinned at 0 or π.
            continue;
        }
        let th = div(-gb, d);
        let tg = div(a * b, d);
        s.e += th * th;
        s.f += th * tg;
        s.g += tg * tg;
        if derivs {
            let d2 = d * d;
            let ab = a * b;
            let thh = div(ab * (2.0 * gm), d2);
            let thg = div(b * (gb * gb - a * a), d2);
            let tgg = div(-(ab * b * b * (2.0 * gm)), d2);
            s.eu += th * thh;
            s.ev += th * thg;
            s.gu += tg * thg;
            s.gv += tg * tgg;
            s.fu += thh * tg + th * thg;
            s.fv += thg * tg + th * tgg;
        }
    }
    s.e *= 0.25;
    s.f *= 0.25;
    s.g *= 0.25;
    s.eu *= 0.5;
    s.ev *= 0.5;
    s.gu *= 0.5;
    s.gv *= 0.5;
    s.fu *= 0.25;
    s.fv *= 0.25;
    Ok(s)
}

/// Metric components ¼Σ(∂θ_k)(∂θ_k) in the given sector.
pub fn qgt_components(params: &ChainParams, sector: Sector) -> Result<QgtPoint, GeometryError> {
    let s = mode_sums(params, sector, false)?;
    Ok(QgtPoint {
        params: *params,
        sector,
        q_hh: to_f64(s.e),
        q_gg: to_f64(s.g),
        q_hg: to_f64(s.f),
        omega_hg: 0.0,
    })
}

/// χ = g_μν v^μ v^ν with v ordered (h, γ).
pub fn fidelity_susceptibility(point: &QgtPoint, v: [f64; 2]) -> f64 {
    point.q_hh * v[0] * v[0] + 2.0 * point.q_hg * v[0] * v[1] + point.q_gg * v[1] * v[1]
}

fn scale(params: &ChainParams) -> f64 {
    1f64.max(params.gamma.abs()).max(params.h.abs())
}

fn shifted(params: &ChainParams, dg: f64, dh: f64) -> ChainParams {
    ChainParams {
        gamma: params.gamma + dg,
        h: params.h + dh,
        ..*params
    }
}

fn analytic_derivs(s: &Sums) -> MetricDerivs {
    MetricDerivs {
        dhh_dh: to_f64(s.eu),
        dhh_dg: to_f64(s.ev),
        dgg_dh: to_f64(s.gu),
        dgg_dg: to_f64(s.gv),
        dhg_dh: to_f64(s.fu),
        dhg_dg: to_f64(s.fv),
        scheme: DerivScheme::Analytic,
    }
}

fn stencil_sums(
    params: &ChainParams,
    sector: Sector,
    dg: f64,
    dh: f64,
    derivs: bool,
) -> Result<Sums, GeometryError> {
    let q = shifted(params, dg, dh);
    mode_sums(&q, sector, derivs).map_err(|e| match e {
        GeometryError::SingularPoint { .. } => GeometryError::StencilCrossesSingularLine {
            gamma: q.gamma,
            h: q.h,
        },
        other => other,
    })
}

/// ∂g/∂h and ∂g/∂γ, either term by term in closed form or by central
/// differences of [`qgt_components`] with step 10⁻⁵·max(1, |γ|, |h|).
pub fn metric_derivatives(
    params: &ChainParams,
    sector: Sector,
    scheme: DerivScheme,
) -> Result<MetricDerivs, GeometryError> {
    match scheme {
        DerivScheme::Analytic => Ok(analytic_derivs(&mode_sums(params, sector, true)?)),
        DerivScheme::FiniteDifference => {
            mode_sums(params, sector, false)?;
            let d = FD_FIRST * scale(params);
            let hp = stencil_sums(params, sector, 0.0, d, false)?;
            let hm = stencil_sums(params, sector, 0.0, -d, false)?;
            let gp = stencil_sums(params, sector, d, 0.0, false)?;
            let gm = stencil_sums(params, sector, -d, 0.0, false)?;
            let c = |p: Dd, m: Dd| to_f64((p - m) / (2.0 * d));
            Ok(MetricDerivs {
                dhh_dh: c(hp.e, hm.e),
                dhh_dg: c(gp.e, gm.e),
                dgg_dh: c(hp.g, hm.g),
                dgg_dg: c(gp.g, gm.g),
                dhg_dh: c(hp.f, hm.f),
                dhg_dg: c(gp.f, gm.f),
                scheme: DerivScheme::FiniteDifference,
            })
        }
    }
}

fn det3(m: [[Dd; 3]; 3]) -> Dd {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn r_determinant_of(s: &Sums) -> Result<f64, GeometryError> {
    let det = s.e * s.g - s.f * s.f;
    if to_f64(det) <= DET_FLOOR {
        return Err(GeometryError::DegenerateMetric { det: to_f64(det) });
    }
    let m = det3([[s.e, s.f, s.g], [s.eu, s.fu, s.gu], [s.ev, s.fv, s.gv]]);
    Ok(to_f64(-div(m, det * det) * 0.5))
}

/// True when a point lies within `r` of ℓ_XX (γ = 0) or ℓ_CL (|h| = J).
fn near_singular_line(params: &ChainParams, r: f64) -> bool {
    params.gamma.abs() < r || (params.h.abs() - params.j.abs()).abs() < r
}

fn r_christoffel_of(params: &ChainParams, sector: Sector, s: &Sums) -> Result<f64, GeometryError> {
    let d = FD_SECOND * scale(params);
    if near_singular_line(params, 10.0 * d) {
        return Err(GeometryError::StencilCrossesSingularLine {
            gamma: params.gamma,
            h: params.h,
        });
    }
    let hp = stencil_sums(params, sector, 0.0, d, true)?;
    let hm = stencil_sums(params, sector, 0.0, -d, true)?;
    let gp = stencil_sums(params, sector, d, 0.0, true)?;
    let gm = stencil_sums(params, sector, -d, 0.0, true)?;
    let c = |p: Dd, m: Dd| (p - m) / (2.0 * d);
    let g_uu = c(hp.gu, hm.gu);
    let e_vv = c(gp.ev, gm.ev);
    let f_uv = c(gp.fu, gm.fu);
    let a = [
        [
            -e_vv * 0.5 + f_uv - g_uu * 0.5,
            s.eu * 0.5,
            s.fu - s.ev * 0.5,
        ],
        [s.fv - s.gu * 0.5, s.e, s.f],
        [s.gv * 0.5, s.f, s.g],
    ];
    let b = [
        [dd(0.0), s.ev * 0.5, s.gu * 0.5],
        [s.ev * 0.5, s.e, s.f],
        [s.gu * 0.5, s.f, s.g],
    ];
    let det = s.e * s.g - s.f * s.f;
    let k = div(det3(a) - det3(b), det * det);
    Ok(to_f64(k * 2.0))
}

/// Ricci scalar by both methods.
///
/// `r_determinant` is the determinant of (g, ∂_h g, ∂_γ g) over −2(det g)², using
/// analytic first derivatives only. `r_christoffel` is 2K with K the
/// Gaussian curvature from the Brioschi formula, second derivatives of g by
/// central differences with step 10⁻³·max(1, |γ|, |h|).
pub fn ricci_scalar(params: &ChainParams, sector: Sector) -> Result<RicciResult, GeometryError> {
    let s = mode_sums(params, sector, true)?;
    let r_determinant = r_determinant_of(&s)?;
    match r_christoffel_of(params, sector, &s) {
        Ok(rc) => Ok(RicciResult {
            r_determinant,
            r_christoffel: rc,
            discrepancy: (r_determinant - rc).abs(),
            singular: false,
        }),
        Err(GeometryError::StencilCrossesSingularLine { .. }) => Ok(RicciResult {
            r_determinant,
            r_christoffel: f64::NAN,
            discrepancy: f64::NAN,
            singular: true,
        }),
        Err(e) => Err(e),
    }
}

/// One Ricci value. `Determinant` needs no stencil and is what series and scans use.
pub fn ricci_value(
    params: &ChainParams,
    sector: Sector,
    method: RicciMethod,
) -> Result<f64, GeometryError> {
    let s = mode_sums(params, sector, true)?;
    match method {
        RicciMethod::Determinant => r_determinant_of(&s),
        RicciMethod::Christoffel => {
            r_determinant_of(&s)?;
            r_christoffel_of(params, sector, &s)
        }
    }
}

/// Δ𝓡 = 𝓡_R − 𝓡_NS from the curvature-tensor values.
pub fn ricci_difference(params: &ChainParams) -> Result<f64, GeometryError> {
    ricci_difference_with(params, RicciMethod::Christoffel)
}

pub fn ricci_difference_with(params: &ChainParams, method: RicciMethod) -> Result<f64, GeometryError> {
    Ok(ricci_value(params, Sector::R, method)? - ricci_value(params, Sector::NS, method)?)
}

/// Thermodynamic-limit ground-state Berry phase.
///
/// −π + πhγ/√((1−γ²)(1−γ²−h²)) inside the disk γ² + h² < 1, zero outside.
pub fn berry_phase_thermo(gamma: f64, h: f64) -> Result<f64, GeometryError> {
    if gamma * gamma + h * h >= 1.0 {
        return Ok(0.0);
    }
    let rad = (1.0 - gamma * gamma) * (1.0 - gamma * gamma - h * h);
    if rad <= 0.0 {
        return Err(GeometryError::Domain(format!(
            "Berry phase radicand {rad} <= 0 at gamma={gamma}, h={h}"
        )));
    }
    Ok(-PI + PI * h * gamma / rad.sqrt())
}

/// Leading 1/L behavior of the Ricci scalar away from the critical lines.
pub fn ricci_thermo(gamma: f64, h: f64, l: usize) -> Result<f64, GeometryError> {
    if l == 0 {
        return Err(GeometryError::Domain("L must be positive".into()));
    }
    let (g, ha, lf) = (gamma.abs(), h.abs(), l as f64);
    if ha < 1.0 - REGION_TOL {
        if g < REGION_TOL {
            return Err(GeometryError::Domain(
                "curvature diverges on the gamma = 0 segment".into(),
            ));
        }
        Ok(-(4.0 / lf) * (1.0 + g) / g)
    } else if ha > 1.0 + REGION_TOL {
        let s = (ha * ha + g * g - 1.0).sqrt();
        Ok((4.0 / lf) * (ha + s) / s)
    } else {
        Err(GeometryError::Domain(format!(
            "no closed form on the critical line h = {h}"
        )))
    }
}
