//! Scans over the (γ, h) plane: case maps, curvature sign maps, zero curves
//! by marching squares, and elliptic transition-arc fits.

use crate::chain::ChainParams;
use crate::ed::{classify_case, classify_case_fermionic, CaseTag, EdError, CASE_TOL, MAX_ED_LENGTH};
use crate::geometry::{ricci_difference_with, ricci_value, RicciMethod};
use crate::scaling::{sign_of, ZERO_FLOOR};
use crate::spectrum::delta_gs;
use crate::Sector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Minimum distance between a grid node and any special line.
pub const LINE_CLEARANCE: f64 = 1e-6;
/// Arcs with a larger rms ellipse residual are rejected.
pub const ARC_RMS_LIMIT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("exact case scans need L <= {MAX_ED_LENGTH}, got {0}")]
    Capacity(usize),
    #[error("{0}")]
    Domain(String),
}

/// Regular node grid with a half-cell offset.
///
/// Node (i, j) sits at γ_min + (i + ½)Δγ, h_min + (j + ½)Δh, then is nudged
/// in h until it clears every special line by [`LINE_CLEARANCE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub n_gamma: usize,
    pub n_h: usize,
}

fn parse_axis(s: &str) -> Result<(f64, f64, usize), ScanError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(ScanError::Grid(format!("axis '{s}' is not min:max:count")));
    }
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| ScanError::Grid(format!("bad number '{t}'")))
    };
    let n = parts[2]
        .trim()
        .parse::<usize>()
        .map_err(|_| ScanError::Grid(format!("bad count '{}'", parts[2])))?;
    Ok((num(parts[0])?, num(parts[1])?, n))
}

impl Grid {
    pub fn new(
        gamma: (f64, f64),
        h: (f64, f64),
        n_gamma: usize,
        n_h: usize,
    ) -> Result<Self, ScanError> {
        let g = Self {
            gamma_min: gamma.0,
            gamma_max: gamma.1,
            h_min: h.0,
            h_max: h.1,
            n_gamma,
            n_h,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if self.n_gamma < 2 || self.n_h < 2 {
            return Err(ScanError::Grid("need at least 2 nodes per axis".into()));
        }
        let vals = [self.gamma_min, self.gamma_max, self.h_min, self.h_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(ScanError::Grid("bounds must be finite".into()));
        }
        if self.gamma_min >= self.gamma_max || self.h_min >= self.h_max {
            return Err(ScanError::Grid("min must be below max".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_gamma * self.n_h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_gamma(&self) -> f64 {
        (self.gamma_max - self.gamma_min) / self.n_gamma as f64
    }

    pub fn d_h(&self) -> f64 {
        (self.h_max - self.h_min) / self.n_h as f64
    }

    /// Row-major index, rows of constant h.
    pub fn index(&self, i_gamma: usize, i_h: usize) -> usize {
        i_h * self.n_gamma + i_gamma
    }

    /// (γ, h) of node (i, j).
    pub fn node(&self, i_gamma: usize, i_h: usize) -> (f64, f64) {
        let g = self.gamma_min + (i_gamma as f64 + 0.5) * self.d_gamma();
        let mut h = self.h_min + (i_h as f64 + 0.5) * self.d_h();
        for _ in 0..8 {
            if line_distance(g, h) > LINE_CLEARANCE {
                break;
            }
            h += 3.0 * LINE_CLEARANCE;
        }
        (g, h)
    }

    pub fn nodes(&self) -> Vec<(f64, f64)> {
        (0..self.n_h)
            .flat_map(|j| (0..self.n_gamma).map(move |i| (i, j)))
            .map(|(i, j)| self.node(i, j))
            .collect()
    }
}

impl FromStr for Grid {
    type Err = ScanError;

    /// `gmin:gmax:ng x hmin:hmax:nh`, e.g. `0:1.6:200x0:1.6:200`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('x')
            .ok_or_else(|| ScanError::Grid(format!("'{s}' lacks the 'x' separator")))?;
        let (g0, g1, ng) = parse_axis(a)?;
        let (h0, h1, nh) = parse_axis(b)?;
        Grid::new((g0, g1), (h0, h1), ng, nh)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}x{}:{}:{}",
            self.gamma_min, self.gamma_max, self.n_gamma, self.h_min, self.h_max, self.n_h
        )
    }
}

/// Distance to the nearest of γ = 0, |γ| = 1, h = 0, |h| = 1, γ² + h² = 1.
pub fn line_distance(gamma: f64, h: f64) -> f64 {
    let (g, ha) = (gamma.abs(), h.abs());
    [g, (g - 1.0).abs(), ha, (ha - 1.0).abs(), (g.hypot(ha) - 1.0).abs()]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseClassifier {
    /// Exact diagonalization, L ≤ 13.
    Exact,
    /// Sector spectra under the unpaired-mode parity rule; any L.
    Fermionic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CaseCell {
    Case(CaseTag),
    Unclassifiable,
    Error(String),
}

impl CaseCell {
    pub fn tag(&self) -> Option<CaseTag> {
        match self {
            CaseCell::Case(t) => Some(*t),
            _ => None,
        }
    }

    /// CSV token: 1..5, `unclassifiable` or `error`.
    pub fn token(&self) -> String {
        match self {
            CaseCell::Case(t) => t.number().to_string(),
            CaseCell::Unclassifiable => "unclassifiable".into(),
            CaseCell::Error(_) => "error".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMap {
    pub grid: Grid,
    #[serde(rename = "L")]
    pub l: usize,
    pub classifier: CaseClassifier,
    pub cells: Vec<CaseCell>,
}

fn case_cell(params: Result<ChainParams, crate::chain::ChainError>, c: CaseClassifier) -> CaseCell {
    let p = match params {
        Ok(p) => p,
        Err(e) => return CaseCell::Error(e.to_string()),
    };
    let r = match c {
        CaseClassifier::Exact => classify_case(&p, CASE_TOL),
        CaseClassifier::Fermionic => classify_case_fermionic(&p, CASE_TOL),
    };
    match r {
        Ok(label) => CaseCell::Case(label.tag),
        Err(EdError::Unclassifiable(_)) => CaseCell::Unclassifiable,
        Err(e) => CaseCell::Error(e.to_string()),
    }
}

/// Ground-state case label at every node.
pub fn scan_cases(grid: &Grid, l: usize, classifier: CaseClassifier) -> Result<CaseMap, ScanError> {
    grid.validate()?;
    if classifier == CaseClassifier::Exact && l > MAX_ED_LENGTH {
        return Err(ScanError::Capacity(l));
    }
    let cells = grid
        .nodes()
        .par_iter()
        .map(|&(g, h)| case_cell(ChainParams::new(l, g, h), classifier))
        .collect();
    Ok(CaseMap {
        grid: *grid,
        l,
        classifier,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SignQuantity {
    RicciR,
    RicciNS,
    RicciProduct,
    DeltaRicci,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignMap {
    pub grid: Grid,
    pub quantity: SignQuantity,
    #[serde(rename = "L")]
    pub l: usize,
    pub delta: f64,
    /// Unclamped values, NaN at singular nodes.
    pub raw: Vec<f64>,
    pub clamped: Vec<f64>,
    pub signs: Vec<i8>,
    pub singular: Vec<bool>,
}

pub fn clamp(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

fn sign_value(q: SignQuantity, p: &ChainParams, m: RicciMethod) -> Option<f64> {
    let v = match q {
        SignQuantity::RicciR => ricci_value(p, Sector::R, m),
        SignQuantity::RicciNS => ricci_value(p, Sector::NS, m),
        SignQuantity::RicciProduct => {
            ricci_value(p, Sector::R, m).and_then(|r| Ok(r * ricci_value(p, Sector::NS, m)?))
        }
        SignQuantity::DeltaRicci => ricci_difference_with(p, m),
    };
    v.ok().filter(|x| x.is_finite())
}

/// Evaluate a curvature quantity at every node and clamp to [−δ, δ].
pub fn scan_sign(
    grid: &Grid,
    l: usize,
    quantity: SignQuantity,
    delta: f64,
    method: RicciMethod,
) -> Result<SignMap, ScanError> {
    grid.validate()?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(ScanError::Domain(format!("clamp delta must be positive, got {delta}")));
    }
    if l < 2 {
        return Err(ScanError::Domain(format!("L must be >= 2, got {l}")));
    }
    let raw: Vec<f64> = grid
        .nodes()
        .par_iter()
        .map(|&(g, h)| {
            ChainParams::new(l, g, h)
                .ok()
                .and_then(|p| sign_value(quantity, &p, method))
                .unwrap_or(f64::NAN)
        })
        .collect();
    let singular: Vec<bool> = raw.iter().map(|v| v.is_nan()).collect();
    let clamped = raw
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { clamp(v, delta) })
        .collect();
    let signs = raw
        .iter()
        .map(|&v| if v.is_nan() { 0 } else { sign_of(v) })
        .collect();
    Ok(SignMap {
        grid: *grid,
        quantity,
        l,
        delta,
        raw,
        clamped,
        signs,
        singular,
    })
}

/// A scalar field on grid nodes; NaN masks a node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            grid: *grid,
            values: grid.nodes().into_iter().map(|(g, h)| f(g, h)).collect(),
        }
    }
}

impl From<&SignMap> for ScalarField {
    fn from(m: &SignMap) -> Self {
        // Signs below the zero floor count as zero, not as crossings.
        let values = m
            .raw
            .iter()
            .map(|&v| if v.abs() < ZERO_FLOOR { 0.0 } else { v })
            .collect();
        Self {
            grid: m.grid,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCurve {
    /// (γ, h) polyline.
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
    /// Ambiguous cells this curve passes through.
    pub saddle_cells: usize,
}

/// Cell edge: horizontal edges join (i, j)–(i+1, j), vertical (i, j)–(i, j+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Marching squares on the zero level.
///
/// Cells with a masked corner are skipped, so curves never enter singular
/// regions. Saddle cells are resolved by the sign of the corner average.
/// Curves with fewer than 3 points are dropped.
pub fn extract_zero_curves_field(field: &ScalarField) -> Vec<ZeroCurve> {
    let g = &field.grid;
    let val = |i: usize, j: usize| field.values[g.index(i, j)];
    let pos = |v: f64| v > 0.0;
    let crossing = |e: Edge| -> (f64, f64) {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::H(i, j) => ((i, j), (i + 1, j)),
            Edge::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (v0, v1) = (val(i0, j0), val(i1, j1));
        let t = v0 / (v0 - v1);
        let (a, b) = (g.node(i0, j0), g.node(i1, j1));
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    let mut segments: Vec<(Edge, Edge, bool)> = Vec::new();
    for j in 0..g.n_h - 1 {
        for i in 0..g.n_gamma - 1 {
            let c = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            if c.iter().any(|v| v.is_nan()) {
                continue;
            }
            let p = c.map(pos);
            // Edges in corner order: bottom, right, top, left.
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            let cut: Vec<usize> = (0..4).filter(|&k| p[k] != p[(k + 1) % 4]).collect();
            match cut.len() {
                2 => segments.push((edges[cut[0]], edges[cut[1]], false)),
                4 => {
                    let centre = pos(c.iter().sum::<f64>() / 4.0);
                    // Isolate the two corners whose sign differs from the centre.
                    let lone: Vec<usize> = (0..4).filter(|&k| p[k] != centre).collect();
                    for k in lone {
                        segments.push((edges[(k + 3) % 4], edges[k], true));
                    }
                }
                _ => {}
            }
        }
    }
    // Each edge touches at most two segments; walk the chains.
    let mut adj: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (s, &(a, b, _)) in segments.iter().enumerate() {
        adj.entry(a).or_default().push(s);
        adj.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut curves = Vec::new();
    let other = |s: usize, e: Edge| if segments[s].0 == e { segments[s].1 } else { segments[s].0 };
    let walk = |start_edge: Edge, first: usize, used: &mut Vec<bool>| -> (Vec<Edge>, usize, bool) {
        let mut path = vec![start_edge];
        let mut saddles = 0;
        let mut seg = first;
        let mut edge = start_edge;
        loop {
            used[seg] = true;
            if segments[seg].2 {
                saddles += 1;
            }
            edge = other(seg, edge);
            path.push(edge);
            if edge == start_edge {
                return (path, saddles, true);
            }
            match adj[&edge].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => return (path, saddles, false),
            }
        }
    };
    // Open chains start at edges with a single segment.
    let ends: Vec<Edge> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(e, _)| *e).collect();
    for e in ends {
        let s = adj[&e][0];
        if used[s] {
            continue;
        }
        let (path, saddles, closed) = walk(e, s, &mut used);
        curves.push((path, saddles, closed));
    }
    for s in 0..segments.len() {
        if !used[s] {
            let (path, saddles, closed) = walk(segments[s].0, s, &mut used);
            curves.push((path, saddles, closed));
        }
    }
    curves
        .into_iter()
        .map(|(path, saddles, closed)| {
            let mut points: Vec<(f64, f64)> = path.into_iter().map(crossing).collect();
            if closed {
                points.pop();
            }
            ZeroCurve {
                points,
                closed,
                saddle_cells: saddles,
            }
        })
        .filter(|c| c.points.len() >= 3)
        .collect()
}

pub fn extract_zero_curves(map: &SignMap) -> Vec<ZeroCurve> {
    extract_zero_curves_field(&ScalarField::from(map))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcFit {
    /// 1-based, in increasing h₀.
    pub index: usize,
    pub h0: f64,
    pub residual: f64,
    pub n_points: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcReport {
    #[serde(rename = "L")]
    pub l: usize,
    pub fits: Vec<ArcFit>,
    /// Number of accepted arcs.
    pub m: usize,
    pub outermost_h0: Option<f64>,
}

/// Fit each curve to γ² + (h/h₀)² = 1.
///
/// With s = √(1 − γ²) the least-squares h₀ for h = h₀·s is Σsh / Σs²; the
/// residual is the rms of γ² + (h/h₀)² − 1 over the curve.
pub fn fit_arcs(curves: &[ZeroCurve], l: usize, rms_limit: f64) -> ArcReport {
    let mut fits: Vec<ArcFit> = curves
        .iter()
        .filter_map(|c| {
            let pts: Vec<(f64, f64)> = c.points.iter().copied().filter(|p| p.0.abs() < 1.0).collect();
            if pts.is_empty() {
                return None;
            }
            let (mut sh, mut ss) = (0.0, 0.0);
            for &(g, h) in &pts {
                let s = (1.0 - g * g).sqrt();
                sh += s * h;
                ss += s * s;
            }
            let h0 = sh / ss;
            let rms = (pts
                .iter()
                .map(|&(g, h)| (g * g + (h / h0).powi(2) - 1.0).powi(2))
                .sum::<f64>()
                / pts.len() as f64)
                .sqrt();
            Some(ArcFit {
                index: 0,
                h0,
                residual: rms,
                n_points: c.points.len(),
                accepted: rms <= rms_limit,
            })
        })
        .collect();
    fits.sort_by(|a, b| a.h0.total_cmp(&b.h0));
    for (i, f) in fits.iter_mut().enumerate() {
        f.index = i + 1;
    }
    let acc: Vec<&ArcFit> = fits.iter().filter(|f| f.accepted).collect();
    ArcReport {
        l,
        m: acc.len(),
        outermost_h0: acc.last().map(|f| f.h0),
        fits,
    }
}

/// The grid behind the arc count: 96 × 96 over γ ∈ (0, 0.9], h ∈ (0, 1).
pub fn arc_grid() -> Grid {
    Grid::new((0.0, 0.9), (0.0, 1.0), 96, 96).expect("static grid")
}

/// δE at nodes whose ground state is of case 1, 2, 4 or 5; NaN elsewhere.
///
/// Case-boundary arcs are where the NS and R ground levels cross, i.e. the
/// zero set of δE inside the region where both levels are physical.
pub fn case_boundary_field(map: &CaseMap) -> ScalarField {
    let values = map
        .grid
        .nodes()
        .par_iter()
        .zip(map.cells.par_iter())
        .map(|(&(g, h), cell)| match cell.tag() {
            Some(CaseTag::Case3) | None => f64::NAN,
            Some(_) => ChainParams::new(map.l, g, h).map_or(f64::NAN, |p| delta_gs(&p)),
        })
        .collect();
    ScalarField {
        grid: map.grid,
        values,
    }
}

/// Case map, masked δE field, zero curves and arc fits in one go.
pub fn case_arcs(grid: &Grid, l: usize, classifier: CaseClassifier) -> Result<(ArcReport, Vec<ZeroCurve>), ScanError> {
    let map = scan_cases(grid, l, classifier)?;
    let curves = extract_zero_curves_field(&case_boundary_field(&map));
    Ok((fit_arcs(&curves, l, ARC_RMS_LIMIT), curves))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignRun {
    pub sign: i8,
    pub from_l: usize,
    pub to_l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSequenceReport {
    pub gamma: f64,
    pub h: f64,
    pub ls: Vec<usize>,
    pub values: Vec<f64>,
    pub signs: Vec<i8>,
    pub runs: Vec<SignRun>,
    /// Number of sign flips between consecutive nonzero entries.
    pub changes: usize,
    /// Start of the final constant-sign run, if it is nonzero.
    pub constant_from: Option<usize>,
}

/// δE sign at each L and the runs it forms.
pub fn sign_sequence_scan(gamma: f64, h: f64, ls: &[usize]) -> Result<SignSequenceReport, ScanError> {
    let params: Vec<ChainParams> = ls
        .iter()
        .map(|&l| ChainParams::new(l, gamma, h))
        .collect::<Result<_, _>>()
        .map_err(|e| ScanError::Domain(e.to_string()))?;
    let values: Vec<f64> = params.par_iter().map(delta_gs).collect();
    let signs: Vec<i8> = values.iter().map(|&v| sign_of(v)).collect();
    let mut runs: Vec<SignRun> = Vec::new();
    for (&l, &s) in ls.iter().zip(&signs) {
        match runs.last_mut() {
            Some(r) if r.sign == s => r.to_l = l,
            _ => runs.push(SignRun {
                sign: s,
                from_l: l,
                to_l: l,
            }),
        }
    }
    let nz: Vec<i8> = signs.iter().copied().filter(|&s| s != 0).collect();
    let changes = nz.windows(2).filter(|w| w[0] != w[1]).count();
    let constant_from = runs.last().filter(|r| r.sign != 0).map(|r| r.from_l);
    Ok(SignSequenceReport {
        gamma,
        h,
        ls: ls.to_vec(),
        values,
        signs,
        runs,
        changes,
        constant_from,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_nodes() {
        let g: Grid = "0:1.6:200x0:1.6:100".parse().unwrap();
        assert_eq!((g.n_gamma, g.n_h), (200, 100));
        assert_eq!(g.to_string(), "0:1.6:200x0:1.6:100");
        for (gm, h) in g.nodes() {
            assert!(gm > 0.0 && gm < 1.6 && h > 0.0 && h < 1.6 + 1e-4);
            assert!(line_distance(gm, h) > LINE_CLEARANCE);
        }
        assert!("0:1:1x0:1:4".parse::<Grid>().is_err());
        assert!("1:0:4x0:1:4".parse::<Grid>().is_err());
        assert!("0:1:4".parse::<Grid>().is_err());
    }

    #[test]
    fn nudge_clears_lines() {
        // Node centres land exactly on h = 1 for this grid.
        let g = Grid::new((0.0, 1.0), (0.5, 1.5), 4, 5).unwrap();
        for (gm, h) in g.nodes() {
            assert!(line_distance(gm, h) > LINE_CLEARANCE, "{gm} {h}");
        }
    }

    #[test]
    fn circle_is_recovered() {
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 80, 80).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| x * x + y * y - 0.25);
        let curves = extract_zero_curves_field(&f);
        assert_eq!(curves.len(), 1);
        assert!(curves[0].closed);
        let step = g.d_gamma();
        for &(x, y) in &curves[0].points {
            assert!((x.hypot(y) - 0.5).abs() < 2.0 * step);
        }
        // Every direction is covered, so the Hausdorff distance is small too.
        for k in 0..36 {
            let a = k as f64 * std::f64::consts::PI / 18.0;
            let (cx, cy) = (0.5 * a.cos(), 0.5 * a.sin());
            let d = curves[0]
                .points
                .iter()
                .map(|&(x, y)| (x - cx).hypot(y - cy))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 2.0 * step);
        }
    }

    #[test]
    fn definite_field_has_no_curves() {
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 20, 20).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| 1.0 + x + y);
        assert!(extract_zero_curves_field(&f).is_empty());
    }

    #[test]
    fn masked_cells_stop_curves() {
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 30, 30).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| if (x - 0.5).abs() < 0.1 { f64::NAN } else { y - 0.5 });
        let curves = extract_zero_curves_field(&f);
        assert_eq!(curves.len(), 2);
        for c in &curves {
            assert!(c.points.iter().all(|p| (p.0 - 0.5).abs() > 0.05));
        }
    }

    #[test]
    fn saddle_uses_corner_average() {
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 2, 2).unwrap();
        // Corners (bl, br, tr, tl) = (+, −, +, −) with positive mean.
        let f = ScalarField {
            grid: g,
            values: vec![2.0, -1.0, -1.0, 2.0],
        };
        // Curves need 3 points, so inspect segments through a bigger field.
        assert!(extract_zero_curves_field(&f).is_empty());
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 40, 40).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| (x - 0.5) * (y - 0.5) + 1e-3);
        let curves = extract_zero_curves_field(&f);
        assert_eq!(curves.len(), 2);
        // With a positive centre the two negative quadrants are cut off.
        for c in &curves {
            let (sx, sy) = c.points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            let n = c.points.len() as f64;
            assert!((sx / n - 0.5) * (sy / n - 0.5) < 0.0);
        }
    }

    #[test]
    fn arc_fit_on_exact_ellipses() {
        let mut curves = Vec::new();
        for h0 in [0.4, 0.8] {
            let points = (0..20)
                .map(|k| {
                    let g = 0.04 * k as f64;
                    (g, h0 * (1.0 - g * g).sqrt())
                })
                .collect();
            curves.push(ZeroCurve {
                points,
                closed: false,
                saddle_cells: 0,
            });
        }
        let r = fit_arcs(&curves, 8, ARC_RMS_LIMIT);
        assert_eq!(r.m, 2);
        assert!((r.fits[0].h0 - 0.4).abs() < 1e-12);
        assert!(r.fits[1].residual < 1e-12);
        assert_eq!(r.outermost_h0, Some(r.fits[1].h0));
    }

    #[test]
    fn clamp_is_idempotent() {
        for x in [-5.0, -0.3, 0.0, 0.7, 12.0] {
            assert_eq!(clamp(clamp(x, 1.0), 1.0), clamp(x, 1.0));
        }
    }

    #[test]
    fn sign_map_examples() {
        let g = Grid::new((0.0, 0.9), (0.0, 1.0), 16, 16).unwrap();
        let m = scan_sign(&g, 20, SignQuantity::RicciProduct, 1.0, RicciMethod::Determinant).unwrap();
        let inside_neg = g
            .nodes()
            .iter()
            .zip(&m.signs)
            .any(|(&(x, y), &s)| x * x + y * y < 1.0 && s < 0);
        assert!(inside_neg);
        assert!(m.clamped.iter().all(|v| v.abs() <= 1.0));
        let d = scan_sign(&g, 10, SignQuantity::DeltaRicci, 1.0, RicciMethod::Determinant).unwrap();
        assert!(d.signs.contains(&1) && d.signs.contains(&-1));
        assert!(!extract_zero_curves(&d).is_empty());
        assert!(scan_sign(&g, 10, SignQuantity::RicciR, 0.0, RicciMethod::Determinant).is_err());
    }

    #[test]
    fn arc_counts_follow_half_length() {
        for l in [5, 8] {
            let (r, _) = case_arcs(&arc_grid(), l, CaseClassifier::Fermionic).unwrap();
            assert_eq!(r.m, l / 2, "L={l}: {:?}", r.fits);
            assert!((r.outermost_h0.unwrap() - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn exact_case_scan_small() {
        let g = Grid::new((0.0, 1.6), (0.0, 1.6), 8, 8).unwrap();
        let m = scan_cases(&g, 6, CaseClassifier::Exact).unwrap();
        let f = scan_cases(&g, 6, CaseClassifier::Fermionic).unwrap();
        assert_eq!(m.cells, f.cells);
        assert!(scan_cases(&g, 14, CaseClassifier::Exact).is_err());
    }

    #[test]
    fn case1_above_the_circle() {
        let g = Grid::new((0.0, 1.6), (0.0, 1.6), 64, 64).unwrap();
        let m = scan_cases(&g, 8, CaseClassifier::Fermionic).unwrap();
        for (&(x, y), c) in g.nodes().iter().zip(&m.cells) {
            // The band between the circle and h = 1 for γ < 1.
            if x < 1.0 && y > (1.0 - x * x).sqrt() + 0.05 && y < 0.95 {
                assert_eq!(c.tag(), Some(CaseTag::Case1), "({x}, {y})");
            }
        }
    }

    #[test]
    fn sign_sequences() {
        let ls: Vec<usize> = (5..=20).collect();
        let r = sign_sequence_scan(1.0, 0.0, &ls).unwrap();
        assert!(r.signs.iter().all(|&s| s == 0));
        let r = sign_sequence_scan(0.5, 0.5, &ls).unwrap();
        assert!(r.changes >= 1);
        let ls: Vec<usize> = (5..=40).collect();
        let r = sign_sequence_scan(0.5, 1.5, &ls).unwrap();
        assert!(r.constant_from.is_some());
    }
}
