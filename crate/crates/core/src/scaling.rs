//! Finite-size series in L and their decay fits, plus Euler-Maclaurin
//! approximations of the sector energy gap.

use crate::chain::{ChainError, ChainParams, Sector};
use crate::geometry::{ricci_difference_with, ricci_value, GeometryError, RicciMethod};
use crate::spectrum::delta_gs;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Values below this count as zero (sign 0, excluded from log fits).
pub const ZERO_FLOOR: f64 = 1e-30;
pub const MIN_FIT_SAMPLES: usize = 6;
pub const MIN_CLASSIFY_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("need at least {needed} usable samples, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("{branch} branch fit has R^2 = {r_squared:.4}")]
    BranchMisfit { branch: &'static str, r_squared: f64 },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Quantity {
    DeltaE,
    RicciNS,
    RicciR,
    DeltaRicci,
}

impl Quantity {
    /// Sector of a single-sector Ricci series.
    pub fn sector(self) -> Option<Sector> {
        match self {
            Quantity::RicciNS => Some(Sector::NS),
            Quantity::RicciR => Some(Sector::R),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "L")]
    pub l: usize,
    /// `None` where the quantity is singular at this L.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSeries {
    pub quantity: Quantity,
    pub gamma: f64,
    pub h: f64,
    pub samples: Vec<Sample>,
    pub sign_sequence: Vec<i8>,
}

pub fn sign_of(v: f64) -> i8 {
    if v.abs() < ZERO_FLOOR {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

impl SizeSeries {
    pub fn from_samples(quantity: Quantity, gamma: f64, h: f64, samples: Vec<Sample>) -> Self {
        let sign_sequence = samples
            .iter()
            .map(|s| s.value.map_or(0, sign_of))
            .collect();
        Self {
            quantity,
            gamma,
            h,
            samples,
            sign_sequence,
        }
    }

    /// Build from (L, value) pairs, e.g. synthetic data.
    pub fn from_values(quantity: Quantity, gamma: f64, h: f64, data: &[(usize, f64)]) -> Self {
        let samples = data
            .iter()
            .map(|&(l, v)| Sample { l, value: Some(v) })
            .collect();
        Self::from_samples(quantity, gamma, h, samples)
    }

    pub fn valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.samples.iter().filter_map(|s| s.value.map(|v| (s.l, v)))
    }

    pub fn gaps(&self) -> usize {
        self.samples.iter().filter(|s| s.value.is_none()).count()
    }

    pub fn in_window(&self, window: (usize, usize)) -> SizeSeries {
        let samples = self
            .samples
            .iter()
            .filter(|s| s.l >= window.0 && s.l <= window.1)
            .copied()
            .collect();
        SizeSeries::from_samples(self.quantity, self.gamma, self.h, samples)
    }

    /// The largest half of the valid L values.
    pub fn default_window(&self) -> Option<(usize, usize)> {
        let ls: Vec<usize> = self.valid().map(|(l, _)| l).collect();
        if ls.is_empty() {
            return None;
        }
        Some((ls[ls.len() / 2], *ls.last().unwrap()))
    }
}

fn evaluate(quantity: Quantity, params: &ChainParams, method: RicciMethod) -> Option<f64> {
    let r: Result<f64, GeometryError> = match quantity {
        Quantity::DeltaE => Ok(delta_gs(params)),
        Quantity::RicciNS => ricci_value(params, Sector::NS, method),
        Quantity::RicciR => ricci_value(params, Sector::R, method),
        Quantity::DeltaRicci => ricci_difference_with(params, method),
    };
    r.ok().filter(|v| v.is_finite())
}

/// Evaluate `quantity` at each L. Ricci series use the determinant form,
/// which needs no finite-difference stencil.
pub fn build_series(
    quantity: Quantity,
    gamma: f64,
    h: f64,
    ls: &[usize],
) -> Result<SizeSeries, ScalingError> {
    build_series_with(quantity, gamma, h, ls, RicciMethod::Determinant)
}

pub fn build_series_with(
    quantity: Quantity,
    gamma: f64,
    h: f64,
    ls: &[usize],
    method: RicciMethod,
) -> Result<SizeSeries, ScalingError> {
    if ls.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ScalingError::Domain("L list must be strictly increasing".into()));
    }
    if let Some(&l) = ls.iter().find(|&&l| l < 4) {
        return Err(ScalingError::Domain(format!("every L must be >= 4, got {l}")));
    }
    let params: Vec<ChainParams> = ls
        .iter()
        .map(|&l| ChainParams::new(l, gamma, h))
        .collect::<Result<_, _>>()?;
    let samples = params
        .par_iter()
        .map(|p| Sample {
            l: p.l,
            value: evaluate(quantity, p, method),
        })
        .collect();
    Ok(SizeSeries::from_samples(quantity, gamma, h, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    Exponential,
    Powerlaw,
    Biexponential,
    Erratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchRule {
    Mod4,
    Mod2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: DecayModel,
    /// β, α, or (β_U, β_L).
    pub exponents: Vec<f64>,
    pub prefactors: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: Vec<f64>,
    pub window: (usize, usize),
    pub branch_rule: BranchRule,
    pub n_samples: usize,
    /// Every sample below [`ZERO_FLOOR`].
    pub zero_series: bool,
    /// Most of the window is singular.
    pub divergent: bool,
    /// Oscillating-branch signs agree with the expected pattern up to one
    /// overall sign. Only set by bi-exponential fits.
    pub sign_pattern_ok: Option<bool>,
    /// Same, without the overall-sign freedom.
    pub sign_pattern_exact: Option<bool>,
}

impl FitResult {
    fn bare(model: DecayModel, window: (usize, usize), n: usize) -> Self {
        Self {
            model,
            exponents: vec![],
            prefactors: vec![],
            std_errors: vec![],
            r_squared: vec![],
            window,
            branch_rule: BranchRule::None,
            n_samples: n,
            zero_series: false,
            divergent: false,
            sign_pattern_ok: None,
            sign_pattern_exact: None,
        }
    }

    pub fn exponent(&self) -> f64 {
        self.exponents[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
}

/// Ordinary least squares y = intercept + slope·x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ssr / syy).clamp(0.0, 1.0) };
    let slope_se = if x.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        slope_se,
        r_squared,
    }
}

fn log_points(series: &SizeSeries, window: (usize, usize)) -> Vec<(usize, f64)> {
    series
        .valid()
        .filter(|&(l, v)| l >= window.0 && l <= window.1 && v.abs() > ZERO_FLOOR)
        .map(|(l, v)| (l, v.abs().ln()))
        .collect()
}

fn resolve_window(series: &SizeSeries, window: Option<(usize, usize)>) -> Result<(usize, usize), ScalingError> {
    window
        .or_else(|| series.default_window())
        .ok_or(ScalingError::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: 0,
        })
}

fn loglinear(
    series: &SizeSeries,
    window: Option<(usize, usize)>,
    log_x: bool,
    min: usize,
) -> Result<(LineFit, (usize, usize), usize), ScalingError> {
    let w = resolve_window(series, window)?;
    let pts = log_points(series, w);
    if pts.len() < min {
        return Err(ScalingError::InsufficientData {
            needed: min,
            got: pts.len(),
        });
    }
    let x: Vec<f64> = pts
        .iter()
        .map(|&(l, _)| if log_x { (l as f64).ln() } else { l as f64 })
        .collect();
    let y: Vec<f64> = pts.iter().map(|&(_, v)| v).collect();
    Ok((linear_fit(&x, &y), w, pts.len()))
}

fn single_fit(model: DecayModel, f: LineFit, w: (usize, usize), n: usize) -> FitResult {
    let mut r = FitResult::bare(model, w, n);
    r.exponents = vec![-f.slope];
    r.prefactors = vec![f.intercept.exp()];
    r.std_errors = vec![f.slope_se];
    r.r_squared = vec![f.r_squared];
    r
}

/// |v| ≈ A e^{−βL}. The window defaults to the largest half of L.
pub fn fit_exponential(
    series: &SizeSeries,
    window: Option<(usize, usize)>,
) -> Result<FitResult, ScalingError> {
    let (f, w, n) = loglinear(series, window, false, MIN_FIT_SAMPLES)?;
    Ok(single_fit(DecayModel::Exponential, f, w, n))
}

/// |v| ≈ A L^{−α}.
pub fn fit_powerlaw(
    series: &SizeSeries,
    window: Option<(usize, usize)>,
) -> Result<FitResult, ScalingError> {
    let (f, w, n) = loglinear(series, window, true, MIN_FIT_SAMPLES)?;
    Ok(single_fit(DecayModel::Powerlaw, f, w, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    /// Both single-model R² below this means erratic.
    pub erratic_r2: f64,
    /// Minimum R² of each branch of a bi-exponential fit.
    pub branch_r2: f64,
    pub window: Option<(usize, usize)>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            erratic_r2: 0.9,
            branch_r2: 0.95,
            window: None,
        }
    }
}

/// Pick exponential, power-law, bi-exponential or erratic for a series.
///
/// Within the window (all of it by default) the single-model fits use the
/// upper half of L. A window where most samples are singular is erratic with
/// `divergent` set; an all-zero series is erratic with `zero_series` set.
pub fn classify_decay(series: &SizeSeries, config: &DecayConfig) -> Result<FitResult, ScalingError> {
    let ws = match config.window {
        Some(w) => series.in_window(w),
        None => series.clone(),
    };
    let full = match (ws.samples.first(), ws.samples.last()) {
        (Some(a), Some(b)) => (a.l, b.l),
        _ => {
            return Err(ScalingError::InsufficientData {
                needed: MIN_CLASSIFY_SAMPLES,
                got: 0,
            })
        }
    };
    let total = ws.samples.len();
    let valid: Vec<(usize, f64)> = ws.valid().collect();
    if 2 * valid.len() < total {
        let mut r = FitResult::bare(DecayModel::Erratic, full, valid.len());
        r.divergent = true;
        return Ok(r);
    }
    if valid.len() < MIN_CLASSIFY_SAMPLES {
        return Err(ScalingError::InsufficientData {
            needed: MIN_CLASSIFY_SAMPLES,
            got: valid.len(),
        });
    }
    if valid.iter().all(|&(_, v)| v.abs() < ZERO_FLOOR) {
        let mut r = FitResult::bare(DecayModel::Erratic, full, valid.len());
        r.zero_series = true;
        return Ok(r);
    }
    let upper = (valid[valid.len() / 2].0, full.1);
    let exp = fit_exponential(&ws, Some(upper));
    let pow = fit_powerlaw(&ws, Some(upper));
    let best = match (exp, pow) {
        (Ok(e), Ok(p)) => {
            if e.r_squared[0] >= p.r_squared[0] {
                e
            } else {
                p
            }
        }
        (Ok(e), Err(_)) => e,
        (Err(_), Ok(p)) => p,
        (Err(e), Err(_)) => return Err(e),
    };
    let best_r2 = best.r_squared[0];
    if best_r2 < config.branch_r2 {
        // A poor single fit that splits cleanly into two even/odd branches.
        for rule in [BranchRule::Mod2, BranchRule::Mod4] {
            if let Ok(b) = fit_biexponential_in(&ws, rule, Some(upper), config.branch_r2) {
                return Ok(b);
            }
        }
    }
    if best_r2 < config.erratic_r2 {
        let mut r = FitResult::bare(DecayModel::Erratic, upper, best.n_samples);
        r.r_squared = vec![best_r2];
        return Ok(r);
    }
    Ok(best)
}

/// Expected sign of the oscillating (even-L) branch.
fn expected_sign(rule: BranchRule, l: usize, sector: Option<Sector>) -> Option<i8> {
    match rule {
        BranchRule::Mod4 => Some(if (l / 2 + 1) % 2 == 0 { 1 } else { -1 }),
        // (−1)^{(N_L−1)/2}: +1 for NS, −1 for R, independent of L.
        BranchRule::Mod2 => sector.map(|s| if s.n_l() == 1 { 1 } else { -1 }),
        BranchRule::None => None,
    }
}

/// Two exponential branches, even L (upper, U) and odd L (lower, L).
///
/// Both rules split by the parity of L; they differ in the sign pattern
/// expected on the even branch, (−1)^{L/2+1} for `Mod4` and (−1)^{(N_L−1)/2}
/// for `Mod2`.
pub fn fit_biexponential(
    series: &SizeSeries,
    rule: BranchRule,
    window: Option<(usize, usize)>,
) -> Result<FitResult, ScalingError> {
    fit_biexponential_in(series, rule, window, DecayConfig::default().branch_r2)
}

fn fit_biexponential_in(
    series: &SizeSeries,
    rule: BranchRule,
    window: Option<(usize, usize)>,
    min_r2: f64,
) -> Result<FitResult, ScalingError> {
    if rule == BranchRule::None {
        return Err(ScalingError::Domain("bi-exponential fit needs a branch rule".into()));
    }
    let w = match window {
        Some(w) => w,
        None => match (series.samples.first(), series.samples.last()) {
            (Some(a), Some(b)) => (a.l, b.l),
            _ => {
                return Err(ScalingError::InsufficientData {
                    needed: 2 * 3,
                    got: 0,
                })
            }
        },
    };
    let ws = series.in_window(w);
    let branch = |even: bool| {
        let s = SizeSeries::from_samples(
            ws.quantity,
            ws.gamma,
            ws.h,
            ws.samples
                .iter()
                .filter(|s| (s.l % 2 == 0) == even)
                .copied()
                .collect(),
        );
        loglinear(&s, Some(w), false, 3)
    };
    let (fu, _, nu) = branch(true)?;
    let (fl, _, nl) = branch(false)?;
    if fu.r_squared < min_r2 {
        return Err(ScalingError::BranchMisfit {
            branch: "upper",
            r_squared: fu.r_squared,
        });
    }
    if fl.r_squared < min_r2 {
        return Err(ScalingError::BranchMisfit {
            branch: "lower",
            r_squared: fl.r_squared,
        });
    }
    let ratios: Vec<i8> = ws
        .valid()
        .filter(|&(l, v)| l % 2 == 0 && v.abs() > ZERO_FLOOR)
        .filter_map(|(l, v)| expected_sign(rule, l, ws.quantity.sector()).map(|e| e * sign_of(v)))
        .collect();
    let (ok, exact) = if ratios.is_empty() {
        // Without a sector the Mod2 pattern reduces to a constant sign.
        let signs: Vec<i8> = ws
            .valid()
            .filter(|&(l, v)| l % 2 == 0 && v.abs() > ZERO_FLOOR)
            .map(|(_, v)| sign_of(v))
            .collect();
        (Some(signs.windows(2).all(|p| p[0] == p[1])), None)
    } else {
        (
            Some(ratios.iter().all(|&r| r == ratios[0])),
            Some(ratios.iter().all(|&r| r == 1)),
        )
    };
    let mut r = FitResult::bare(DecayModel::Biexponential, w, nu + nl);
    r.exponents = vec![-fu.slope, -fl.slope];
    r.prefactors = vec![fu.intercept.exp(), fl.intercept.exp()];
    r.std_errors = vec![fu.slope_se, fl.slope_se];
    r.r_squared = vec![fu.r_squared, fl.r_squared];
    r.branch_rule = rule;
    r.sign_pattern_ok = ok;
    r.sign_pattern_exact = exact;
    Ok(r)
}

/// Empirically pinned sign of the leading critical term: δE < 0 at h = 1.
pub const EM_LEADING_SIGN: f64 = -1.0;

/// Closed-form δE at h = 1: s·πγ/(12L) − 61π³(4γ²−3)/(720γ)·L⁻³, truncated
/// after the first term for `order` 1.
pub fn em_delta_gs(gamma: f64, l: usize, order: u32) -> Result<f64, ScalingError> {
    if gamma == 0.0 {
        return Err(ScalingError::Domain("closed form needs gamma != 0".into()));
    }
    if l < 4 {
        return Err(ScalingError::Domain(format!("L must be >= 4, got {l}")));
    }
    let lf = l as f64;
    let first = EM_LEADING_SIGN * PI * gamma / (12.0 * lf);
    match order {
        1 => Ok(first),
        3 => Ok(first - 61.0 * PI.powi(3) * (4.0 * gamma * gamma - 3.0) / (720.0 * gamma) / lf.powi(3)),
        _ => Err(ScalingError::Domain(format!("order must be 1 or 3, got {order}"))),
    }
}

/// B₂, B₄, B₆, B₈.
const BERNOULLI: [f64; 4] = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
const JET: usize = 8;

/// Taylor coefficients of ε(φ₀ + t) up to t⁷.
fn epsilon_jet(params: &ChainParams, phi: f64) -> [f64; JET] {
    let (s, c) = phi.sin_cos();
    let mut fact = 1.0;
    let mut a = [0.0; JET];
    let mut b = [0.0; JET];
    for n in 0..JET {
        if n > 0 {
            fact *= n as f64;
        }
        // n-th derivatives of cos and sin at φ₀.
        let (dc, ds) = match n % 4 {
            0 => (c, s),
            1 => (-s, c),
            2 => (-c, -s),
            _ => (s, -c),
        };
        a[n] = -params.j * dc / fact;
        b[n] = params.gamma * params.j * ds / fact;
    }
    a[0] += params.h;
    let mut q = [0.0; JET];
    for n in 0..JET {
        for i in 0..=n {
            q[n] += a[i] * a[n - i] + b[i] * b[n - i];
        }
    }
    let mut e = [0.0; JET];
    if q[0] <= 0.0 {
        return e;
    }
    e[0] = q[0].sqrt();
    for n in 1..JET {
        let mut acc = q[n];
        for i in 1..n {
            acc -= e[i] * e[n - i];
        }
        e[n] = acc / (2.0 * e[0]);
    }
    e
}

/// m-th derivative in k of ε(φ(k)) with φ(k) = 2πk/L − π(N_L+1)/(2L).
///
/// Zero at a gapless point, where ε has a kink and the one-sided odd
/// derivatives cancel between the two sides.
fn dk_epsilon(params: &ChainParams, sector: Sector, k: f64, m: usize) -> f64 {
    let l = params.l as f64;
    let phi = 2.0 * PI * k / l - PI * (sector.n_l() as f64 + 1.0) / (2.0 * l);
    let jet = epsilon_jet(params, phi);
    if jet[0] < crate::spectrum::GAPLESS_EPS {
        return 0.0;
    }
    let fact: f64 = (1..=m).map(|i| i as f64).product();
    jet[m] * fact * (2.0 * PI / l).powi(m as i32)
}

fn epsilon_at(params: &ChainParams, phi: f64) -> f64 {
    let a = params.h - params.j * phi.cos();
    let b = params.gamma * params.j * phi.sin();
    a.hypot(b)
}

/// Gauss-Legendre nodes and weights on [−1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    // Two panels so a kink at either endpoint stays at a panel boundary.
    let m = 0.5 * (a + b);
    let mut s = 0.0;
    for (lo, hi) in [(a, m), (m, b)] {
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in nodes.0.iter().zip(&nodes.1) {
            s += w * r * f(c + r * x);
        }
    }
    s
}

/// Euler-Maclaurin approximation of δE with `n_terms` Bernoulli corrections.
///
/// The NS and R integrals share all of [2π/L, 2π − π/L], so only the two
/// end slivers are integrated. `n_terms` = 0 keeps the integral and the
/// boundary average.
pub fn em_general(params: &ChainParams, n_terms: usize) -> Result<f64, ScalingError> {
    if n_terms > BERNOULLI.len() {
        return Err(ScalingError::Domain(format!(
            "at most {} Bernoulli terms, got {n_terms}",
            BERNOULLI.len()
        )));
    }
    let l = params.l as f64;
    let nodes = gauss_legendre(32);
    let eps = |phi: f64| epsilon_at(params, phi);
    // ∫₁^L f dx = (L/2π)∫ ε dφ over the sector's φ range.
    let integral = l / (2.0 * PI)
        * (integrate(eps, PI / l, 2.0 * PI / l, &nodes)
            - integrate(eps, 2.0 * PI - PI / l, 2.0 * PI, &nodes));
    let f = |s: Sector, k: f64| dk_epsilon(params, s, k, 0);
    let boundary = 0.5 * (f(Sector::NS, 1.0) + f(Sector::NS, l) - f(Sector::R, 1.0) - f(Sector::R, l));
    let mut corr = 0.0;
    let mut fact = 1.0;
    for (n, b) in BERNOULLI.iter().enumerate().take(n_terms) {
        let m = 2 * n + 1;
        fact *= ((2 * n + 1) * (2 * n + 2)) as f64;
        let d = |s: Sector| dk_epsilon(params, s, l, m) - dk_epsilon(params, s, 1.0, m);
        corr += b / fact * (d(Sector::NS) - d(Sector::R));
    }
    Ok(-0.5 * (integral + boundary + corr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentCell {
    pub gamma: f64,
    pub h: f64,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

/// classify_decay at every (γ, h) node; failures are kept in-cell.
pub fn exponent_map(
    nodes: &[(f64, f64)],
    quantity: Quantity,
    ls: &[usize],
    config: &DecayConfig,
) -> Vec<ExponentCell> {
    nodes
        .par_iter()
        .map(|&(gamma, h)| {
            let r = build_series(quantity, gamma, h, ls).and_then(|s| classify_decay(&s, config));
            match r {
                Ok(fit) => ExponentCell {
                    gamma,
                    h,
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => ExponentCell {
                    gamma,
                    h,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(f: impl Fn(usize) -> f64, ls: impl Iterator<Item = usize>) -> SizeSeries {
        let data: Vec<(usize, f64)> = ls.map(|l| (l, f(l))).collect();
        SizeSeries::from_values(Quantity::DeltaE, 0.0, 0.0, &data)
    }

    #[test]
    fn exponential_recovery() {
        let s = synth(|l| 3.0 * (-0.2 * l as f64).exp(), 10..30);
        let f = fit_exponential(&s, Some((10, 29))).unwrap();
        assert!((f.exponent() - 0.2).abs() < 1e-10);
        assert!((f.r_squared[0] - 1.0).abs() < 1e-12);
        assert!((f.prefactors[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn powerlaw_recovery() {
        let s = synth(|l| 5.0 / l as f64, 8..40);
        let f = fit_powerlaw(&s, None).unwrap();
        assert!((f.exponent() - 1.0).abs() < 1e-12);
        assert_eq!(f.window, (24, 39));
    }

    #[test]
    fn too_few_samples() {
        let s = synth(|l| 1.0 / l as f64, 4..8);
        assert!(matches!(
            fit_exponential(&s, Some((4, 7))),
            Err(ScalingError::InsufficientData { needed: 6, got: 4 })
        ));
    }

    #[test]
    fn classify_synthetic() {
        let cfg = DecayConfig::default();
        let e = synth(|l| 2.0 * (-0.3 * l as f64).exp(), 10..40);
        assert_eq!(classify_decay(&e, &cfg).unwrap().model, DecayModel::Exponential);
        let p = synth(|l| 2.0 * (l as f64).powf(-1.5), 10..40);
        assert_eq!(classify_decay(&p, &cfg).unwrap().model, DecayModel::Powerlaw);
        let z = synth(|_| 0.0, 10..40);
        let r = classify_decay(&z, &cfg).unwrap();
        assert_eq!(r.model, DecayModel::Erratic);
        assert!(r.zero_series);
    }

    #[test]
    fn biexponential_synthetic() {
        let s = synth(
            |l| {
                if l % 2 == 0 {
                    let sg = if (l / 2 + 1) % 2 == 0 { 1.0 } else { -1.0 };
                    sg * (-0.1 * l as f64).exp()
                } else {
                    0.5 * (-0.3 * l as f64).exp()
                }
            },
            8..60,
        );
        let f = fit_biexponential(&s, BranchRule::Mod4, None).unwrap();
        assert!((f.exponents[0] - 0.1).abs() < 1e-10);
        assert!((f.exponents[1] - 0.3).abs() < 1e-10);
        assert_eq!(f.sign_pattern_exact, Some(true));
        let c = classify_decay(&s, &DecayConfig::default()).unwrap();
        assert_eq!(c.model, DecayModel::Biexponential);
    }

    #[test]
    fn branch_misfit_is_reported() {
        let s = synth(
            |l| if l % 2 == 0 { (l as f64 * 1.7).sin() } else { (-0.2 * l as f64).exp() },
            8..40,
        );
        assert!(matches!(
            fit_biexponential(&s, BranchRule::Mod2, None),
            Err(ScalingError::BranchMisfit { branch: "upper", .. })
        ));
    }

    #[test]
    fn scale_invariance() {
        let a = synth(|l| (-0.25 * l as f64).exp(), 10..40);
        let b = synth(|l| 1e6 * (-0.25 * l as f64).exp(), 10..40);
        let cfg = DecayConfig::default();
        let (fa, fb) = (classify_decay(&a, &cfg).unwrap(), classify_decay(&b, &cfg).unwrap());
        assert_eq!(fa.model, fb.model);
        assert!((fa.exponent() - fb.exponent()).abs() < 1e-10);
    }

    #[test]
    fn series_examples() {
        let s = build_series(Quantity::DeltaE, 1.0, 0.0, &[4, 6, 8, 10]).unwrap();
        assert!(s.valid().all(|(_, v)| v.abs() < 1e-30));
        let ls: Vec<usize> = (8..=64).collect();
        let s = build_series(Quantity::DeltaE, 0.5, 0.5, &ls).unwrap();
        // |δE| oscillates under a decaying envelope; block maxima must fall.
        let mags: Vec<f64> = s.valid().map(|(_, v)| v.abs()).collect();
        let env: Vec<f64> = mags.chunks(8).map(|c| c.iter().copied().fold(0.0, f64::max)).collect();
        assert!(env.windows(2).all(|w| w[1] < w[0]), "{env:?}");
        let s = build_series(Quantity::RicciR, 0.0, 0.5, &[8, 9, 10, 11, 12]).unwrap();
        assert!(s.gaps() >= 3);
        assert!(build_series(Quantity::DeltaE, 0.5, 0.5, &[8, 6]).is_err());
    }

    #[test]
    fn sign_alternates_at_small_l() {
        let ls: Vec<usize> = (5..=20).collect();
        let s = build_series(Quantity::DeltaE, 0.5, 0.5, &ls).unwrap();
        assert!(s.sign_sequence.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn em_closed_form_examples() {
        let a = em_delta_gs(0.5, 100, 1).unwrap();
        assert!((a.abs() - PI / 2400.0).abs() < 1e-15);
        let c = em_delta_gs(0.5, 100, 3).unwrap() - a;
        assert!((c - 61.0 * PI.powi(3) * 2.0 / 360.0 * 1e-6).abs() < 1e-12);
        assert_eq!(em_delta_gs(0.5, 200, 1).unwrap() * 200.0, a * 100.0);
        assert!(em_delta_gs(0.0, 100, 1).is_err());
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let n = gauss_legendre(12);
        let v = integrate(|x| x.powi(9) + 3.0 * x * x, 0.0, 2.0, &n);
        assert!((v - (102.4 + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn em_general_behaviour() {
        let q = ChainParams::new(200, 0.5, 1.0).unwrap();
        let exact = delta_gs(&q);
        let e0 = em_general(&q, 0).unwrap();
        assert!(e0 / exact > 0.5 && e0 / exact < 2.0, "{e0} vs {exact}");
        let e1 = (em_general(&q, 1).unwrap() - exact).abs();
        let e2 = (em_general(&q, 2).unwrap() - exact).abs();
        assert!(e2 < e1, "{e1} {e2}");
        let flat = ChainParams::new(50, 1.0, 0.0).unwrap();
        for n in 0..=4 {
            assert!(em_general(&flat, n).unwrap().abs() < 1e-12);
        }
        assert!(em_general(&q, 5).is_err());
    }

    #[test]
    fn jet_matches_finite_difference() {
        let q = ChainParams::new(40, 0.7, 0.4).unwrap();
        let d = 1e-4;
        let f = |k: f64| dk_epsilon(&q, Sector::NS, k, 0);
        let fd = (f(3.0 + d) - f(3.0 - d)) / (2.0 * d);
        assert!((dk_epsilon(&q, Sector::NS, 3.0, 1) - fd).abs() < 1e-8);
        let d = 2e-2;
        let fd3 = (f(3.0 + 2.0 * d) - 2.0 * f(3.0 + d) + 2.0 * f(3.0 - d) - f(3.0 - 2.0 * d))
            / (2.0 * d.powi(3));
        let jet = dk_epsilon(&q, Sector::NS, 3.0, 3);
        assert!((jet - fd3).abs() < 1e-3 * jet.abs(), "{jet} vs {fd3}");
    }
}
