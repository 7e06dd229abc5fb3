//! Exact diagonalization of the periodic spin chain, used as an oracle for
//! the fermionic sector picture and for ground-state case classification.

use crate::chain::{ChainParams, Sector};
use crate::spectrum::{
    delta_gs, enumerate_below, enumerate_many_body, physical_parity, sector_ground_energy,
    ManyBodySpectrum, Parity, ParityFilter, SpectrumError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

pub const MAX_ED_LENGTH: usize = 13;
pub const DEFAULT_SWEEPS: usize = 100;
pub const CASE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdError {
    #[error("exact diagonalization limited to L <= {MAX_ED_LENGTH}, got {0}")]
    Capacity(usize),
    #[error("Jacobi iteration did not converge in {sweeps} sweeps (off-norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("no case pattern matches (e0={e0}, e1={e1}, E_NS={e_ns}, E_R={e_r})",
        e0 = .0.spin_e0, e1 = .0.spin_e1, e_ns = .0.e_ns, e_r = .0.e_r)]
    Unclassifiable(Box<CaseDiagnostics>),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Dense real symmetric matrix, row-major full storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSym {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    fn off_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

fn check_length(l: usize) -> Result<(), EdError> {
    if l > MAX_ED_LENGTH {
        Err(EdError::Capacity(l))
    } else {
        Ok(())
    }
}

/// Bit i of a basis index set means spin i points down (σᶻ = −1).
///
/// Returns the diagonal element and the off-diagonal (state, amplitude) pairs.
fn apply_h(params: &ChainParams, l: usize, s: usize) -> (f64, Vec<(usize, f64)>) {
    let down = s.count_ones() as f64;
    let diag = -0.5 * params.h * (l as f64 - 2.0 * down);
    let mut off = Vec::with_capacity(l);
    for i in 0..l {
        let j = (i + 1) % l;
        let same = (s >> i & 1) == (s >> j & 1);
        // ¼(1+γ)σˣσˣ + ¼(1−γ)σʸσʸ: flips both spins; σʸσʸ contributes −1 on
        // aligned pairs and +1 on anti-aligned ones.
        let amp = if same {
            -0.5 * params.j * params.gamma
        } else {
            -0.5 * params.j
        };
        if amp != 0.0 {
            off.push((s ^ (1 << i) ^ (1 << j), amp));
        }
    }
    (diag, off)
}

/// H of the periodic chain in the σᶻ product basis, dimension 2^L.
pub fn build_spin_hamiltonian(params: &ChainParams) -> Result<DenseSym, EdError> {
    check_length(params.l)?;
    let dim = 1usize << params.l;
    let mut m = DenseSym::zeros(dim);
    for s in 0..dim {
        let (d, off) = apply_h(params, params.l, s);
        *m.at(s, s) += d;
        for (t, a) in off {
            *m.at(t, s) += a;
        }
    }
    Ok(m)
}

/// (−1)^(number of down spins) per basis state.
pub fn parity_operator(l: usize) -> Result<Vec<i8>, EdError> {
    check_length(l)?;
    Ok((0..1usize << l)
        .map(|s| if s.count_ones() % 2 == 0 { 1 } else { -1 })
        .collect())
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi, ascending.
///
/// `tol` bounds the off-diagonal Frobenius norm at convergence; the default
/// is 1e-12·‖A‖_F.
pub fn diagonalize(matrix: &DenseSym, tol: Option<f64>) -> Result<Vec<f64>, EdError> {
    diagonalize_with_budget(matrix, tol, DEFAULT_SWEEPS)
}

pub fn diagonalize_with_budget(
    matrix: &DenseSym,
    tol: Option<f64>,
    sweeps: usize,
) -> Result<Vec<f64>, EdError> {
    let n = matrix.n;
    let mut a = matrix.clone();
    let tol = tol.unwrap_or(1e-12 * a.frobenius());
    let mut off = a.off_norm();
    let mut sweep = 0;
    while off > tol {
        if sweep == sweeps {
            return Err(EdError::NoConvergence { sweeps, off });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    *a.at(k, p) = c * akp - s * akq;
                    *a.at(k, q) = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    *a.at(p, k) = c * apk - s * aqk;
                    *a.at(q, k) = s * apk + c * aqk;
                }
                *a.at(p, q) = 0.0;
                *a.at(q, p) = 0.0;
            }
        }
        off = a.off_norm();
        sweep += 1;
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSpectrum {
    pub params: ChainParams,
    pub even_levels: Vec<f64>,
    pub odd_levels: Vec<f64>,
    pub all_levels: Vec<f64>,
}

impl SpinSpectrum {
    fn assemble(params: ChainParams, mut even: Vec<f64>, mut odd: Vec<f64>) -> Self {
        even.sort_by(f64::total_cmp);
        odd.sort_by(f64::total_cmp);
        let mut all: Vec<f64> = even.iter().chain(&odd).copied().collect();
        all.sort_by(f64::total_cmp);
        Self {
            params,
            even_levels: even,
            odd_levels: odd,
            all_levels: all,
        }
    }

    pub fn block(&self, p: Parity) -> &[f64] {
        match p {
            Parity::Even => &self.even_levels,
            Parity::Odd => &self.odd_levels,
        }
    }
}

/// The two parity blocks as dense matrices (basis ordered by index).
pub fn parity_blocks(params: &ChainParams) -> Result<[DenseSym; 2], EdError> {
    check_length(params.l)?;
    let dim = 1usize << params.l;
    let mut blocks = [DenseSym::zeros(dim / 2), DenseSym::zeros(dim / 2)];
    // Position of each state inside its block.
    let mut pos = vec![0usize; dim];
    let mut count = [0usize; 2];
    for (s, p) in pos.iter_mut().enumerate() {
        let b = (s.count_ones() % 2) as usize;
        *p = count[b];
        count[b] += 1;
    }
    for s in 0..dim {
        let b = (s.count_ones() % 2) as usize;
        let (d, off) = apply_h(params, params.l, s);
        let m = &mut blocks[b];
        *m.at(pos[s], pos[s]) += d;
        for (t, a) in off {
            debug_assert_eq!((t.count_ones() % 2) as usize, b, "H must conserve parity");
            *m.at(pos[t], pos[s]) += a;
        }
    }
    Ok(blocks)
}

/// Both parity blocks diagonalized densely. Reference path for small L.
pub fn parity_block_spectrum_dense(params: &ChainParams) -> Result<SpinSpectrum, EdError> {
    let [even, odd] = parity_blocks(params)?;
    let (e, o) = rayon::join(|| diagonalize(&even, None), || diagonalize(&odd, None));
    Ok(SpinSpectrum::assemble(*params, e?, o?))
}

struct Orbits {
    rep: Vec<usize>,
    shift: Vec<usize>,
    period: Vec<usize>,
}

fn orbits(l: usize) -> Orbits {
    let dim = 1usize << l;
    let mask = dim - 1;
    let rot = |x: usize| ((x << 1) | (x >> (l - 1))) & mask;
    let mut rep = vec![usize::MAX; dim];
    let mut shift = vec![0; dim];
    let mut period = vec![0; dim];
    for s in 0..dim {
        if rep[s] != usize::MAX {
            continue;
        }
        // Walk the orbit of s; the representative is its smallest member.
        let mut orbit = vec![s];
        let mut x = rot(s);
        while x != s {
            orbit.push(x);
            x = rot(x);
        }
        let (ri, &r) = orbit.iter().enumerate().min_by_key(|(_, &v)| v).unwrap();
        let n = orbit.len();
        for (i, &x) in orbit.iter().enumerate() {
            rep[x] = r;
            // x = T^(i − ri) r with T rotating sites i → i+1.
            shift[x] = (i + n - ri) % n;
        }
        period[r] = n;
    }
    Orbits { rep, shift, period }
}

/// Eigenvalues of one (parity, momentum 2πm/L) block.
fn momentum_block_levels(
    params: &ChainParams,
    orb: &Orbits,
    parity: u32,
    m: usize,
) -> Result<Vec<f64>, EdError> {
    let l = params.l;
    let reps: Vec<usize> = (0..1usize << l)
        .filter(|&s| orb.rep[s] == s && s.count_ones() % 2 == parity && (m * orb.period[s]) % l == 0)
        .collect();
    let n = reps.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut index = std::collections::HashMap::with_capacity(n);
    for (i, &r) in reps.iter().enumerate() {
        index.insert(r, i);
    }
    let q = 2.0 * PI * m as f64 / l as f64;
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    for (c, &r) in reps.iter().enumerate() {
        let (d, off) = apply_h(params, l, r);
        re[c * n + c] += d;
        for (t, a) in off {
            let Some(&row) = index.get(&orb.rep[t]) else {
                continue;
            };
            let norm = (orb.period[r] as f64 / orb.period[orb.rep[t]] as f64).sqrt();
            let ph = q * orb.shift[t] as f64;
            re[row * n + c] += a * norm * ph.cos();
            im[row * n + c] += a * norm * ph.sin();
        }
    }
    let complex = im.iter().any(|x| x.abs() > 1e-14);
    if !complex {
        return diagonalize(&DenseSym { n, data: re }, None);
    }
    // Hermitian A + iB has the real symmetric embedding [[A, −B], [B, A]]
    // whose spectrum is that of A + iB with every level doubled.
    let big = 2 * n;
    let mut e = DenseSym::zeros(big);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (re[i * n + j], im[i * n + j]);
            *e.at(i, j) = a;
            *e.at(i + n, j + n) = a;
            *e.at(i, j + n) = -b;
            *e.at(i + n, j) = b;
        }
    }
    let ev = diagonalize(&e, None)?;
    Ok(ev.into_iter().step_by(2).collect())
}

/// Full spectrum split by ∏σᶻ parity.
///
/// Each parity block is further split by lattice momentum; blocks at
/// momenta q and −q are complex conjugates, so only one of each pair is
/// diagonalized. This keeps L = 12 and 13 at seconds instead of hours.
pub fn parity_resolved_spectrum(params: &ChainParams) -> Result<SpinSpectrum, EdError> {
    check_length(params.l)?;
    let l = params.l;
    let orb = orbits(l);
    let tasks: Vec<(u32, usize)> = [0u32, 1]
        .iter()
        .flat_map(|&p| (0..=l / 2).map(move |m| (p, m)))
        .collect();
    type Block = (u32, usize, Vec<f64>);
    let results: Vec<Result<Block, EdError>> = tasks
        .par_iter()
        .map(|&(p, m)| momentum_block_levels(params, &orb, p, m).map(|v| (p, m, v)))
        .collect();
    let mut even = Vec::with_capacity(1 << (l - 1));
    let mut odd = Vec::with_capacity(1 << (l - 1));
    for r in results {
        let (p, m, v) = r?;
        let copies = if m == 0 || 2 * m == l { 1 } else { 2 };
        let dst = if p == 0 { &mut even } else { &mut odd };
        for _ in 0..copies {
            dst.extend_from_slice(&v);
        }
    }
    Ok(SpinSpectrum::assemble(*params, even, odd))
}

/// Largest pairwise gap between two sorted multisets of equal size.
pub fn multiset_max_residual(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Some(
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
    )
}

/// Which excitation parity of each sector is kept in the spin spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParityRule {
    pub ns: Parity,
    pub r: Parity,
}

impl ParityRule {
    /// Textbook candidate: NS even, R odd.
    pub const STANDARD: ParityRule = ParityRule {
        ns: Parity::Even,
        r: Parity::Odd,
    };
    /// Its R-flipped variant.
    pub const FLIPPED: ParityRule = ParityRule {
        ns: Parity::Even,
        r: Parity::Even,
    };

    pub fn candidates() -> [ParityRule; 4] {
        [
            Self::STANDARD,
            Self::FLIPPED,
            ParityRule {
                ns: Parity::Odd,
                r: Parity::Odd,
            },
            ParityRule {
                ns: Parity::Odd,
                r: Parity::Even,
            },
        ]
    }

    /// Unpaired-mode rule from [`physical_parity`].
    pub fn predicted(params: &ChainParams) -> Self {
        Self {
            ns: physical_parity(params, Sector::NS),
            r: physical_parity(params, Sector::R),
        }
    }

    pub fn for_sector(&self, s: Sector) -> Parity {
        match s {
            Sector::NS => self.ns,
            Sector::R => self.r,
        }
    }
}

impl fmt::Display for ParityRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NS-{:?} + R-{:?}", self.ns, self.r)
    }
}

/// All 2^L spin levels predicted from the two sectors under `rule`.
pub fn fermionic_spin_levels(params: &ChainParams, rule: ParityRule) -> Result<Vec<f64>, EdError> {
    check_length(params.l)?;
    let cap = 1usize << (params.l - 1);
    let mut out = Vec::with_capacity(2 * cap);
    for s in Sector::BOTH {
        let sp = enumerate_many_body(params, s, rule.for_sector(s).into(), cap)?;
        out.extend(sp.levels.iter().map(|l| l.energy));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: ParityRule,
    pub max_residual: f64,
    pub holds: bool,
}

/// Test every candidate rule against the exact spectrum.
pub fn check_parity_rules(
    params: &ChainParams,
    exact: &SpinSpectrum,
    tol: f64,
) -> Result<Vec<RuleCheck>, EdError> {
    ParityRule::candidates()
        .into_iter()
        .map(|rule| {
            let lv = fermionic_spin_levels(params, rule)?;
            let r = multiset_max_residual(&lv, &exact.all_levels).unwrap_or(f64::INFINITY);
            Ok(RuleCheck {
                rule,
                max_residual: r,
                holds: r < tol,
            })
        })
        .collect()
}

/// The first candidate that reproduces the exact spectrum, if any.
pub fn select_parity_rule(params: &ChainParams, tol: f64) -> Result<Option<ParityRule>, EdError> {
    let exact = parity_resolved_spectrum(params)?;
    Ok(check_parity_rules(params, &exact, tol)?
        .into_iter()
        .find(|c| c.holds)
        .map(|c| c.rule))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
}

impl CaseTag {
    pub fn number(self) -> u8 {
        match self {
            CaseTag::Case1 => 1,
            CaseTag::Case2 => 2,
            CaseTag::Case3 => 3,
            CaseTag::Case4 => 4,
            CaseTag::Case5 => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDiagnostics {
    pub e_ns: f64,
    pub e_r: f64,
    pub spin_e0: f64,
    pub spin_e1: f64,
    /// |e0 − E_NS|.
    pub ns_residual: f64,
    /// Distance from E_R to the nearest spin level.
    pub r_residual: f64,
    pub r_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub tag: CaseTag,
    pub diagnostics: CaseDiagnostics,
}

fn decide_case(d: CaseDiagnostics, tol: f64) -> Result<CaseLabel, EdError> {
    let near = |a: f64, b: f64| (a - b).abs() < tol;
    let ns_ground = near(d.spin_e0, d.e_ns);
    let tag = if ns_ground && near(d.e_ns, d.e_r) {
        if d.spin_e1 - d.spin_e0 < tol {
            Some(CaseTag::Case5)
        } else {
            Some(CaseTag::Case4)
        }
    } else if ns_ground && near(d.spin_e1, d.e_r) {
        Some(CaseTag::Case1)
    } else if near(d.spin_e0, d.e_r) && near(d.spin_e1, d.e_ns) {
        Some(CaseTag::Case2)
    } else if ns_ground && !d.r_present {
        Some(CaseTag::Case3)
    } else {
        None
    };
    match tag {
        Some(tag) => Ok(CaseLabel {
            tag,
            diagnostics: d,
        }),
        None => Err(EdError::Unclassifiable(Box::new(d))),
    }
}

fn nearest_distance(sorted: &[f64], x: f64) -> f64 {
    let i = sorted.partition_point(|&v| v < x);
    let mut best = f64::INFINITY;
    if i < sorted.len() {
        best = best.min((sorted[i] - x).abs());
    }
    if i > 0 {
        best = best.min((sorted[i - 1] - x).abs());
    }
    best
}

/// Ground-state case from the exact spin spectrum.
///
/// Case 3 is read as "the R ground level is absent from the spin spectrum";
/// R levels of the physical parity are always present, so the literal
/// all-levels reading could never hold.
pub fn classify_case(params: &ChainParams, tol: f64) -> Result<CaseLabel, EdError> {
    let exact = parity_resolved_spectrum(params)?;
    classify_case_with(params, &exact, tol)
}

pub fn classify_case_with(
    params: &ChainParams,
    exact: &SpinSpectrum,
    tol: f64,
) -> Result<CaseLabel, EdError> {
    let e_ns = sector_ground_energy(params, Sector::NS);
    let e_r = sector_ground_energy(params, Sector::R);
    let lv = &exact.all_levels;
    let r_residual = nearest_distance(lv, e_r);
    decide_case(
        CaseDiagnostics {
            e_ns,
            e_r,
            spin_e0: lv[0],
            spin_e1: lv[1],
            ns_residual: (lv[0] - e_ns).abs(),
            r_residual,
            r_present: r_residual < tol,
        },
        tol,
    )
}

/// Same decision table, with the spin spectrum taken from the sectors under
/// the unpaired-mode parity rule. Works for any L; agreement with
/// [`classify_case`] is checked in the tests for L ≤ 10.
pub fn classify_case_fermionic(params: &ChainParams, tol: f64) -> Result<CaseLabel, EdError> {
    let rule = ParityRule::predicted(params);
    let e_ns = sector_ground_energy(params, Sector::NS);
    let e_r = sector_ground_energy(params, Sector::R);
    let mut low = Vec::with_capacity(4);
    for s in Sector::BOTH {
        let sp = enumerate_many_body(params, s, rule.for_sector(s).into(), 2)?;
        low.extend(sp.levels.iter().map(|l| l.energy));
    }
    low.sort_by(f64::total_cmp);
    let mut near_r = Vec::new();
    for s in Sector::BOTH {
        let f: ParityFilter = rule.for_sector(s).into();
        near_r.extend(enumerate_below(params, s, f, e_r + tol)?.into_iter().map(|l| l.energy));
    }
    let r_residual = near_r
        .iter()
        .map(|&e| (e - e_r).abs())
        .fold(f64::INFINITY, f64::min);
    decide_case(
        CaseDiagnostics {
            e_ns,
            e_r,
            spin_e0: low[0],
            spin_e1: low[1],
            ns_residual: (low[0] - e_ns).abs(),
            r_residual,
            r_present: r_residual < tol,
        },
        tol,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub sector: Sector,
    pub fermion_parity: Parity,
    pub spin_parity: Parity,
    pub n_fermionic: usize,
    pub n_matched: usize,
    pub matched_fraction: f64,
    pub max_residual: f64,
    pub mean_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub params: ChainParams,
    pub tol: f64,
    pub entries: Vec<MatchEntry>,
}

fn greedy_match(levels: &[f64], targets: &[f64], tol: f64) -> (usize, f64, f64) {
    let mut used = vec![false; targets.len()];
    let (mut n, mut max, mut sum) = (0usize, 0.0f64, 0.0f64);
    for &x in levels {
        let i = targets.partition_point(|&v| v < x);
        let mut best: Option<(usize, f64)> = None;
        // Walk outwards from the insertion point to the nearest unused level.
        let mut lo = i as isize - 1;
        let mut hi = i;
        while lo >= 0 || hi < targets.len() {
            let dl = if lo >= 0 { x - targets[lo as usize] } else { f64::INFINITY };
            let dh = if hi < targets.len() { targets[hi] - x } else { f64::INFINITY };
            if dl.min(dh) > tol {
                break;
            }
            if dl <= dh {
                if !used[lo as usize] {
                    best = Some((lo as usize, dl));
                    break;
                }
                lo -= 1;
            } else {
                if !used[hi] {
                    best = Some((hi, dh));
                    break;
                }
                hi += 1;
            }
        }
        if let Some((j, d)) = best {
            used[j] = true;
            n += 1;
            max = max.max(d);
            sum += d;
        }
    }
    (n, max, if n > 0 { sum / n as f64 } else { 0.0 })
}

/// Greedy nearest-level matching of one sector's levels against each spin
/// parity block, split by fermionic excitation parity.
pub fn match_spectra(fermionic: &ManyBodySpectrum, exact: &SpinSpectrum, tol: f64) -> MatchReport {
    let mut entries = Vec::new();
    for fp in [Parity::Even, Parity::Odd] {
        let mut lv: Vec<f64> = fermionic
            .levels
            .iter()
            .filter(|l| l.parity == fp.sign())
            .map(|l| l.energy)
            .collect();
        lv.sort_by(f64::total_cmp);
        for sp in [Parity::Even, Parity::Odd] {
            let (n, max, mean) = greedy_match(&lv, exact.block(sp), tol);
            entries.push(MatchEntry {
                sector: fermionic.sector,
                fermion_parity: fp,
                spin_parity: sp,
                n_fermionic: lv.len(),
                n_matched: n,
                matched_fraction: if lv.is_empty() { 0.0 } else { n as f64 / lv.len() as f64 },
                max_residual: max,
                mean_residual: mean,
            });
        }
    }
    MatchReport {
        params: exact.params,
        tol,
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub params: ChainParams,
    pub tol: f64,
    pub delta_e: f64,
    pub predicted_rule: ParityRule,
    pub rule_checks: Vec<RuleCheck>,
    pub matches: Vec<MatchReport>,
    pub case_exact: Option<CaseTag>,
    pub case_fermionic: Option<CaseTag>,
}

/// Full fermionic-vs-exact comparison at one point.
pub fn oracle_check(params: &ChainParams, tol: f64) -> Result<OracleReport, EdError> {
    let exact = parity_resolved_spectrum(params)?;
    let full = 1usize << params.l;
    let mut matches = Vec::new();
    for s in Sector::BOTH {
        let sp = enumerate_many_body(params, s, ParityFilter::Any, full)?;
        matches.push(match_spectra(&sp, &exact, tol));
    }
    Ok(OracleReport {
        params: *params,
        tol,
        delta_e: delta_gs(params),
        predicted_rule: ParityRule::predicted(params),
        rule_checks: check_parity_rules(params, &exact, tol)?,
        matches,
        case_exact: classify_case_with(params, &exact, CASE_TOL).ok().map(|c| c.tag),
        case_fermionic: classify_case_fermionic(params, CASE_TOL).ok().map(|c| c.tag),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(l: usize, g: f64, h: f64) -> ChainParams {
        ChainParams::new(l, g, h).unwrap()
    }

    #[test]
    fn jacobi_small() {
        let id = DenseSym::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(diagonalize(&id, None).unwrap(), vec![1.0, 1.0]);
        let d = DenseSym::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ]);
        assert_eq!(diagonalize(&d, None).unwrap(), vec![1.0, 2.0, 3.0]);
        let x = DenseSym::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let ev = diagonalize(&x, None).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-15 && (ev[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobi_budget() {
        let m = build_spin_hamiltonian(&p(4, 0.3, 0.5)).unwrap();
        assert!(matches!(
            diagonalize_with_budget(&m, Some(0.0), 1),
            Err(EdError::NoConvergence { .. })
        ));
    }

    #[test]
    fn hamiltonian_structure() {
        let m = build_spin_hamiltonian(&p(6, 0.4, 0.7)).unwrap();
        assert_eq!(m.max_asymmetry(), 0.0);
        let par = parity_operator(6).unwrap();
        for i in 0..m.n {
            for j in 0..m.n {
                if par[i] != par[j] {
                    assert_eq!(m.get(i, j), 0.0);
                }
            }
        }
        assert!(build_spin_hamiltonian(&p(14, 0.1, 0.1)).is_err());
    }

    #[test]
    fn field_only_chain() {
        let q = ChainParams::with_coupling(4, 0.0, 0.3, 0.8).unwrap();
        let ev = diagonalize(&build_spin_hamiltonian(&q).unwrap(), None).unwrap();
        let mut want = Vec::new();
        for s in 0..16u32 {
            want.push(-0.4 * (4.0 - 2.0 * s.count_ones() as f64));
        }
        assert!(multiset_max_residual(&ev, &want).unwrap() < 1e-14);
    }

    #[test]
    fn parity_vector() {
        let v = parity_operator(3).unwrap();
        assert_eq!(v[0], 1);
        assert_eq!(v[1], -1);
        assert_eq!(v[7], -1);
    }

    #[test]
    fn blocks_agree_with_full_matrix() {
        for (g, h) in [(0.3, 0.5), (1.2, 1.3), (0.0, 0.4)] {
            let q = p(7, g, h);
            let full = diagonalize(&build_spin_hamiltonian(&q).unwrap(), None).unwrap();
            let dense = parity_block_spectrum_dense(&q).unwrap();
            let mom = parity_resolved_spectrum(&q).unwrap();
            assert_eq!(dense.even_levels.len(), 64);
            assert!(multiset_max_residual(&full, &dense.all_levels).unwrap() < 1e-9);
            assert!(multiset_max_residual(&dense.even_levels, &mom.even_levels).unwrap() < 1e-9);
            assert!(multiset_max_residual(&dense.odd_levels, &mom.odd_levels).unwrap() < 1e-9);
        }
    }

    #[test]
    fn ising_point_is_doubly_degenerate() {
        let s = parity_resolved_spectrum(&p(8, 1.0, 0.0)).unwrap();
        assert!((s.all_levels[1] - s.all_levels[0]).abs() < 1e-10);
    }

    #[test]
    fn two_site_chain_matches_fermions() {
        let q = p(2, 1.0, 0.0);
        let exact = parity_resolved_spectrum(&q).unwrap();
        let lv = fermionic_spin_levels(&q, ParityRule::predicted(&q)).unwrap();
        assert!(multiset_max_residual(&lv, &exact.all_levels).unwrap() < 1e-12);
    }

    #[test]
    fn predicted_rule_holds() {
        for l in [3, 4, 5, 6, 7, 8] {
            for (g, h) in [
                (0.3, 0.5),
                (0.7, 1.3),
                (1.2, 0.2),
                (0.5, -0.4),
                (0.4, -1.6),
                (-0.6, 0.9),
            ] {
                let q = p(l, g, h);
                let exact = parity_resolved_spectrum(&q).unwrap();
                let checks = check_parity_rules(&q, &exact, 1e-9).unwrap();
                let pred = ParityRule::predicted(&q);
                let c = checks.iter().find(|c| c.rule == pred).unwrap();
                assert!(c.holds, "L={l} g={g} h={h}: {pred} residual {}", c.max_residual);
            }
        }
    }

    #[test]
    fn case_examples() {
        let c = classify_case(&p(8, 0.6, 0.8), CASE_TOL).unwrap();
        assert_eq!(c.tag, CaseTag::Case5);
        // Above the critical field the R ground level has the wrong parity
        // to appear in the spin spectrum.
        let c = classify_case(&p(8, 0.5, 1.5), CASE_TOL).unwrap();
        assert_eq!(c.tag, CaseTag::Case3);
        assert!(!c.diagnostics.r_present);
    }

    #[test]
    fn fermionic_classifier_agrees() {
        for l in [5, 6, 7, 8] {
            for i in 0..6 {
                for j in 0..6 {
                    let g = 0.05 + 0.23 * i as f64;
                    let h = 0.07 + 0.27 * j as f64;
                    let q = p(l, g, h);
                    let a = classify_case(&q, CASE_TOL).map(|c| c.tag).ok();
                    let b = classify_case_fermionic(&q, CASE_TOL).map(|c| c.tag).ok();
                    assert_eq!(a, b, "L={l} g={g} h={h}");
                }
            }
        }
    }

    #[test]
    fn self_match_is_perfect() {
        let q = p(6, 0.3, 0.5);
        let exact = parity_resolved_spectrum(&q).unwrap();
        let sp = enumerate_many_body(&q, Sector::NS, ParityFilter::Any, 64).unwrap();
        let rep = match_spectra(&sp, &exact, 1e-8);
        let e = rep
            .entries
            .iter()
            .find(|e| e.fermion_parity == Parity::Even && e.spin_parity == Parity::Even)
            .unwrap();
        assert_eq!(e.matched_fraction, 1.0);
        assert!(e.max_residual < 1e-10);
        let own = SpinSpectrum::assemble(q, exact.even_levels.clone(), vec![]);
        let (n, max, _) = greedy_match(&own.even_levels, &own.even_levels, 1e-12);
        assert_eq!(n, own.even_levels.len());
        assert_eq!(max, 0.0);
    }

    #[test]
    fn free_spins_match_trivially() {
        let q = ChainParams::with_coupling(5, 0.0, 0.4, 0.9).unwrap();
        let exact = parity_resolved_spectrum(&q).unwrap();
        let lv = fermionic_spin_levels(&q, ParityRule::predicted(&q)).unwrap();
        assert!(multiset_max_residual(&lv, &exact.all_levels).unwrap() < 1e-12);
    }
}
