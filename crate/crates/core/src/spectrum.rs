//! Single-particle and many-body spectra of the NS and R fermionic sectors.

use crate::chain::{ChainParams, Sector};
use crate::precision::{dd, sincos_pi_frac, to_f64, Dd};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use thiserror::Error;

/// Below this a single-particle energy counts as a gapless mode.
pub const GAPLESS_EPS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("mode index {k} outside 1..={l}")]
    IndexOutOfRange { k: usize, l: usize },
    #[error("mode {k} is gapless (epsilon = 0); Bogoliubov angle undefined")]
    GaplessMode { k: usize },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
}

/// Sines and cosines of the L sector momenta, exact to double-double.
///
/// Mode k (1-based) has φ_k = π·p/L with p = 2k for R and p = 2k−1 for NS.
#[derive(Debug, Clone)]
pub struct ModeTable {
    pub l: usize,
    pub sector: Sector,
    pub(crate) sin: Vec<Dd>,
    pub(crate) cos: Vec<Dd>,
}

impl ModeTable {
    pub fn new(l: usize, sector: Sector) -> Self {
        let (sin, cos) = (1..=l)
            .map(|k| sincos_pi_frac(phase_numerator(k, sector), l as i64))
            .unzip();
        Self { l, sector, sin, cos }
    }

    pub fn phase(&self, k: usize) -> f64 {
        to_f64(twofloat::consts::PI * phase_numerator(k, self.sector) as f64 / self.l as f64)
    }

    /// True when sin φ_k vanishes exactly (φ ∈ {π, 2π}).
    pub fn is_unpaired(&self, k: usize) -> bool {
        self.sin[k - 1].hi() == 0.0
    }
}

fn phase_numerator(k: usize, sector: Sector) -> i64 {
    match sector {
        Sector::R => 2 * k as i64,
        Sector::NS => 2 * k as i64 - 1,
    }
}

/// Per-mode pieces a = h − J cos φ and b = J sin φ in double-double.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ModeTerms {
    pub a: Dd,
    pub b: Dd,
}

pub(crate) fn mode_terms(params: &ChainParams, table: &ModeTable, k: usize) -> ModeTerms {
    let i = k - 1;
    ModeTerms {
        a: dd(params.h) - table.cos[i] * params.j,
        b: table.sin[i] * params.j,
    }
}

pub(crate) fn epsilon_dd(params: &ChainParams, t: ModeTerms) -> Dd {
    let gb = t.b * params.gamma;
    (t.a * t.a + gb * gb).sqrt()
}

fn check_k(params: &ChainParams, k: usize) -> Result<(), SpectrumError> {
    if k == 0 || k > params.l {
        Err(SpectrumError::IndexOutOfRange { k, l: params.l })
    } else {
        Ok(())
    }
}

pub fn mode_phase(k: usize, params: &ChainParams, sector: Sector) -> Result<f64, SpectrumError> {
    check_k(params, k)?;
    Ok(to_f64(
        twofloat::consts::PI * phase_numerator(k, sector) as f64 / params.l as f64,
    ))
}

fn single_mode(params: &ChainParams, sector: Sector, k: usize) -> ModeTerms {
    let (s, c) = sincos_pi_frac(phase_numerator(k, sector), params.l as i64);
    ModeTerms {
        a: dd(params.h) - c * params.j,
        b: s * params.j,
    }
}

pub fn single_particle_energy(
    params: &ChainParams,
    sector: Sector,
    k: usize,
) -> Result<f64, SpectrumError> {
    check_k(params, k)?;
    Ok(to_f64(epsilon_dd(params, single_mode(params, sector, k))))
}

/// θ_k = atan2(γ J sin φ_k, h − J cos φ_k), range (−π, π].
pub fn bogoliubov_angle(
    params: &ChainParams,
    sector: Sector,
    k: usize,
) -> Result<f64, SpectrumError> {
    check_k(params, k)?;
    let t = single_mode(params, sector, k);
    angle_of(params, t).ok_or(SpectrumError::GaplessMode { k })
}

fn angle_of(params: &ChainParams, t: ModeTerms) -> Option<f64> {
    let y = to_f64(t.b * params.gamma);
    let x = to_f64(t.a);
    if y.abs() < GAPLESS_EPS && x.abs() < GAPLESS_EPS {
        return None;
    }
    // atan2(+0, negative) is π; normalise −0 so the range stays (−π, π].
    let y = if y == 0.0 { 0.0 } else { y };
    Some(y.atan2(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleParticleSpectrum {
    pub params: ChainParams,
    pub sector: Sector,
    pub phases: Vec<f64>,
    pub energies: Vec<f64>,
    /// NaN at gapless modes.
    pub angles: Vec<f64>,
    /// Some mode has ε below [`GAPLESS_EPS`].
    pub singular: bool,
}

impl SingleParticleSpectrum {
    pub fn new(params: &ChainParams, sector: Sector) -> Self {
        let table = ModeTable::new(params.l, sector);
        let mut phases = Vec::with_capacity(params.l);
        let mut energies = Vec::with_capacity(params.l);
        let mut angles = Vec::with_capacity(params.l);
        for k in 1..=params.l {
            let t = mode_terms(params, &table, k);
            phases.push(table.phase(k));
            energies.push(to_f64(epsilon_dd(params, t)));
            angles.push(angle_of(params, t).unwrap_or(f64::NAN));
        }
        let singular = energies.iter().any(|&e| e < GAPLESS_EPS);
        Self {
            params: *params,
            sector,
            phases,
            energies,
            angles,
            singular,
        }
    }

    pub fn min_energy(&self) -> f64 {
        self.energies.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn ground_energy_dd(params: &ChainParams, table: &ModeTable) -> Dd {
    let mut s = dd(0.0);
    for k in 1..=params.l {
        s += epsilon_dd(params, mode_terms(params, table, k));
    }
    s * -0.5
}

/// −½ Σ ε_k, summed in ascending k with double-double accumulation.
pub fn sector_ground_energy(params: &ChainParams, sector: Sector) -> f64 {
    to_f64(ground_energy_dd(params, &ModeTable::new(params.l, sector)))
}

/// Ground energy plus the smallest single-particle energy, parity ignored.
pub fn sector_first_excited(params: &ChainParams, sector: Sector) -> f64 {
    let sp = SingleParticleSpectrum::new(params, sector);
    sector_ground_energy(params, sector) + sp.min_energy()
}

pub(crate) fn delta_gs_dd(params: &ChainParams) -> Dd {
    let ns = ModeTable::new(params.l, Sector::NS);
    let r = ModeTable::new(params.l, Sector::R);
    let mut s = dd(0.0);
    for k in 1..=params.l {
        s += epsilon_dd(params, mode_terms(params, &r, k));
        s -= epsilon_dd(params, mode_terms(params, &ns, k));
    }
    s * 0.5
}

/// δE = E^GS_NS − E^GS_R.
pub fn delta_gs(params: &ChainParams) -> f64 {
    to_f64(delta_gs_dd(params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of_count(n: u32) -> Self {
        if n % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Parity::Even => 1,
            Parity::Odd => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParityFilter {
    Any,
    Even,
    Odd,
}

impl ParityFilter {
    fn accepts(self, p: Parity) -> bool {
        match self {
            ParityFilter::Any => true,
            ParityFilter::Even => p == Parity::Even,
            ParityFilter::Odd => p == Parity::Odd,
        }
    }
}

impl From<Parity> for ParityFilter {
    fn from(p: Parity) -> Self {
        match p {
            Parity::Even => ParityFilter::Even,
            Parity::Odd => ParityFilter::Odd,
        }
    }
}

/// Excitation parity whose levels survive in the spin spectrum.
///
/// Even for NS and odd for R, flipped once for every unpaired mode
/// (sin φ = 0) whose Bogoliubov vacuum is the occupied state, i.e.
/// h − J cos φ < 0.
pub fn physical_parity(params: &ChainParams, sector: Sector) -> Parity {
    let table = ModeTable::new(params.l, sector);
    let mut p = match sector {
        Sector::NS => Parity::Even,
        Sector::R => Parity::Odd,
    };
    for k in 1..=params.l {
        if table.is_unpaired(k) && to_f64(mode_terms(params, &table, k).a) < 0.0 {
            p = p.flip();
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyBodyLevel {
    pub energy: f64,
    /// Bit k−1 set when mode k is excited.
    pub occupation: u128,
    pub parity: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyBodySpectrum {
    pub sector: Sector,
    pub levels: Vec<ManyBodyLevel>,
    pub truncated: bool,
}

impl ManyBodySpectrum {
    pub fn energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    sum: f64,
    pos: usize,
    mask: u128,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        self.sum
            .total_cmp(&o.sum)
            .then(self.mask.cmp(&o.mask))
            .then(self.pos.cmp(&o.pos))
    }
}

/// Subsets of modes in nondecreasing excitation energy.
///
/// Classic best-first expansion over the sorted ε: each popped subset with
/// largest sorted index i spawns "add i+1" and "replace i by i+1". Every
/// subset is produced exactly once and never before a cheaper one.
struct SubsetWalk {
    order: Vec<usize>,
    eps: Vec<f64>,
    heap: BinaryHeap<Reverse<Node>>,
    emitted_empty: bool,
}

impl SubsetWalk {
    fn new(energies: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..energies.len()).collect();
        order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]).then(a.cmp(&b)));
        let eps: Vec<f64> = order.iter().map(|&i| energies[i]).collect();
        let mut heap = BinaryHeap::new();
        if !eps.is_empty() {
            heap.push(Reverse(Node {
                sum: eps[0],
                pos: 0,
                mask: 1u128 << order[0],
            }));
        }
        Self {
            order,
            eps,
            heap,
            emitted_empty: false,
        }
    }
}

impl Iterator for SubsetWalk {
    type Item = (f64, u128);

    fn next(&mut self) -> Option<(f64, u128)> {
        if !self.emitted_empty {
            self.emitted_empty = true;
            return Some((0.0, 0));
        }
        let Reverse(n) = self.heap.pop()?;
        let nxt = n.pos + 1;
        if nxt < self.eps.len() {
            let bit = 1u128 << self.order[nxt];
            self.heap.push(Reverse(Node {
                sum: n.sum + self.eps[nxt],
                pos: nxt,
                mask: n.mask | bit,
            }));
            let cur = 1u128 << self.order[n.pos];
            self.heap.push(Reverse(Node {
                sum: n.sum - self.eps[n.pos] + self.eps[nxt],
                pos: nxt,
                mask: (n.mask & !cur) | bit,
            }));
        }
        Some((n.sum, n.mask))
    }
}

fn level_from_mask(e_gs: f64, energies: &[f64], mask: u128) -> ManyBodyLevel {
    let mut e = e_gs;
    for (i, &eps) in energies.iter().enumerate() {
        if mask >> i & 1 == 1 {
            e += eps;
        }
    }
    ManyBodyLevel {
        energy: e,
        occupation: mask,
        parity: Parity::of_count(mask.count_ones()).sign(),
    }
}

fn sort_levels(levels: &mut [ManyBodyLevel]) {
    levels.sort_by(|a, b| {
        a.energy
            .total_cmp(&b.energy)
            .then(a.occupation.cmp(&b.occupation))
    });
}

const MAX_FULL_LENGTH: usize = 24;

/// Many-body levels E^GS + Σ n_k ε_k, lowest `cap` levels passing the filter.
pub fn enumerate_many_body(
    params: &ChainParams,
    sector: Sector,
    filter: ParityFilter,
    cap: usize,
) -> Result<ManyBodySpectrum, SpectrumError> {
    let l = params.l;
    if cap == 0 {
        return Err(SpectrumError::Capacity("cap must be at least 1".into()));
    }
    if l > 127 {
        return Err(SpectrumError::Capacity(format!(
            "occupation masks hold at most 127 modes, got L = {l}"
        )));
    }
    let total: u128 = match filter {
        ParityFilter::Any => 1u128 << l,
        _ => 1u128 << (l - 1),
    };
    if l > MAX_FULL_LENGTH && cap as u128 >= 1u128 << l {
        return Err(SpectrumError::Capacity(format!(
            "full enumeration of 2^{l} levels refused (L > {MAX_FULL_LENGTH})"
        )));
    }
    let sp = SingleParticleSpectrum::new(params, sector);
    let e_gs = sector_ground_energy(params, sector);
    let mut levels = Vec::with_capacity(cap.min(total as usize));
    for (_, mask) in SubsetWalk::new(&sp.energies) {
        if filter.accepts(Parity::of_count(mask.count_ones())) {
            levels.push(level_from_mask(e_gs, &sp.energies, mask));
            if levels.len() == cap {
                break;
            }
        }
    }
    sort_levels(&mut levels);
    Ok(ManyBodySpectrum {
        sector,
        levels,
        truncated: total > cap as u128,
    })
}

/// All filtered levels with energy ≤ `e_max`.
pub fn enumerate_below(
    params: &ChainParams,
    sector: Sector,
    filter: ParityFilter,
    e_max: f64,
) -> Result<Vec<ManyBodyLevel>, SpectrumError> {
    if params.l > 127 {
        return Err(SpectrumError::Capacity(format!(
            "occupation masks hold at most 127 modes, got L = {}",
            params.l
        )));
    }
    let sp = SingleParticleSpectrum::new(params, sector);
    let e_gs = sector_ground_energy(params, sector);
    // The walk's running sums can differ from the recomputed energy by a
    // few ulps, so overshoot slightly and filter afterwards.
    let slack = 1e-12 * (1.0 + e_gs.abs());
    let mut out = Vec::new();
    for (sum, mask) in SubsetWalk::new(&sp.energies) {
        if e_gs + sum > e_max + slack {
            break;
        }
        if filter.accepts(Parity::of_count(mask.count_ones())) {
            let lvl = level_from_mask(e_gs, &sp.energies, mask);
            if lvl.energy <= e_max {
                out.push(lvl);
            }
        }
    }
    sort_levels(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p(l: usize, g: f64, h: f64) -> ChainParams {
        ChainParams::new(l, g, h).unwrap()
    }

    #[test]
    fn phases() {
        let q = p(10, 0.3, 0.5);
        assert!((mode_phase(10, &q, Sector::R).unwrap() - 2.0 * PI).abs() < 1e-15);
        assert!((mode_phase(1, &q, Sector::NS).unwrap() - PI / 10.0).abs() < 1e-15);
        assert!((mode_phase(5, &q, Sector::R).unwrap() - PI).abs() < 1e-15);
        assert!(mode_phase(0, &q, Sector::R).is_err());
        assert!(mode_phase(11, &q, Sector::R).is_err());
    }

    #[test]
    fn energies() {
        for k in 1..=6 {
            let e = single_particle_energy(&p(6, 1.0, 0.0), Sector::R, k).unwrap();
            assert!((e - 1.0).abs() < 1e-15);
        }
        let e = single_particle_energy(&p(8, 0.0, 1.0), Sector::R, 4).unwrap();
        assert!((e - 2.0).abs() < 1e-15);
        let e = single_particle_energy(&p(4, 0.5, 0.5), Sector::R, 1).unwrap();
        assert!((e - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn angles() {
        // φ = 2π: γ sin φ = 0 and h − 1 > 0.
        let t = bogoliubov_angle(&p(4, 0.5, 1.5), Sector::R, 4).unwrap();
        assert_eq!(t, 0.0);
        let t = bogoliubov_angle(&p(4, 0.5, 0.5), Sector::R, 4).unwrap();
        assert_eq!(t, PI);
        let t = bogoliubov_angle(&p(4, 1.0, 0.0), Sector::R, 1).unwrap();
        assert!((t - PI / 2.0).abs() < 1e-15);
        assert_eq!(
            bogoliubov_angle(&p(4, 0.5, 1.0), Sector::R, 4),
            Err(SpectrumError::GaplessMode { k: 4 })
        );
    }

    #[test]
    fn ground_energies() {
        for s in Sector::BOTH {
            assert!((sector_ground_energy(&p(7, 1.0, 0.0), s) + 3.5).abs() < 1e-14);
        }
        assert!((sector_ground_energy(&p(4, 0.0, 0.0), Sector::R) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn ground_energy_density_matches_integral() {
        // (1/4π)∮ε dφ by composite Simpson on a fine grid (smooth periodic
        // integrand at this point, so this is an independent oracle).
        let (g, h) = (0.5, 0.5);
        let n = 20000;
        let f = |x: f64| ((h - x.cos()).powi(2) + (g * x.sin()).powi(2)).sqrt();
        let dx = 2.0 * PI / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x = i as f64 * dx;
            s += (f(x) + 4.0 * f(x + dx / 2.0) + f(x + dx)) * dx / 6.0;
        }
        let density = -s / (4.0 * PI);
        let e = sector_ground_energy(&p(1000, g, h), Sector::NS) / 1000.0;
        assert!((e - density).abs() < 1e-6);
    }

    #[test]
    fn first_excited() {
        let q = p(6, 1.0, 0.0);
        let e = sector_first_excited(&q, Sector::R);
        assert!((e - (sector_ground_energy(&q, Sector::R) + 1.0)).abs() < 1e-14);
        let q = p(8, 0.0, 1.0);
        let e = sector_first_excited(&q, Sector::R);
        assert!((e - sector_ground_energy(&q, Sector::R)).abs() < 1e-14);
        let q = p(8, 0.5, 0.5);
        let sp = SingleParticleSpectrum::new(&q, Sector::NS);
        let m = sp.energies.iter().copied().fold(f64::INFINITY, f64::min);
        let e = sector_first_excited(&q, Sector::NS);
        assert!((e - sector_ground_energy(&q, Sector::NS) - m).abs() < 1e-14);
    }

    #[test]
    fn two_site_levels() {
        let q = p(2, 1.0, 0.0);
        let any = enumerate_many_body(&q, Sector::R, ParityFilter::Any, 4).unwrap();
        assert_eq!(any.energies(), vec![-1.0, 0.0, 0.0, 1.0]);
        assert!(!any.truncated);
        let even = enumerate_many_body(&q, Sector::R, ParityFilter::Even, 4).unwrap();
        assert_eq!(even.energies(), vec![-1.0, 1.0]);
    }

    #[test]
    fn best_first_matches_brute_force() {
        let q = p(9, 0.37, 0.61);
        let sp = SingleParticleSpectrum::new(&q, Sector::NS);
        let e_gs = sector_ground_energy(&q, Sector::NS);
        let mut brute: Vec<f64> = (0u128..1 << 9)
            .map(|m| level_from_mask(e_gs, &sp.energies, m).energy)
            .collect();
        brute.sort_by(f64::total_cmp);
        let walk = enumerate_many_body(&q, Sector::NS, ParityFilter::Any, 512).unwrap();
        assert_eq!(walk.energies(), brute);
        let low = enumerate_many_body(&q, Sector::NS, ParityFilter::Any, 20).unwrap();
        assert!(low.truncated);
        for (a, b) in low.energies().iter().zip(&brute) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn below_threshold() {
        let q = p(8, 0.3, 0.5);
        let all = enumerate_many_body(&q, Sector::R, ParityFilter::Odd, 128).unwrap();
        let cut = all.levels[10].energy;
        let below = enumerate_below(&q, Sector::R, ParityFilter::Odd, cut).unwrap();
        let expect = all.levels.iter().filter(|l| l.energy <= cut).count();
        assert_eq!(below.len(), expect);
    }

    #[test]
    fn capacity_guard() {
        let q = p(30, 0.3, 0.5);
        assert!(enumerate_many_body(&q, Sector::R, ParityFilter::Any, 1 << 30).is_err());
        assert!(enumerate_many_body(&q, Sector::R, ParityFilter::Any, 10).is_ok());
    }

    #[test]
    fn delta_examples() {
        // Identical sectors: only double-double rounding (~1e-32) survives.
        assert!(delta_gs(&p(12, 1.0, 0.0)).abs() < 1e-30);
        let d20 = delta_gs(&p(20, 0.5, 0.5)).abs();
        let d30 = delta_gs(&p(30, 0.5, 0.5)).abs();
        assert!(d30 < d20);
    }

    #[test]
    fn physical_parity_rule() {
        assert_eq!(physical_parity(&p(8, 0.3, 0.5), Sector::NS), Parity::Even);
        // Mode φ = 2π has h − 1 < 0 inside |h| < 1, flipping R to even.
        assert_eq!(physical_parity(&p(8, 0.3, 0.5), Sector::R), Parity::Even);
        assert_eq!(physical_parity(&p(8, 0.3, 1.5), Sector::R), Parity::Odd);
        // Odd L: the NS mode at φ = π flips only for h < −1.
        assert_eq!(physical_parity(&p(7, 0.3, -1.5), Sector::NS), Parity::Odd);
    }
}
