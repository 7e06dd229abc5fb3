//! The `xychain` command line.
//!
//! Every subcommand computes into memory first; files are written afterwards
//! from a single thread, each one atomically.

use crate::chain::{ChainError, ChainParams, Sector};
use crate::ed::{oracle_check, EdError, MAX_ED_LENGTH};
use crate::geometry::{qgt_components, ricci_scalar, ricci_thermo, GeometryError, RicciMethod};
use crate::io::{self, Cell, Format, IoError, Table};
use crate::scaling::{
    build_series_with, classify_decay, em_delta_gs, em_general, fit_biexponential, fit_exponential,
    fit_powerlaw, BranchRule, DecayConfig, FitResult, Quantity, ScalingError, SizeSeries,
};
use crate::scan::{
    case_boundary_field, extract_zero_curves, extract_zero_curves_field, fit_arcs, scan_cases,
    scan_sign, CaseClassifier, Grid, ScanError, SignQuantity, ARC_RMS_LIMIT,
};
use crate::spectrum::{delta_gs, sector_first_excited, sector_ground_energy, SingleParticleSpectrum};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const THREADS_ENV: &str = "XYCHAIN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Domain(_) => "domain",
            CliError::Io(_) => "io",
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ScalingError> for CliError {
    fn from(e: ScalingError) -> Self {
        match e {
            ScalingError::Chain(c) => c.into(),
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<ScanError> for CliError {
    fn from(e: ScanError) -> Self {
        match e {
            ScanError::Grid(_) => CliError::Usage(e.to_string()),
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<EdError> for CliError {
    fn from(e: EdError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "xychain", version, about = "Finite XY chains: sector spectra, geometry and scaling")]
pub struct Cli {
    /// Report errors as one JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// Worker threads for scans (XYCHAIN_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SectorArg {
    Ns,
    R,
    Both,
}

impl SectorArg {
    fn sectors(self) -> Vec<Sector> {
        match self {
            SectorArg::Ns => vec![Sector::NS],
            SectorArg::R => vec![Sector::R],
            SectorArg::Both => Sector::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantityArg {
    DeltaE,
    RicciNs,
    RicciR,
    DeltaRicci,
}

impl From<QuantityArg> for Quantity {
    fn from(q: QuantityArg) -> Self {
        match q {
            QuantityArg::DeltaE => Quantity::DeltaE,
            QuantityArg::RicciNs => Quantity::RicciNS,
            QuantityArg::RicciR => Quantity::RicciR,
            QuantityArg::DeltaRicci => Quantity::DeltaRicci,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignQuantityArg {
    RicciR,
    RicciNs,
    RicciProduct,
    DeltaRicci,
}

impl From<SignQuantityArg> for SignQuantity {
    fn from(q: SignQuantityArg) -> Self {
        match q {
            SignQuantityArg::RicciR => SignQuantity::RicciR,
            SignQuantityArg::RicciNs => SignQuantity::RicciNS,
            SignQuantityArg::RicciProduct => SignQuantity::RicciProduct,
            SignQuantityArg::DeltaRicci => SignQuantity::DeltaRicci,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Determinant,
    Christoffel,
}

impl From<MethodArg> for RicciMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Determinant => RicciMethod::Determinant,
            MethodArg::Christoffel => RicciMethod::Christoffel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Auto,
    Exponential,
    Powerlaw,
    Biexponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Mod4,
    Mod2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierArg {
    Exact,
    Fermionic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    /// Chain length.
    #[arg(long = "L", alias = "l")]
    pub l: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub h: f64,
    /// Exchange coupling J.
    #[arg(long = "J", alias = "j", default_value_t = 1.0, allow_hyphen_values = true)]
    pub j: f64,
}

impl PointArgs {
    fn params(&self) -> Result<ChainParams, CliError> {
        Ok(ChainParams::with_coupling(self.l, self.j, self.gamma, self.h)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; inferred from the --out extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

impl OutArgs {
    fn format(&self) -> Format {
        match (self.format, &self.out) {
            (Some(FormatArg::Csv), _) => Format::Csv,
            (Some(FormatArg::Json), _) => Format::Json,
            (None, Some(p)) => Format::from_path(p),
            (None, None) => Format::Csv,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-particle energies and Bogoliubov angles of one sector.
    Spectrum {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum)]
        sector: SectorArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Ground and first excited energies of each sector.
    GsEnergy {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// NS minus R ground energy over a list of lengths.
    DeltaE {
        /// Lengths: `8`, `8,10,12`, `8:64` or `8:64:2`.
        #[arg(long = "L", alias = "l", value_parser = parse_lengths)]
        ls: Lengths,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, allow_hyphen_values = true)]
        h: f64,
        #[arg(long = "J", alias = "j", default_value_t = 1.0, allow_hyphen_values = true)]
        j: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Quantum geometric tensor components.
    Qgt {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value = "both")]
        sector: SectorArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Ricci scalar by both methods, with the large-L closed form.
    Ricci {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value = "both")]
        sector: SectorArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit the size dependence of a quantity (JSON output).
    Fit {
        #[arg(long, value_enum)]
        quantity: QuantityArg,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, allow_hyphen_values = true)]
        h: f64,
        #[arg(long = "L", alias = "l", value_parser = parse_lengths, default_value = "16:128")]
        ls: Lengths,
        /// Fit window `Lmin:Lmax`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(usize, usize)>,
        #[arg(long, value_enum, default_value = "auto")]
        model: ModelArg,
        /// Branch rule for bi-exponential fits.
        #[arg(long, value_enum, default_value = "mod4")]
        rule: RuleArg,
        #[arg(long, value_enum, default_value = "determinant")]
        method: MethodArg,
        /// JSON result file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the series (CSV, or JSON by extension).
        #[arg(long)]
        series_out: Option<PathBuf>,
    },
    /// Exact δE against the Euler-Maclaurin expansions.
    EmCompare {
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        h: f64,
        #[arg(long = "L", alias = "l", value_parser = parse_lengths, default_value = "100,200,400,800")]
        ls: Lengths,
        /// Bernoulli terms in the general expansion (1..=4).
        #[arg(long, default_value_t = 4)]
        terms: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Ground-state case map over a (γ, h) grid, with transition arcs.
    ScanPhase {
        #[arg(long = "L", alias = "l")]
        l: usize,
        /// `gmin:gmax:NxHmin:hmax:M`.
        #[arg(long, value_parser = parse_grid)]
        grid: Grid,
        /// Defaults to exact for L <= 13, fermionic otherwise.
        #[arg(long, value_enum)]
        classifier: Option<ClassifierArg>,
        #[command(flatten)]
        out: OutArgs,
        /// Arc fits (index, h0, residual, n_points).
        #[arg(long)]
        arcs: Option<PathBuf>,
    },
    /// Clamped sign map of a curvature quantity over a (γ, h) grid.
    ScanSign {
        #[arg(long = "L", alias = "l")]
        l: usize,
        #[arg(long, value_enum)]
        quantity: SignQuantityArg,
        #[arg(long, value_parser = parse_grid)]
        grid: Grid,
        #[arg(long, default_value_t = 1.0)]
        clamp: f64,
        #[arg(long, value_enum, default_value = "determinant")]
        method: MethodArg,
        #[command(flatten)]
        out: OutArgs,
        /// SVG heatmap.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Zero-crossing points (curve, gamma, h); defaults next to the SVG.
        #[arg(long)]
        zeros: Option<PathBuf>,
    },
    /// Compare fermionic sector spectra with exact diagonalization (JSON).
    OracleCheck {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lengths(pub Vec<usize>);

/// `8`, `8,10,12`, `8:64` or `8:64:2` (inclusive).
pub fn parse_lengths(s: &str) -> Result<Lengths, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad length '{t}'"))
    };
    let v: Vec<usize> = if s.contains(':') {
        let p: Vec<&str> = s.split(':').collect();
        let (a, b, step) = match p.as_slice() {
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, c] => (num(a)?, num(b)?, num(c)?),
            _ => return Err(format!("bad length range '{s}'")),
        };
        if step == 0 || a > b {
            return Err(format!("empty length range '{s}'"));
        }
        (a..=b).step_by(step).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if v.is_empty() {
        return Err("no lengths given".into());
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("lengths must be strictly increasing: '{s}'"));
    }
    Ok(Lengths(v))
}

pub fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("window must be Lmin:Lmax, got '{s}'"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad window '{s}'"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad window '{s}'"))?;
    if a > b {
        return Err(format!("window bounds reversed: '{s}'"));
    }
    Ok((a, b))
}

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    s.parse::<Grid>().map_err(|e| e.to_string())
}

/// What a command produced, before anything touches the filesystem.
#[derive(Debug, Default)]
struct Outcome {
    stdout: String,
    files: Vec<(PathBuf, Vec<u8>)>,
    summary: String,
}

impl Outcome {
    /// Route a rendered payload to its file, or to stdout.
    fn emit(&mut self, dest: &Option<PathBuf>, body: String) {
        match dest {
            Some(p) => self.files.push((p.clone(), body.into_bytes())),
            None => self.stdout.push_str(&body),
        }
    }

    fn table(&mut self, out: &OutArgs, t: &Table) -> Result<(), CliError> {
        let body = io::render_table(t, out.format())?;
        self.emit(&out.out, body);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, dest: &Option<PathBuf>, v: &T) -> Result<(), CliError> {
        let body = io::to_json_string(v)?;
        self.emit(dest, body);
        Ok(())
    }
}

fn check_writable(p: &Path) -> Result<(), CliError> {
    let dir = match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    match std::fs::metadata(dir) {
        Ok(m) if m.is_dir() && !m.permissions().readonly() => Ok(()),
        Ok(_) => Err(CliError::Io(format!("{}: directory not writable", dir.display()))),
        Err(e) => Err(CliError::Io(format!("{}: {e}", dir.display()))),
    }
}

impl Command {
    fn output_paths(&self) -> Vec<&Path> {
        let mut v: Vec<&Option<PathBuf>> = Vec::new();
        match self {
            Command::Spectrum { out, .. }
            | Command::GsEnergy { out, .. }
            | Command::DeltaE { out, .. }
            | Command::Qgt { out, .. }
            | Command::Ricci { out, .. }
            | Command::EmCompare { out, .. } => v.push(&out.out),
            Command::Fit { out, series_out, .. } => {
                v.push(out);
                v.push(series_out);
            }
            Command::ScanPhase { out, arcs, .. } => {
                v.push(&out.out);
                v.push(arcs);
            }
            Command::ScanSign { out, svg, zeros, .. } => {
                v.push(&out.out);
                v.push(svg);
                v.push(zeros);
            }
            Command::OracleCheck { out, .. } => v.push(out),
        }
        v.into_iter().flatten().map(PathBuf::as_path).collect()
    }
}

fn series_table(s: &SizeSeries) -> Table {
    let mut t = Table::new(&["L", "value", "sign"]);
    for (smp, &sg) in s.samples.iter().zip(&s.sign_sequence) {
        t.push(vec![smp.l.into(), smp.value.unwrap_or(f64::NAN).into(), sg.into()]);
    }
    t
}

fn nan_or<E>(r: Result<f64, E>) -> f64 {
    r.unwrap_or(f64::NAN)
}

fn execute(cmd: &Command) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    match cmd {
        Command::Spectrum { point, sector, out } => {
            let p = point.params()?;
            let secs = sector.sectors();
            let mut t = if secs.len() > 1 {
                Table::new(&["sector", "k", "phi", "epsilon", "theta"])
            } else {
                Table::new(&["k", "phi", "epsilon", "theta"])
            };
            for s in secs.iter().copied() {
                let sp = SingleParticleSpectrum::new(&p, s);
                for k in 0..p.l {
                    let mut row: Vec<Cell> = vec![
                        (k + 1).into(),
                        sp.phases[k].into(),
                        sp.energies[k].into(),
                        sp.angles[k].into(),
                    ];
                    if secs.len() > 1 {
                        row.insert(0, s.to_string().into());
                    }
                    t.push(row);
                }
            }
            o.table(out, &t)?;
            o.summary = format!("spectrum: L={} gamma={} h={}, {} modes", p.l, p.gamma, p.h, t.rows.len());
        }
        Command::GsEnergy { point, out } => {
            let p = point.params()?;
            let mut t = Table::new(&["sector", "L", "energy", "first_excited"]);
            for s in Sector::BOTH {
                t.push(vec![
                    s.to_string().into(),
                    p.l.into(),
                    sector_ground_energy(&p, s).into(),
                    sector_first_excited(&p, s).into(),
                ]);
            }
            o.table(out, &t)?;
            o.summary = format!("gs-energy: L={} deltaE={}", p.l, delta_gs(&p));
        }
        Command::DeltaE { ls, gamma, h, j, out } => {
            let mut data = Vec::with_capacity(ls.0.len());
            for &l in &ls.0 {
                let p = ChainParams::with_coupling(l, *j, *gamma, *h)?;
                data.push((l, delta_gs(&p)));
            }
            let s = SizeSeries::from_values(Quantity::DeltaE, *gamma, *h, &data);
            o.table(out, &series_table(&s))?;
            let changes = s
                .sign_sequence
                .iter()
                .filter(|&&x| x != 0)
                .collect::<Vec<_>>()
                .windows(2)
                .filter(|w| w[0] != w[1])
                .count();
            o.summary = format!("delta-e: {} lengths, {} sign changes", data.len(), changes);
        }
        Command::Qgt { point, sector, out } => {
            let p = point.params()?;
            let mut t = Table::new(&["sector", "q_hh", "q_gg", "q_hg", "omega_hg", "det"]);
            for s in sector.sectors() {
                let q = qgt_components(&p, s)?;
                t.push(vec![
                    s.to_string().into(),
                    q.q_hh.into(),
                    q.q_gg.into(),
                    q.q_hg.into(),
                    q.omega_hg.into(),
                    q.det().into(),
                ]);
            }
            o.table(out, &t)?;
            o.summary = format!("qgt: L={} gamma={} h={}", p.l, p.gamma, p.h);
        }
        Command::Ricci { point, sector, out } => {
            let p = point.params()?;
            let thermo = nan_or(ricci_thermo(p.gamma / p.j, p.h / p.j, p.l));
            let mut t = Table::new(&["sector", "r_determinant", "r_christoffel", "discrepancy", "singular", "r_thermo"]);
            for s in sector.sectors() {
                let r = ricci_scalar(&p, s)?;
                t.push(vec![
                    s.to_string().into(),
                    r.r_determinant.into(),
                    r.r_christoffel.into(),
                    r.discrepancy.into(),
                    r.singular.into(),
                    thermo.into(),
                ]);
            }
            o.table(out, &t)?;
            o.summary = format!("ricci: L={} gamma={} h={}", p.l, p.gamma, p.h);
        }
        Command::Fit {
            quantity,
            gamma,
            h,
            ls,
            window,
            model,
            rule,
            method,
            out,
            series_out,
        } => {
            let s = build_series_with((*quantity).into(), *gamma, *h, &ls.0, (*method).into())?;
            let fit: FitResult = match model {
                ModelArg::Auto => classify_decay(
                    &s,
                    &DecayConfig {
                        window: *window,
                        ..DecayConfig::default()
                    },
                )?,
                ModelArg::Exponential => fit_exponential(&s, *window)?,
                ModelArg::Powerlaw => fit_powerlaw(&s, *window)?,
                ModelArg::Biexponential => {
                    let r = match rule {
                        RuleArg::Mod4 => BranchRule::Mod4,
                        RuleArg::Mod2 => BranchRule::Mod2,
                    };
                    fit_biexponential(&s, r, *window)?
                }
            };
            if series_out.is_some() {
                let f = Format::from_path(series_out.as_deref().unwrap_or(Path::new("")));
                let body = io::render_table(&series_table(&s), f)?;
                o.emit(series_out, body);
            }
            #[derive(Serialize)]
            struct FitReport<'a> {
                quantity: Quantity,
                gamma: f64,
                h: f64,
                fit: &'a FitResult,
            }
            o.json(
                out,
                &FitReport {
                    quantity: s.quantity,
                    gamma: *gamma,
                    h: *h,
                    fit: &fit,
                },
            )?;
            o.summary = format!(
                "fit: {:?} exponents={:?} r2={:?}",
                fit.model, fit.exponents, fit.r_squared
            );
        }
        Command::EmCompare { gamma, h, ls, terms, out } => {
            if !(1..=4).contains(terms) {
                return Err(CliError::Usage(format!("--terms must be 1..=4, got {terms}")));
            }
            let closed = *h == 1.0;
            let mut t = Table::new(&["L", "exact", "em_order1", "em_order3", "em_general", "rel_err_order3"]);
            for &l in &ls.0 {
                let p = ChainParams::new(l, *gamma, *h)?;
                let exact = delta_gs(&p);
                let (o1, o3) = if closed {
                    (nan_or(em_delta_gs(*gamma, l, 1)), nan_or(em_delta_gs(*gamma, l, 3)))
                } else {
                    (f64::NAN, f64::NAN)
                };
                let gen = em_general(&p, *terms)?;
                t.push(vec![
                    l.into(),
                    exact.into(),
                    o1.into(),
                    o3.into(),
                    gen.into(),
                    ((exact - o3) / exact).abs().into(),
                ]);
            }
            o.table(out, &t)?;
            o.summary = format!("em-compare: gamma={} h={}, {} lengths", gamma, h, ls.0.len());
        }
        Command::ScanPhase {
            l,
            grid,
            classifier,
            out,
            arcs,
        } => {
            let c = match classifier {
                Some(ClassifierArg::Exact) => CaseClassifier::Exact,
                Some(ClassifierArg::Fermionic) => CaseClassifier::Fermionic,
                None if *l <= MAX_ED_LENGTH => CaseClassifier::Exact,
                None => CaseClassifier::Fermionic,
            };
            let map = scan_cases(grid, *l, c)?;
            let mut t = Table::new(&["gamma", "h", "case"]);
            for ((g, hh), cell) in grid.nodes().into_iter().zip(&map.cells) {
                t.push(vec![g.into(), hh.into(), cell.token().into()]);
            }
            o.table(out, &t)?;
            let curves = extract_zero_curves_field(&case_boundary_field(&map));
            let rep = fit_arcs(&curves, *l, ARC_RMS_LIMIT);
            if arcs.is_some() {
                let mut at = Table::new(&["index", "h0", "residual", "n_points"]);
                for f in rep.fits.iter().filter(|f| f.accepted) {
                    at.push(vec![f.index.into(), f.h0.into(), f.residual.into(), f.n_points.into()]);
                }
                let fmt = Format::from_path(arcs.as_deref().unwrap_or(Path::new("")));
                o.emit(arcs, io::render_table(&at, fmt)?);
            }
            o.summary = format!("scan-phase: L={} {} cells, {} arcs", l, grid.len(), rep.m);
        }
        Command::ScanSign {
            l,
            quantity,
            grid,
            clamp,
            method,
            out,
            svg,
            zeros,
        } => {
            let m = scan_sign(grid, *l, (*quantity).into(), *clamp, (*method).into())?;
            o.table(out, &io::signmap_table(&m))?;
            let curves = extract_zero_curves(&m);
            let zeros = zeros.clone().or_else(|| {
                svg.as_ref().map(|p| {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    p.with_file_name(format!("{stem}_zeros.csv"))
                })
            });
            if let Some(zp) = &zeros {
                check_writable(zp)?;
                let body = io::render_table(&io::zero_crossings_table(&curves), Format::from_path(zp))?;
                o.files.push((zp.clone(), body.into_bytes()));
            }
            if let Some(sp) = svg {
                o.files.push((sp.clone(), io::svg_heatmap(&m).into_bytes()));
            }
            let singular = m.singular.iter().filter(|&&s| s).count();
            o.summary = format!(
                "scan-sign: L={} {} cells, {} singular, {} zero curves",
                l,
                grid.len(),
                singular,
                curves.len()
            );
        }
        Command::OracleCheck { point, tol, out } => {
            let p = point.params()?;
            let rep = oracle_check(&p, *tol)?;
            o.json(out, &rep)?;
            let ok = rep.rule_checks.iter().any(|r| r.holds);
            o.summary = format!(
                "oracle-check: L={} gamma={} h={} parity rule {}",
                p.l,
                p.gamma,
                p.h,
                if ok { "matched" } else { "not matched" }
            );
        }
    }
    Ok(o)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        _ => match flag {
            Some(0) => Err(CliError::Usage("--threads must be positive".into())),
            f => Ok(f),
        },
    }
}

fn run_parsed(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    for p in cli.command.output_paths() {
        check_writable(p)?;
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| CliError::Io(e.to_string()))?;
    let outcome = pool.install(|| execute(&cli.command))?;
    for (p, body) in &outcome.files {
        io::write_atomic(p, body)?;
    }
    let io_err = |e: std::io::Error| CliError::Io(e.to_string());
    stdout.write_all(outcome.stdout.as_bytes()).map_err(io_err)?;
    // Keep stdout clean for data when nothing went to files.
    let sink: &mut dyn Write = if outcome.stdout.is_empty() { stdout } else { stderr };
    writeln!(sink, "{}", outcome.summary).map_err(io_err)?;
    Ok(())
}

fn report(err: &CliError, json: bool, stderr: &mut dyn Write) {
    if json {
        let v = serde_json::json!({
            "error": err.kind(),
            "message": err.to_string(),
            "exit_code": err.exit_code(),
        });
        let _ = writeln!(stderr, "{v}");
    } else {
        let _ = writeln!(stderr, "xychain: {err}");
    }
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            // Parsing failed, so look for the flag by hand.
            let json = args.iter().any(|a| a == "--json-errors");
            if json {
                report(&CliError::Usage(e.kind().to_string()), true, stderr);
                let _ = write!(stderr, "{}", e.render());
            } else {
                let _ = write!(stderr, "{}", e.render());
            }
            return EXIT_USAGE;
        }
    };
    match run_parsed(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report(&e, cli.json_errors, stderr);
            e.exit_code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let out = std::io::stdout();
    let err = std::io::stderr();
    run_with(argv, &mut out.lock(), &mut err.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cap(args: &[&str]) -> (i32, String, String) {
        let mut o = Vec::new();
        let mut e = Vec::new();
        let argv = std::iter::once("xychain").chain(args.iter().copied());
        let code = run_with(argv, &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn lengths_syntax() {
        assert_eq!(parse_lengths("8").unwrap().0, vec![8]);
        assert_eq!(parse_lengths("8,10,12").unwrap().0, vec![8, 10, 12]);
        assert_eq!(parse_lengths("4:8").unwrap().0, vec![4, 5, 6, 7, 8]);
        assert_eq!(parse_lengths("4:10:3").unwrap().0, vec![4, 7, 10]);
        assert!(parse_lengths("10,8").is_err());
        assert!(parse_lengths("9:4").is_err());
        assert!(parse_lengths("a").is_err());
    }

    #[test]
    fn window_syntax() {
        assert_eq!(parse_window("16:128").unwrap(), (16, 128));
        assert!(parse_window("16").is_err());
        assert!(parse_window("9:4").is_err());
    }

    #[test]
    fn spectrum_to_stdout() {
        let (c, out, err) = run_cap(&["spectrum", "--L", "4", "--gamma", "1", "--h", "0", "--sector", "r"]);
        assert_eq!(c, 0, "{err}");
        assert!(out.starts_with("# xychain-geom v1\nk,phi,epsilon,theta\n"));
        assert_eq!(out.lines().count(), 6);
        assert!(err.starts_with("spectrum:"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_cap(&["nonsense"]).0, EXIT_USAGE);
        assert_eq!(run_cap(&["spectrum", "--L", "4"]).0, EXIT_USAGE);
        let (c, _, e) = run_cap(&["--json-errors", "scan-sign", "--L", "4", "--quantity", "ricci-r", "--grid", "0:1:0x0:1:3"]);
        assert_eq!(c, EXIT_USAGE);
        assert!(e.starts_with("{\""));
    }

    #[test]
    fn singular_point_exits_3() {
        // γ=1, h=0, L=4 has no gapless mode; γ=0.5, h=1 has one in R at φ=0.
        let (c, _, e) = run_cap(&["--json-errors", "qgt", "--L", "4", "--gamma", "0.5", "--h", "1", "--sector", "r"]);
        assert_eq!(c, EXIT_DOMAIN);
        let v: serde_json::Value = serde_json::from_str(e.lines().next().unwrap()).unwrap();
        assert_eq!(v["error"], "domain");
        assert_eq!(v["exit_code"], 3);
    }

    #[test]
    fn missing_directory_exits_4() {
        let (c, _, _) = run_cap(&[
            "gs-energy", "--L", "4", "--gamma", "0.3", "--h", "0.5", "--out", "/nonexistent/dir/x.csv",
        ]);
        assert_eq!(c, EXIT_IO);
    }
}
