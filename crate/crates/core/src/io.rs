//! Serialized outputs: versioned CSV tables with JSON twins, atomic file
//! writes and SVG heatmaps of sign maps.

use crate::scan::{SignMap, ZeroCurve};
use serde::Serialize;
use serde_json::{Map, Value};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// First line of every CSV; bump on any column change.
pub const SCHEMA: &str = "xychain-geom v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

impl Cell {
    /// Rust's float `Display` is the shortest string that parses back to
    /// the same bits, which is what the round-trip contract needs.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => x.to_string(),
            Cell::Str(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            // JSON has no NaN or infinities; they become null.
            Cell::Float(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Str(s) => Value::from(s.clone()),
            Cell::Bool(b) => Value::from(*b),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i8> for Cell {
    fn from(x: i8) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Str(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Str(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, IoError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        let body = w.into_inner().map_err(|e| IoError::Parse {
            path: "<memory>".into(),
            msg: e.to_string(),
        })?;
        Ok(format!("# {SCHEMA}\n{}", String::from_utf8_lossy(&body)))
    }

    pub fn to_json_value(&self) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert(c.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let mut top = Map::new();
        top.insert("schema".into(), Value::from(SCHEMA));
        top.insert(
            "columns".into(),
            Value::from(self.columns.iter().map(|c| Value::from(c.as_str())).collect::<Vec<_>>()),
        );
        top.insert("rows".into(), Value::Array(rows));
        Value::Object(top)
    }

    pub fn to_json(&self) -> Result<String, IoError> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())? + "\n")
    }
}

/// Raw string rows of a versioned CSV, header checked.
pub fn parse_csv(text: &str, path: &str) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let body = text
        .strip_prefix(&format!("# {SCHEMA}\n"))
        .ok_or_else(|| IoError::Parse {
            path: path.into(),
            msg: format!("missing '# {SCHEMA}' header line"),
        })?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let cols = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((cols, rows))
}

/// Write via a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Write {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents).map_err(err)?;
    tmp.flush().map_err(err)?;
    // Temp files are created owner-only; outputs should look like any other file.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(err)?;
    }
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` means JSON; anything else is CSV.
    pub fn from_path(p: &Path) -> Self {
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub fn render_table(t: &Table, f: Format) -> Result<String, IoError> {
    match f {
        Format::Csv => t.to_csv(),
        Format::Json => t.to_json(),
    }
}

pub fn to_json_string<T: Serialize>(v: &T) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn signmap_table(m: &SignMap) -> Table {
    let mut t = Table::new(&["gamma", "h", "raw", "clamped", "sign", "singular"]);
    for (k, (g, h)) in m.grid.nodes().into_iter().enumerate() {
        t.push(vec![
            g.into(),
            h.into(),
            m.raw[k].into(),
            m.clamped[k].into(),
            m.signs[k].into(),
            m.singular[k].into(),
        ]);
    }
    t
}

pub fn zero_crossings_table(curves: &[ZeroCurve]) -> Table {
    let mut t = Table::new(&["curve", "gamma", "h"]);
    for (i, c) in curves.iter().enumerate() {
        for &(g, h) in &c.points {
            t.push(vec![(i + 1).into(), g.into(), h.into()]);
        }
    }
    t
}

const SVG_PLOT: f64 = 600.0;
const SVG_MARGIN: f64 = 50.0;

fn blend(to: (u8, u8, u8), w: f64) -> String {
    let mix = |c: u8| (255.0 + (c as f64 - 255.0) * w).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(to.0), mix(to.1), mix(to.2))
}

/// Fill for one cell: red for positive, blue for negative, white for zero.
fn cell_color(clamped: f64, delta: f64, sign: i8, singular: bool) -> String {
    if singular || sign == 0 {
        return "#ffffff".into();
    }
    // Keep a floor of colour so tiny values still read as signed.
    let w = 0.25 + 0.75 * (clamped.abs() / delta).min(1.0);
    if sign > 0 {
        blend((178, 24, 43), w)
    } else {
        blend((33, 102, 172), w)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let first = (lo / 0.5).ceil() as i64;
    let last = (hi / 0.5).floor() as i64;
    (first..=last).map(|k| k as f64 * 0.5).collect()
}

/// Standalone SVG heatmap with axis ticks every 0.5. Deterministic output.
pub fn svg_heatmap(m: &SignMap) -> String {
    let g = &m.grid;
    let (ng, nh) = (g.n_gamma as f64, g.n_h as f64);
    let (sx, sy) = (SVG_PLOT / ng, SVG_PLOT / nh);
    let size = SVG_PLOT + 2.0 * SVG_MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<g transform="translate({SVG_MARGIN} {}) scale({sx} {})" shape-rendering="crispEdges">"#,
        SVG_MARGIN + SVG_PLOT,
        -sy
    );
    for j in 0..g.n_h {
        for i in 0..g.n_gamma {
            let k = g.index(i, j);
            let fill = cell_color(m.clamped[k], m.delta, m.signs[k], m.singular[k]);
            let _ = writeln!(s, r#"<rect x="{i}" y="{j}" width="1" height="1" fill="{fill}"/>"#);
        }
    }
    s.push_str("</g>\n");
    let x0 = SVG_MARGIN;
    let y0 = SVG_MARGIN + SVG_PLOT;
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{SVG_MARGIN}" width="{SVG_PLOT}" height="{SVG_PLOT}" fill="none" stroke="black"/>"#
    );
    for t in ticks(g.gamma_min, g.gamma_max) {
        let x = x0 + (t - g.gamma_min) / (g.gamma_max - g.gamma_min) * SVG_PLOT;
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{t}</text>"#, y0 + 18.0);
    }
    for t in ticks(g.h_min, g.h_max) {
        let y = y0 - (t - g.h_min) / (g.h_max - g.h_min) * SVG_PLOT;
        let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, x0 - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">γ</text>"#,
        x0 + SVG_PLOT / 2.0,
        y0 + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">h</text>"#,
        x0 - 36.0,
        SVG_MARGIN + SVG_PLOT / 2.0
    );
    s.push_str("</svg>\n");
    s
}
