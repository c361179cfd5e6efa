//! Report assembly and the two output formats.

use std::io::Write;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

/// One verdict. `value` is compared against `limit` by whoever built it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    /// Where the worst violation sits, if the check has a location.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    /// Wall-clock seconds. Shown in text mode only so json stays
    /// reproducible.
    #[serde(skip)]
    pub seconds: Option<f64>,
}

impl Check {
    /// Passes when `value ≤ limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= limit,
            value: Some(value),
            limit: Some(limit),
            location: None,
            seconds: None,
        }
    }

    /// Passes when `value ≥ limit`.
    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            pass: value >= limit,
            ..Self::at_most(name, value, limit)
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            pass,
            value: None,
            limit: None,
            location: None,
            seconds: None,
        }
    }

    pub fn at(mut self, location: Option<String>) -> Self {
        self.location = location;
        self
    }

    pub fn timed(mut self, seconds: f64) -> Self {
        self.seconds = Some(seconds);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Text(String),
    Number(f64),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Number(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Number)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "pass" } else { "FAIL" }.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Section {
    pub name: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<Table>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: true,
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn check(&mut self, c: Check) {
        self.pass &= c.pass;
        self.checks.push(c);
    }

    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub pass: bool,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            pass: true,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Section) {
        self.pass &= s.pass;
        self.sections.push(s);
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

/// Pretty printing with every float written as `d.dddddddddddddddde±x`,
/// i.e. 17 significant digits. Non-finite floats were already mapped to
/// `null` by `serde_json`.
struct Sig17(PrettyFormatter<'static>);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for Sig17 {
    forward!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

/// Serialize with sorted keys (through `serde_json::Value`, whose maps are
/// ordered) and 17 significant digits.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let value: Value = serde_json::to_value(value).expect("reports serialize");
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser).expect("writing to memory");
    out.push(b'\n');
    out
}

/// Short human form of a number.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let a = v.abs();
    if (1e-3..1e7).contains(&a) {
        let s = format!("{v:.6}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.3e}")
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Text(s) => s.clone(),
        Cell::Number(v) => fmt_num(*v),
        Cell::Missing => "-".into(),
    }
}

fn aligned(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        out.push_str("   ");
        for (i, c) in cells.iter().enumerate() {
            out.push_str("  ");
            out.push_str(c);
            if i + 1 < cells.len() {
                out.push_str(&" ".repeat(width[i] - c.chars().count()));
            }
        }
        out.push('\n');
    };
    line(out, header);
    for r in rows {
        line(out, r);
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn to_text(r: &Report) -> String {
    let mut out = format!("ggc {}: {}\n", r.command, verdict(r.pass));
    if r.sections.is_empty() {
        out.push_str("  (no results)\n");
    }
    for s in &r.sections {
        out.push_str(&format!("\n  {} [{}]\n", s.name, verdict(s.pass)));
        if !s.checks.is_empty() {
            let header: Vec<String> = ["check", "value", "limit", "verdict", "where"].map(String::from).to_vec();
            let rows: Vec<Vec<String>> = s
                .checks
                .iter()
                .map(|c| {
                    let mut name = c.name.clone();
                    if let Some(sec) = c.seconds {
                        name.push_str(&format!(" ({sec:.2} s)"));
                    }
                    vec![
                        name,
                        c.value.map_or("-".into(), fmt_num),
                        c.limit.map_or("-".into(), fmt_num),
                        verdict(c.pass).into(),
                        c.location.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            aligned(&mut out, &header, &rows);
        }
        for t in &s.tables {
            out.push_str(&format!("\n    {}\n", t.title));
            let rows: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(cell_text).collect()).collect();
            aligned(&mut out, &t.columns, &rows);
        }
    }
    out
}

pub fn emit(r: &Report, format: Format) -> Vec<u8> {
    match format {
        Format::Text => to_text(r).into_bytes(),
        Format::Json => to_json_bytes(r),
    }
}

/// Machine-readable error object for json mode.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub command: String,
    pub error: ErrorBody,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}
