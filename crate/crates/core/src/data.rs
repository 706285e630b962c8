//! Subject-level data: observed cost, right-censored survival, treatment arm,
//! and confounders.
//!
//! The on-disk interchange format is CSV with the exact header
//! `y,t,delta,a,l1,...,lq`. Leading lines starting with `#` are treated as
//! provenance comments and skipped, so files produced by the CLI (which echo
//! their generating config) round-trip through this loader.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation model for the cost outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModel {
    /// `y | t, a, l` is Gaussian with linear mean in `(t, a, l)`.
    Gaussian,
    /// `ln y | t, a, l` is Gaussian; requires strictly positive costs.
    LogNormal,
}

impl FromStr for CostModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(CostModel::Gaussian),
            "lognormal" => Ok(CostModel::LogNormal),
            other => Err(Error::config(format!(
                "unknown cost_model '{other}' (expected 'gaussian' or 'lognormal')"
            ))),
        }
    }
}

impl fmt::Display for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostModel::Gaussian => write!(f, "gaussian"),
            CostModel::LogNormal => write!(f, "lognormal"),
        }
    }
}

/// One subject: cost `y`, follow-up time `t`, event indicator `delta`
/// (1 = death observed, 0 = censored), treatment arm `a`, confounders `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub y: f64,
    pub t: f64,
    pub delta: u8,
    pub a: u8,
    pub l: Vec<f64>,
}

/// A validated collection of subjects sharing one confounder dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    q: usize,
}

impl Dataset {
    /// Builds a dataset from rows, enforcing the per-row domain constraints.
    pub fn new(subjects: Vec<Subject>, cost_model: CostModel) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::validation("dataset has no rows"));
        }
        let q = subjects[0].l.len();
        for (idx, s) in subjects.iter().enumerate() {
            validate_subject(s, q, cost_model).map_err(|msg| Error::validation_at(idx + 1, msg))?;
        }
        Ok(Dataset { subjects, q })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Confounder dimension (length of each subject's `l`).
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }

    /// Largest follow-up time; positive by construction.
    pub fn max_t(&self) -> f64 {
        self.subjects.iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Number of distinct observed event (death) times.
    pub fn distinct_event_times(&self) -> usize {
        let mut times: Vec<f64> =
            self.subjects.iter().filter(|s| s.delta == 1).map(|s| s.t).collect();
        times.sort_by(|a, b| a.partial_cmp(b).expect("validated times are comparable"));
        times.dedup();
        times.len()
    }

    /// Checks the stronger invariants fitting needs on top of per-row validity:
    /// at least two subjects, both treatment arms present, at least one event.
    pub fn validate_for_fit(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::validation(format!("fitting needs n >= 2, got n = {}", self.n())));
        }
        if !self.subjects.iter().any(|s| s.a == 1) || !self.subjects.iter().any(|s| s.a == 0) {
            return Err(Error::validation("fitting needs at least one subject in each arm"));
        }
        if !self.subjects.iter().any(|s| s.delta == 1) {
            return Err(Error::validation("fitting needs at least one observed event"));
        }
        Ok(())
    }

    /// Returns a copy with a constant-1 confounder prepended to every `l`.
    /// The constant enters both the cost and survival design vectors, acting
    /// as an intercept in each regression.
    pub fn with_intercept(&self) -> Dataset {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let mut l = Vec::with_capacity(s.l.len() + 1);
                l.push(1.0);
                l.extend_from_slice(&s.l);
                Subject { l, ..s.clone() }
            })
            .collect();
        Dataset { subjects, q: self.q + 1 }
    }
}

fn validate_subject(s: &Subject, q: usize, cost_model: CostModel) -> std::result::Result<(), String> {
    if s.l.len() != q {
        return Err(format!("expected {q} confounders, found {}", s.l.len()));
    }
    if !s.y.is_finite() {
        return Err(format!("y = {} is not finite", s.y));
    }
    if cost_model == CostModel::LogNormal && s.y <= 0.0 {
        return Err(format!("y = {} must be > 0 under the lognormal cost model", s.y));
    }
    if !(s.t.is_finite() && s.t > 0.0) {
        return Err(format!("t = {} must be finite and > 0", s.t));
    }
    if s.delta > 1 {
        return Err(format!("delta = {} must be 0 or 1", s.delta));
    }
    if s.a > 1 {
        return Err(format!("a = {} must be 0 or 1", s.a));
    }
    if let Some(bad) = s.l.iter().find(|v| !v.is_finite()) {
        return Err(format!("confounder value {bad} is not finite"));
    }
    Ok(())
}

/// Loads a dataset from CSV, requiring the header `y,t,delta,a,l1,...,lq`.
///
/// # Errors
/// `Parse` on malformed CSV or a wrong header, `Validation` (with the 1-based
/// data row) on domain violations such as `t <= 0` or `delta` outside {0, 1}.
pub fn load_dataset(path: impl AsRef<Path>, cost_model: CostModel) -> Result<Dataset> {
    let path = path.as_ref();
    let loc = |detail: &str| format!("{}{}", path.display(), detail);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(loc(""), e.to_string()))?;

    let header = reader.headers().map_err(|e| Error::parse(loc(""), e.to_string()))?.clone();
    let q = check_header(&header).map_err(|msg| Error::parse(loc(":header"), msg))?;

    let mut subjects = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::parse(loc(&format!(":row {row}")), e.to_string()))?;
        if record.len() != 4 + q {
            return Err(Error::parse(
                loc(&format!(":row {row}")),
                format!("expected {} fields, found {}", 4 + q, record.len()),
            ));
        }
        let field = |i: usize, name: &str| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| {
                Error::parse(
                    loc(&format!(":row {row}")),
                    format!("field '{name}' = '{}' is not a number", &record[i]),
                )
            })
        };
        let y = field(0, "y")?;
        let t = field(1, "t")?;
        let delta = parse_binary(&record[2], "delta").map_err(|msg| Error::validation_at(row, msg))?;
        let a = parse_binary(&record[3], "a").map_err(|msg| Error::validation_at(row, msg))?;
        let mut l = Vec::with_capacity(q);
        for j in 0..q {
            l.push(field(4 + j, &format!("l{}", j + 1))?);
        }
        let s = Subject { y, t, delta, a, l };
        validate_subject(&s, q, cost_model).map_err(|msg| Error::validation_at(row, msg))?;
        subjects.push(s);
    }
    if subjects.is_empty() {
        return Err(Error::validation(format!("{}: dataset has no rows", path.display())));
    }
    Ok(Dataset { subjects, q })
}

fn parse_binary(raw: &str, name: &str) -> std::result::Result<u8, String> {
    match raw.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(format!("field '{name}' = '{raw}' must be 0 or 1")),
    }
}

fn check_header(header: &csv::StringRecord) -> std::result::Result<usize, String> {
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4 || fields[0] != "y" || fields[1] != "t" || fields[2] != "delta" || fields[3] != "a"
    {
        return Err(format!(
            "header must start with 'y,t,delta,a', found '{}'",
            fields.join(",")
        ));
    }
    let q = fields.len() - 4;
    for (j, name) in fields[4..].iter().enumerate() {
        let expected = format!("l{}", j + 1);
        if *name != expected {
            return Err(format!("confounder column {} must be '{expected}', found '{name}'", j + 5));
        }
    }
    Ok(q)
}

/// Writes a dataset as CSV in the interchange layout, with optional leading
/// `# key = value` provenance comments.
pub fn save_dataset(
    path: impl AsRef<Path>,
    data: &Dataset,
    comments: &[String],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    write!(out, "y,t,delta,a")?;
    for j in 1..=data.q() {
        write!(out, ",l{j}")?;
    }
    writeln!(out)?;
    for s in data.subjects() {
        write!(out, "{},{},{},{}", s.y, s.t, s.delta, s.a)?;
        for v in &s.l {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
