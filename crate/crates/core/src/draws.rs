//! Posterior draw store: one JSON object per line, a header first, then one
//! record per retained iteration.
//!
//! The header embeds everything a consumer needs to reinterpret the draws
//! without the original inputs — the fitting-scale dataset (intercept column
//! already appended when configured), the hazard grid and its centering, and
//! the effective configuration. Draw records carry the per-subject treatment
//! contrasts (dt, dy) rather than a single benefit number, so the net benefit
//! at ANY willingness-to-pay replays exactly from the stored weights:
//! psi(kappa) = sum_i w_i (kappa dt_i − dy_i).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{CostModel, Dataset};
use crate::error::{Error, Result};
use crate::hazard::{Grid, HazardCurve};
use crate::likelihood::{CostParams, SurvParams};

pub const STORE_VERSION: u32 = 1;

/// First line of every store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub version: u32,
    pub seed: u64,
    pub cost_model: CostModel,
    pub add_intercept: bool,
    /// Willingness-to-pay the stored psi values were computed at.
    pub kappa: f64,
    pub kappa_grid: Vec<f64>,
    pub grid: Grid,
    /// Prior-centering hazard increment per grid interval.
    pub lambda_star: Vec<f64>,
    pub b: f64,
    pub xi: f64,
    /// Effective configuration echo, for provenance.
    pub config: BTreeMap<String, String>,
    /// The dataset the chain actually fit (fitting scale).
    pub data: Dataset,
}

impl StoreHeader {
    pub fn validate(&self) -> Result<()> {
        if self.version != STORE_VERSION {
            return Err(Error::validation(format!(
                "draw store version {} is not supported (expected {STORE_VERSION})",
                self.version
            )));
        }
        if self.lambda_star.len() != self.grid.v() {
            return Err(Error::validation(format!(
                "centering hazard has {} intervals but the grid has {}",
                self.lambda_star.len(),
                self.grid.v()
            )));
        }
        if !self.kappa.is_finite() {
            return Err(Error::validation("header kappa is not finite"));
        }
        self.data.validate_for_fit()
    }
}

/// One retained iteration. `omega` maps an outer-cluster slot to its cost
/// parameters; `theta` maps an (outer, nested) slot pair to its hazard
/// coefficients; `assign` holds each subject's slot pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iter: usize,
    pub assign: Vec<(usize, usize)>,
    pub omega: Vec<(usize, CostParams)>,
    pub theta: Vec<(usize, usize, SurvParams)>,
    pub alpha_omega: f64,
    pub alpha_theta: f64,
    /// Baseline hazard level per grid interval.
    pub lambda: Vec<f64>,
    /// Bayesian-bootstrap weights of this iteration.
    pub weights: Vec<f64>,
    /// Per-subject treated-minus-control mean survival and mean cost.
    pub dt: Vec<f64>,
    pub dy: Vec<f64>,
    /// Population net benefit at the header's kappa.
    pub psi: f64,
}

impl DrawRecord {
    /// Checks internal consistency against the header's dimensions: every
    /// vector subject-length, the hazard grid-length, and every assigned slot
    /// pair backed by a table entry.
    pub fn validate(&self, n: usize, v: usize) -> Result<()> {
        let iter = self.iter;
        for (name, len) in [
            ("assign", self.assign.len()),
            ("weights", self.weights.len()),
            ("dt", self.dt.len()),
            ("dy", self.dy.len()),
        ] {
            if len != n {
                return Err(Error::validation(format!(
                    "draw {iter}: {name} has length {len}, expected {n}"
                )));
            }
        }
        if self.lambda.len() != v {
            return Err(Error::validation(format!(
                "draw {iter}: hazard has {} intervals, expected {v}",
                self.lambda.len()
            )));
        }
        for &(j, k) in &self.assign {
            if !self.omega.iter().any(|(slot, _)| *slot == j) {
                return Err(Error::validation(format!(
                    "draw {iter}: assignment references missing cost cluster {j}"
                )));
            }
            if !self.theta.iter().any(|(oj, ok, _)| (*oj, *ok) == (j, k)) {
                return Err(Error::validation(format!(
                    "draw {iter}: assignment references missing hazard subcluster ({j},{k})"
                )));
            }
        }
        Ok(())
    }

    pub fn cost_params_of(&self, i: usize) -> &CostParams {
        let (j, _) = self.assign[i];
        &self.omega.iter().find(|(slot, _)| *slot == j).expect("validated table entry").1
    }

    pub fn surv_params_of(&self, i: usize) -> &SurvParams {
        let (j, k) = self.assign[i];
        &self.theta.iter().find(|(oj, ok, _)| (*oj, *ok) == (j, k)).expect("validated table entry").2
    }

    pub fn curve(&self, grid: &Grid) -> HazardCurve {
        HazardCurve::new(grid.clone(), self.lambda.clone())
    }

    /// Per-subject net benefit at an arbitrary willingness-to-pay.
    pub fn psi_i_at(&self, kappa: f64) -> Vec<f64> {
        self.dt.iter().zip(&self.dy).map(|(&dt, &dy)| kappa * dt - dy).collect()
    }

    /// Weight-averaged (mean survival gain, mean cost increase) pair; the net
    /// benefit at any kappa is `kappa * dt - dy` of this.
    pub fn contrast(&self) -> (f64, f64) {
        let dt = self.weights.iter().zip(&self.dt).map(|(w, dt)| w * dt).sum();
        let dy = self.weights.iter().zip(&self.dy).map(|(w, dy)| w * dy).sum();
        (dt, dy)
    }

    /// Weighted population net benefit at an arbitrary willingness-to-pay.
    pub fn psi_at(&self, kappa: f64) -> f64 {
        let (dt, dy) = self.contrast();
        kappa * dt - dy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header(StoreHeader),
    Draw(DrawRecord),
}

/// Appends records to a sink, header first.
pub struct DrawWriter<W: Write> {
    out: W,
    n: usize,
    v: usize,
    draws: usize,
}

impl DrawWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: &StoreHeader) -> Result<Self> {
        DrawWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> DrawWriter<W> {
    pub fn new(mut out: W, header: &StoreHeader) -> Result<Self> {
        header.validate()?;
        serde_json::to_writer(&mut out, &Record::Header(header.clone()))
            .map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
        Ok(DrawWriter { out, n: header.data.n(), v: header.grid.v(), draws: 0 })
    }

    pub fn write_draw(&mut self, draw: &DrawRecord) -> Result<()> {
        draw.validate(self.n, self.v)?;
        serde_json::to_writer(&mut self.out, &Record::Draw(draw.clone()))
            .map_err(|e| Error::Io(e.into()))?;
        self.out.write_all(b"\n")?;
        self.draws += 1;
        Ok(())
    }

    pub fn draws_written(&self) -> usize {
        self.draws
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Streams a store without holding more than one record: the header is read
/// eagerly, draws come from the iterator (each validated against the header).
pub struct DrawReader<R: BufRead> {
    input: R,
    label: String,
    line: usize,
    header: StoreHeader,
}

impl DrawReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        DrawReader::from_reader(BufReader::new(file), &path.display().to_string())
    }
}

impl<R: BufRead> DrawReader<R> {
    pub fn from_reader(mut input: R, label: &str) -> Result<Self> {
        let mut buf = String::new();
        let mut line = 0;
        let first = loop {
            buf.clear();
            if input.read_line(&mut buf)? == 0 {
                return Err(Error::parse(label, "empty draw store"));
            }
            line += 1;
            if !buf.trim().is_empty() {
                break buf.trim();
            }
        };
        let record: Record = serde_json::from_str(first)
            .map_err(|e| Error::parse(format!("{label}:line {line}"), e.to_string()))?;
        let header = match record {
            Record::Header(h) => h,
            Record::Draw(_) => {
                return Err(Error::parse(
                    format!("{label}:line {line}"),
                    "first record must be the header",
                ))
            }
        };
        header.validate()?;
        Ok(DrawReader { input, label: label.to_string(), line, header })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    fn next_draw(&mut self) -> Option<Result<DrawRecord>> {
        let mut buf = String::new();
        loop {
            buf.clear();
            match self.input.read_line(&mut buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = buf.trim();
            if text.is_empty() {
                continue;
            }
            let loc = format!("{}:line {}", self.label, self.line);
            return Some(match serde_json::from_str::<Record>(text) {
                Ok(Record::Draw(d)) => {
                    d.validate(self.header.data.n(), self.header.grid.v()).map(|()| d)
                }
                Ok(Record::Header(_)) => Err(Error::parse(loc, "unexpected second header")),
                Err(e) => Err(Error::parse(loc, e.to_string())),
            });
        }
    }
}

impl<R: BufRead> Iterator for DrawReader<R> {
    type Item = Result<DrawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_draw()
    }
}

/// Loads an entire store into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<(StoreHeader, Vec<DrawRecord>)> {
    let mut reader = DrawReader::open(path)?;
    let header = reader.header().clone();
    let draws: Result<Vec<DrawRecord>> = reader.by_ref().collect();
    Ok((header, draws?))
}
