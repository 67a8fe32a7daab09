//! Combined experimental/observational samples.
//!
//! A [`Dataset`] holds `(y, d, g, x, w)` records where `g` marks whether the
//! record comes from the randomized arm (`exp`) or the self-selection arm
//! (`obs`). Covariates are finite categorical cells.

mod grid;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{GridPolicy, OutcomeGrid, StepCdf, CDF_TERMINAL_TOL};

/// Cell label used when the input has no covariate column.
pub const DEFAULT_CELL: &str = "ALL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exp,
    Obs,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Exp, Source::Obs];
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Exp => f.write_str("exp"),
            Source::Obs => f.write_str("obs"),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exp" => Ok(Source::Exp),
            "obs" => Ok(Source::Obs),
            other => Err(Error::invalid(format!("source must be exp or obs, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub y: f64,
    pub d: u8,
    pub g: Source,
    pub x: String,
    pub w: f64,
}

impl ObservationRecord {
    pub fn new(y: f64, d: u8, g: Source, x: impl Into<String>, w: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::invalid("outcome must be finite"));
        }
        if d > 1 {
            return Err(Error::invalid(format!("treatment must be 0 or 1, got {d}")));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("weight must be finite and nonnegative, got {w}")));
        }
        Ok(Self {
            y,
            d,
            g,
            x: x.into(),
            w,
        })
    }

    /// Unit-weight record.
    pub fn unit(y: f64, d: u8, g: Source, x: impl Into<String>) -> Result<Self> {
        Self::new(y, d, g, x, 1.0)
    }
}

/// Immutable collection of observation records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    covariate_cells: BTreeSet<String>,
    x_marginal: Option<BTreeMap<String, f64>>,
}

impl Dataset {
    pub fn new(records: Vec<ObservationRecord>) -> Self {
        let covariate_cells = records.iter().map(|r| r.x.clone()).collect();
        Self {
            records,
            covariate_cells,
            x_marginal: None,
        }
    }

    /// Attaches an externally known covariate distribution.
    pub fn with_x_marginal(mut self, marginal: BTreeMap<String, f64>) -> Result<Self> {
        let keys: BTreeSet<&String> = marginal.keys().collect();
        let cells: BTreeSet<&String> = self.covariate_cells.iter().collect();
        if keys != cells {
            return Err(Error::invalid(
                "covariate marginal must cover exactly the observed cells",
            ));
        }
        if marginal.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("covariate marginal probabilities must be nonnegative"));
        }
        let total: f64 = marginal.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "covariate marginal sums to {total}, expected 1"
            )));
        }
        self.x_marginal = Some(marginal);
        Ok(self)
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn covariate_cells(&self) -> &BTreeSet<String> {
        &self.covariate_cells
    }

    pub fn x_marginal(&self) -> Option<&BTreeMap<String, f64>> {
        self.x_marginal.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total weight of records matching `pred`.
    pub fn weight_where(&self, pred: impl Fn(&ObservationRecord) -> bool) -> f64 {
        self.records.iter().filter(|r| pred(r)).map(|r| r.w).sum()
    }

    /// `P(X = x)`: the supplied marginal, or pooled weighted cell frequencies.
    pub fn cell_probabilities(&self) -> Result<BTreeMap<String, f64>> {
        if let Some(m) = &self.x_marginal {
            return Ok(m.clone());
        }
        let total = self.weight_where(|_| true);
        if total <= 0.0 {
            return Err(Error::Empty("dataset has no positive-weight records".into()));
        }
        Ok(self
            .covariate_cells
            .iter()
            .map(|x| (x.clone(), self.weight_where(|r| &r.x == x) / total))
            .collect())
    }

    /// Cell probabilities within one data source, `P(X = x | G = g)`.
    pub fn cell_probabilities_in(&self, g: Source) -> Result<BTreeMap<String, f64>> {
        let total = self.weight_where(|r| r.g == g);
        if total <= 0.0 {
            return Err(Error::ZeroProbability(format!("no records with g={g}")));
        }
        Ok(self
            .covariate_cells
            .iter()
            .map(|x| (x.clone(), self.weight_where(|r| r.g == g && &r.x == x) / total))
            .collect())
    }
}

/// Column names for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub y: String,
    pub d: String,
    pub g: String,
    pub x: Option<String>,
    pub w: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            y: "y".into(),
            d: "d".into(),
            g: "g".into(),
            x: Some("x".into()),
            w: Some("w".into()),
        }
    }
}

/// Reads a header-led CSV. `x` and `w` columns are optional; a missing `x`
/// puts every record in the single cell [`DEFAULT_CELL`]. Row numbers in
/// errors are 1-based data rows (the header is row 0).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl std::io::Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let y_col = col(&schema.y).ok_or_else(|| Error::MissingColumn(schema.y.clone()))?;
    let d_col = col(&schema.d).ok_or_else(|| Error::MissingColumn(schema.d.clone()))?;
    let g_col = col(&schema.g).ok_or_else(|| Error::MissingColumn(schema.g.clone()))?;
    let x_col = schema.x.as_deref().and_then(col);
    let w_col = schema.w.as_deref().and_then(col);

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let bad = |message: String| Error::MalformedRow { row: row_no, message };
        let field = |c: usize| row.get(c).unwrap_or("");

        let y: f64 = field(y_col)
            .parse()
            .map_err(|_| bad(format!("non-numeric y `{}`", field(y_col))))?;
        let d = match field(d_col) {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("d must be 0 or 1, got `{other}`"))),
        };
        let g: Source = field(g_col)
            .parse()
            .map_err(|_| bad(format!("g must be exp or obs, got `{}`", field(g_col))))?;
        let x = x_col.map_or(DEFAULT_CELL.to_string(), |c| field(c).to_string());
        let w = match w_col {
            Some(c) if !field(c).is_empty() => field(c)
                .parse::<f64>()
                .map_err(|_| bad(format!("non-numeric w `{}`", field(c))))?,
            _ => 1.0,
        };
        let rec = ObservationRecord::new(y, d, g, x, w).map_err(|e| bad(e.to_string()))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Empty("csv contains no data rows".into()));
    }
    Ok(Dataset::new(records))
}

/// Writes records in the layout [`load_csv`] reads back.
pub fn write_csv(ds: &Dataset, writer: impl std::io::Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["y", "d", "g", "x", "w"])?;
    for r in ds.records() {
        wtr.write_record([
            format!("{:?}", r.y),
            r.d.to_string(),
            r.g.to_string(),
            r.x.clone(),
            format!("{:?}", r.w),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Reads a covariate marginal file with columns `x`, `p`.
pub fn load_x_marginal(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let x_col = headers
        .iter()
        .position(|h| h == "x")
        .ok_or_else(|| Error::MissingColumn("x".into()))?;
    let p_col = headers
        .iter()
        .position(|h| h == "p")
        .ok_or_else(|| Error::MissingColumn("p".into()))?;
    let mut out = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let p: f64 = row.get(p_col).unwrap_or("").parse().map_err(|_| Error::MalformedRow {
            row: i + 1,
            message: "non-numeric p".into(),
        })?;
        out.insert(row.get(x_col).unwrap_or("").to_string(), p);
    }
    Ok(out)
}

/// Record counts for one covariate cell, indexed `counts[d][g]` with `g` in
/// [`Source::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOverlap {
    pub cell: String,
    pub counts: [[usize; 2]; 2],
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub cells: Vec<CellOverlap>,
    pub pass: bool,
    pub failing_cells: Vec<String>,
}

/// Checks that every cell has positive-weight records for all four `(d, g)`
/// combinations. An empty dataset fails.
pub fn validate_overlap(ds: &Dataset) -> OverlapReport {
    let mut cells = Vec::new();
    for x in ds.covariate_cells() {
        let mut counts = [[0usize; 2]; 2];
        for r in ds.records().iter().filter(|r| &r.x == x && r.w > 0.0) {
            counts[r.d as usize][r.g as usize] += 1;
        }
        let pass = counts.iter().flatten().all(|&c| c > 0);
        cells.push(CellOverlap {
            cell: x.clone(),
            counts,
            pass,
        });
    }
    let failing_cells: Vec<String> = cells
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.cell.clone())
        .collect();
    OverlapReport {
        pass: !cells.is_empty() && failing_cells.is_empty(),
        cells,
        failing_cells,
    }
}

/// Weighted empirical CDF of `y` among records matching `condition`,
/// on the grid of their distinct outcome values.
pub fn empirical_step_cdf(
    ds: &Dataset,
    condition: impl Fn(&ObservationRecord) -> bool,
    label: &str,
) -> Result<StepCdf> {
    let matching: Vec<&ObservationRecord> =
        ds.records().iter().filter(|r| condition(r) && r.w > 0.0).collect();
    if matching.is_empty() {
        return Err(Error::EmptyCondition(label.to_string()));
    }
    let grid = OutcomeGrid::from_values(matching.iter().map(|r| r.y))?;
    empirical_cdf_on_grid(matching.into_iter(), &grid, label)
}

/// Weighted empirical CDF on a prescribed grid. Each outcome is assigned to
/// its nearest grid point, which is exact when the grid contains every
/// observed value.
pub fn empirical_cdf_on_grid<'a>(
    records: impl Iterator<Item = &'a ObservationRecord>,
    grid: &OutcomeGrid,
    label: &str,
) -> Result<StepCdf> {
    let mut masses = vec![0.0; grid.len()];
    for r in records {
        masses[grid.nearest_index(r.y)] += r.w;
    }
    if masses.iter().sum::<f64>() <= 0.0 {
        return Err(Error::EmptyCondition(label.to_string()));
    }
    StepCdf::from_masses(grid.clone(), &masses)
}

/// Builds an outcome grid from the observed outcomes.
pub fn build_grid(ds: &Dataset, policy: GridPolicy) -> Result<OutcomeGrid> {
    if ds.is_empty() {
        return Err(Error::Empty("cannot build a grid from an empty dataset".into()));
    }
    let ys = ds.records().iter().map(|r| r.y);
    match policy {
        GridPolicy::UnionOfObserved => OutcomeGrid::from_values(ys),
        GridPolicy::EqualWidth(k) => {
            if k < 2 {
                return Err(Error::invalid("equal-width grid needs k >= 2"));
            }
            let lo = ys.clone().fold(f64::INFINITY, f64::min);
            let hi = ys.fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                return OutcomeGrid::new(vec![lo]);
            }
            let width = (hi - lo) / k as f64;
            OutcomeGrid::new((0..k).map(|j| lo + (j as f64 + 0.5) * width).collect())
        }
        GridPolicy::Quantile(k) => {
            if k < 2 {
                return Err(Error::invalid("quantile grid needs k >= 2"));
            }
            let ecdf = empirical_step_cdf(ds, |_| true, "all records")?;
            OutcomeGrid::from_values((0..k).map(|j| ecdf.quantile((j as f64 + 0.5) / k as f64)))
        }
    }
}
