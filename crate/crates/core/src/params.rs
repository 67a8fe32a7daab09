//! Estimands `θ = E[ψ(Y1, Y0)]`, target populations, nuisance constants and
//! the grid materialization of `ψ`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, OutcomeGrid, Source};
use crate::error::{Error, Result};
use crate::identify::IdentifiedCdfSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum PsiFamily {
    /// `1{y1 > y0}`.
    FractionBenefit,
    /// `1{y1 < y0}`.
    FractionHarmed,
    /// `1{y1 - y0 <= δ}`.
    TeCdf(f64),
    /// `(y1 - y0) 1{y0 <= c} / P(Y0 <= c)`.
    AteDisadvantaged(f64),
    /// `1{y1 > c, y0 <= c} / P(Y0 <= c)`.
    UpwardMobility(f64),
    /// `(y1 - m1)(y0 - m0) / (σ1 σ0)`.
    Correlation,
    /// Rows indexed by the `Y1` grid, columns by the `Y0` grid.
    CustomTable(Vec<Vec<f64>>),
}

impl PsiFamily {
    /// Parses the command-line form. `custom:<path>` reads a headerless
    /// numeric CSV matrix.
    pub fn parse(s: &str) -> Result<Self> {
        let num = |v: &str| -> Result<f64> {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad number `{v}` in psi spec")))?;
            if !x.is_finite() {
                return Err(Error::invalid("psi parameter must be finite"));
            }
            Ok(x)
        };
        match s.split_once(':') {
            None => match s {
                "fraction-benefit" => Ok(PsiFamily::FractionBenefit),
                "fraction-harmed" => Ok(PsiFamily::FractionHarmed),
                "correlation" => Ok(PsiFamily::Correlation),
                _ => Err(Error::invalid(format!("unknown psi `{s}`"))),
            },
            Some(("te-cdf", v)) => Ok(PsiFamily::TeCdf(num(v)?)),
            Some(("ate-disadv", v)) => Ok(PsiFamily::AteDisadvantaged(num(v)?)),
            Some(("upward", v)) => Ok(PsiFamily::UpwardMobility(num(v)?)),
            Some(("custom", path)) => Ok(PsiFamily::CustomTable(load_custom_table(path)?)),
            _ => Err(Error::invalid(format!("unknown psi `{s}`"))),
        }
    }

    /// The threshold `c` for families that need `P(Y0 <= c)`.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            PsiFamily::AteDisadvantaged(c) | PsiFamily::UpwardMobility(c) => Some(*c),
            _ => None,
        }
    }
}

fn load_custom_table(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::MalformedRow {
                        row: i + 1,
                        message: format!("non-numeric psi value `{v}`"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("psi table {}", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Population {
    All,
    Selection(u8),
    Cell(String),
    Group(Source),
}

impl FromStr for Population {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('=') {
            None if s == "all" => Ok(Population::All),
            Some(("s", "0")) => Ok(Population::Selection(0)),
            Some(("s", "1")) => Ok(Population::Selection(1)),
            Some(("x", label)) if !label.is_empty() => Ok(Population::Cell(label.to_string())),
            Some(("g", g)) => Ok(Population::Group(g.parse()?)),
            _ => Err(Error::invalid(format!(
                "unknown population `{s}` (expected all | s=0 | s=1 | x=<label> | g=exp | g=obs)"
            ))),
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Population::All => f.write_str("all"),
            Population::Selection(s) => write!(f, "s={s}"),
            Population::Cell(x) => write!(f, "x={x}"),
            Population::Group(g) => write!(f, "g={g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub family: PsiFamily,
    pub population: Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    /// `P(Y0 <= c)` when the family has a threshold.
    pub p_y0_le_c: Option<f64>,
    pub mean_y1: f64,
    pub mean_y0: f64,
    pub var_y1: f64,
    pub var_y0: f64,
    /// Probability of the target population event.
    pub p_population: f64,
}

fn weighted_moments<'a>(it: impl Iterator<Item = (f64, f64)> + Clone + 'a) -> Option<(f64, f64)> {
    let total: f64 = it.clone().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let mean = it.clone().map(|(y, w)| y * w).sum::<f64>() / total;
    let var = it.map(|(y, w)| w * (y - mean).powi(2)).sum::<f64>() / total;
    Some((mean, var))
}

fn check_threshold_prob(family: &PsiFamily, p: Option<f64>) -> Result<()> {
    if family.threshold().is_some() && p.is_some_and(|p| p <= 0.0) {
        return Err(Error::ZeroProbability(
            "P(Y0 <= c) = 0; the estimand divides by it".into(),
        ));
    }
    Ok(())
}

/// Nuisance constants from the experimental arm; the population probability
/// from observed frequencies.
pub fn estimate_nuisances(ds: &Dataset, spec: &PsiSpec) -> Result<NuisanceSet> {
    let exp = |d: u8| {
        ds.records()
            .iter()
            .filter(move |r| r.g == Source::Exp && r.d == d)
            .map(|r| (r.y, r.w))
    };
    let (mean_y1, var_y1) = weighted_moments(exp(1))
        .ok_or_else(|| Error::EmptyCondition("d=1, g=exp".into()))?;
    let (mean_y0, var_y0) = weighted_moments(exp(0))
        .ok_or_else(|| Error::EmptyCondition("d=0, g=exp".into()))?;
    let p_y0_le_c = spec.family.threshold().map(|c| {
        let total: f64 = exp(0).map(|(_, w)| w).sum();
        exp(0).filter(|(y, _)| *y <= c).map(|(_, w)| w).sum::<f64>() / total
    });
    check_threshold_prob(&spec.family, p_y0_le_c)?;

    let total = ds.weight_where(|_| true);
    if total <= 0.0 {
        return Err(Error::Empty("dataset has no positive-weight records".into()));
    }
    let p_population = match &spec.population {
        Population::All => 1.0,
        Population::Selection(s) => ds.weight_where(|r| r.g == Source::Obs && r.d == *s) / total,
        Population::Cell(x) => ds.cell_probabilities()?.get(x).copied().unwrap_or(0.0),
        Population::Group(g) => ds.weight_where(|r| r.g == *g) / total,
    };
    if p_population <= 0.0 {
        return Err(Error::ZeroProbability(format!(
            "population {} has zero probability",
            spec.population
        )));
    }
    Ok(NuisanceSet {
        p_y0_le_c,
        mean_y1,
        mean_y0,
        var_y1,
        var_y0,
        p_population,
    })
}

impl NuisanceSet {
    /// Nuisances implied by an exact identified system: experimental
    /// marginals mixed over cells with `P(x)`.
    pub fn from_system(system: &IdentifiedCdfSystem, spec: &PsiSpec) -> Result<Self> {
        let moments = |d: usize| {
            let pts = system.grids[d].points();
            let mut mass = vec![0.0; pts.len()];
            for c in &system.cells {
                for (m, v) in mass.iter_mut().zip(c.experimental[d].masses()) {
                    *m += c.p_x * v;
                }
            }
            let mean: f64 = pts.iter().zip(&mass).map(|(y, m)| y * m).sum();
            let var: f64 = pts.iter().zip(&mass).map(|(y, m)| m * (y - mean).powi(2)).sum();
            (mean, var, mass)
        };
        let (mean_y1, var_y1, _) = moments(1);
        let (mean_y0, var_y0, mass0) = moments(0);
        let p_y0_le_c = spec.family.threshold().map(|c| {
            system.grids[0]
                .points()
                .iter()
                .zip(&mass0)
                .filter(|(y, _)| **y <= c)
                .map(|(_, m)| m)
                .sum::<f64>()
        });
        check_threshold_prob(&spec.family, p_y0_le_c)?;
        let weights = population_weight(&spec.population, system, None)?;
        Ok(NuisanceSet {
            p_y0_le_c,
            mean_y1,
            mean_y0,
            var_y1,
            var_y0,
            p_population: weights.normalizer,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Monotonicity of `φ` in each argument. A set `{φ <= δ}` is a down-set once
/// every decreasing axis is reversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientation {
    pub y1: Direction,
    pub y0: Direction,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::new(Direction::Increasing, Direction::Increasing),
        Orientation::new(Direction::Increasing, Direction::Decreasing),
        Orientation::new(Direction::Decreasing, Direction::Increasing),
        Orientation::new(Direction::Decreasing, Direction::Decreasing),
    ];

    pub const fn new(y1: Direction, y0: Direction) -> Self {
        Self { y1, y0 }
    }

    /// Grid index of oriented position `r` on an axis of length `n`.
    pub fn map(dir: Direction, r: usize, n: usize) -> usize {
        match dir {
            Direction::Increasing => r,
            Direction::Decreasing => n - 1 - r,
        }
    }
}

/// Functional forms of `φ` for treatment-effect events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiForm {
    /// `φ = y1 - y0`.
    Difference,
    /// `φ = y0 - y1`.
    ReverseDifference,
}

impl PhiForm {
    pub fn eval(self, y1: f64, y0: f64) -> f64 {
        match self {
            PhiForm::Difference => y1 - y0,
            PhiForm::ReverseDifference => y0 - y1,
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            PhiForm::Difference => Orientation::new(Direction::Increasing, Direction::Decreasing),
            PhiForm::ReverseDifference => {
                Orientation::new(Direction::Decreasing, Direction::Increasing)
            }
        }
    }
}

/// `ψ = 1{φ <= δ}`, or its complement when `complement` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    pub form: PhiForm,
    pub delta: f64,
    pub complement: bool,
}

impl PhiSpec {
    pub fn indicator(&self, y1: f64, y0: f64) -> f64 {
        let inside = self.form.eval(y1, y0) <= self.delta;
        if inside != self.complement {
            1.0
        } else {
            0.0
        }
    }

    /// Level set of `{φ <= δ}` on a grid pair.
    pub fn level_set(&self, grid1: &OutcomeGrid, grid0: &OutcomeGrid) -> LevelSet {
        let member: Vec<Vec<bool>> = grid1
            .points()
            .iter()
            .map(|&y1| {
                grid0
                    .points()
                    .iter()
                    .map(|&y0| self.form.eval(y1, y0) <= self.delta)
                    .collect()
            })
            .collect();
        let mut set = LevelSet::from_membership(&member, self.form.orientation())
            .expect("difference level sets are monotone");
        set.complement = self.complement;
        set
    }
}

/// A down-set of the oriented grid, possibly complemented. `ends[r]` is the
/// last oriented column in oriented row `r`, `None` when the row is empty;
/// `ends` is nonincreasing in `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub orientation: Orientation,
    pub complement: bool,
    pub ends: Vec<Option<usize>>,
    pub n0: usize,
}

impl LevelSet {
    /// Checks that `member` (rows `y1`, columns `y0`) is a down-set under
    /// `orientation` and records its row ends.
    pub fn from_membership(member: &[Vec<bool>], orientation: Orientation) -> Option<Self> {
        let n1 = member.len();
        let n0 = member.first().map_or(0, Vec::len);
        let mut ends = Vec::with_capacity(n1);
        let mut prev: Option<Option<usize>> = None;
        for r in 0..n1 {
            let row = &member[Orientation::map(orientation.y1, r, n1)];
            let oriented = |c: usize| row[Orientation::map(orientation.y0, c, n0)];
            let len = (0..n0).take_while(|&c| oriented(c)).count();
            if (len..n0).any(oriented) {
                return None;
            }
            let end = len.checked_sub(1);
            if let Some(p) = prev {
                if end > p {
                    return None;
                }
            }
            prev = Some(end);
            ends.push(end);
        }
        Some(Self {
            orientation,
            complement: false,
            ends,
            n0,
        })
    }

    /// Recognizes a 0/1 table as an indicator of a monotone level set or of
    /// its complement. `preferred` is tried first.
    pub fn detect(values: &[Vec<f64>], preferred: Option<Orientation>) -> Option<Self> {
        if values.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
            return None;
        }
        let ones: Vec<Vec<bool>> = values
            .iter()
            .map(|r| r.iter().map(|&v| v == 1.0).collect())
            .collect();
        let zeros: Vec<Vec<bool>> = ones
            .iter()
            .map(|r| r.iter().map(|b| !b).collect())
            .collect();
        let order = preferred.into_iter().chain(Orientation::ALL);
        for o in order {
            if let Some(s) = Self::from_membership(&ones, o) {
                return Some(s);
            }
            if let Some(mut s) = Self::from_membership(&zeros, o) {
                s.complement = true;
                return Some(s);
            }
        }
        None
    }

    /// Whether grid cell `(i, j)` lies in the down-set (ignoring `complement`).
    pub fn contains_down(&self, i: usize, j: usize) -> bool {
        let n1 = self.ends.len();
        let r = Orientation::map(self.orientation.y1, i, n1);
        let c = Orientation::map(self.orientation.y0, j, self.n0);
        self.ends[r].is_some_and(|e| c <= e)
    }

    /// Value of the indicator `ψ` at `(i, j)`.
    pub fn indicator(&self, i: usize, j: usize) -> bool {
        self.contains_down(i, j) != self.complement
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PsiShape {
    SuperModular,
    SubModular,
    PhiIndicator { level_set: LevelSet },
    General,
}

impl PsiShape {
    pub fn name(&self) -> &'static str {
        match self {
            PsiShape::SuperModular => "super-modular",
            PsiShape::SubModular => "sub-modular",
            PsiShape::PhiIndicator { .. } => "phi-indicator",
            PsiShape::General => "general",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiTable {
    pub grid1: OutcomeGrid,
    pub grid0: OutcomeGrid,
    /// `values[i][j] = ψ(grid1[i], grid0[j])`.
    pub values: Vec<Vec<f64>>,
    pub shape: PsiShape,
    pub phi_spec: Option<PhiSpec>,
}

/// Largest and smallest adjacent 2x2 minor, relative to the table scale.
fn minor_range(values: &[Vec<f64>]) -> (f64, f64, f64) {
    let scale = values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for i in 1..values.len() {
        for j in 1..values[i].len() {
            let m = values[i][j] + values[i - 1][j - 1] - values[i - 1][j] - values[i][j - 1];
            lo = lo.min(m);
            hi = hi.max(m);
        }
    }
    (lo, hi, scale * 1e-12)
}

/// Grid classification from adjacent 2x2 minors, then an indicator level-set
/// scan for tables that are neither super- nor sub-modular.
pub fn classify_shape(values: &[Vec<f64>]) -> PsiShape {
    let (lo, hi, tol) = minor_range(values);
    if lo >= -tol {
        return PsiShape::SuperModular;
    }
    if hi <= tol {
        return PsiShape::SubModular;
    }
    match LevelSet::detect(values, None) {
        Some(level_set) => PsiShape::PhiIndicator { level_set },
        None => PsiShape::General,
    }
}

impl PsiTable {
    /// Wraps an arbitrary table and classifies it.
    pub fn new(grid1: OutcomeGrid, grid0: OutcomeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        check_dims(&grid1, &grid0, &values)?;
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("psi values must be finite"));
        }
        let shape = classify_shape(&values);
        Ok(Self {
            grid1,
            grid0,
            values,
            shape,
            phi_spec: None,
        })
    }

    /// Indicator table `1{φ <= δ}` (or complement) with its level set attached.
    pub fn from_phi(grid1: OutcomeGrid, grid0: OutcomeGrid, phi: PhiSpec) -> Self {
        let values = grid1
            .points()
            .iter()
            .map(|&y1| grid0.points().iter().map(|&y0| phi.indicator(y1, y0)).collect())
            .collect();
        let level_set = phi.level_set(&grid1, &grid0);
        Self {
            grid1,
            grid0,
            values,
            shape: PsiShape::PhiIndicator { level_set },
            phi_spec: Some(phi),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.grid1.len(), self.grid0.len())
    }

    /// Verifies that the declared shape holds on the grid.
    pub fn check_shape(&self) -> bool {
        let (lo, hi, tol) = minor_range(&self.values);
        match &self.shape {
            PsiShape::SuperModular => lo >= -tol,
            PsiShape::SubModular => hi <= tol,
            PsiShape::PhiIndicator { level_set } => {
                let (n1, n0) = self.dims();
                level_set.ends.len() == n1
                    && level_set.n0 == n0
                    && (0..n1).all(|i| {
                        (0..n0).all(|j| {
                            let v = if level_set.indicator(i, j) { 1.0 } else { 0.0 };
                            self.values[i][j] == v
                        })
                    })
                    && LevelSet::from_membership(
                        &(0..n1)
                            .map(|i| (0..n0).map(|j| level_set.contains_down(i, j)).collect())
                            .collect::<Vec<_>>(),
                        level_set.orientation,
                    )
                    .is_some()
            }
            PsiShape::General => true,
        }
    }

    /// Min and max of the table entries.
    pub fn range(&self) -> (f64, f64) {
        self.values.iter().flatten().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }
}

fn check_dims(grid1: &OutcomeGrid, grid0: &OutcomeGrid, values: &[Vec<f64>]) -> Result<()> {
    if values.len() != grid1.len() || values.iter().any(|r| r.len() != grid0.len()) {
        return Err(Error::ShapeMismatch(format!(
            "psi table is not {}x{}",
            grid1.len(),
            grid0.len()
        )));
    }
    Ok(())
}

fn required_p(nuis: &NuisanceSet) -> Result<f64> {
    match nuis.p_y0_le_c {
        Some(p) if p > 0.0 => Ok(p),
        _ => Err(Error::ZeroProbability(
            "P(Y0 <= c) must be positive for this estimand".into(),
        )),
    }
}

fn table(grid1: &OutcomeGrid, grid0: &OutcomeGrid, f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
    grid1
        .points()
        .iter()
        .map(|&y1| grid0.points().iter().map(|&y0| f(y1, y0)).collect())
        .collect()
}

/// Evaluates `ψ` on the grid pair and attaches its shape.
pub fn materialize_psi(
    spec: &PsiSpec,
    nuis: &NuisanceSet,
    grid1: &OutcomeGrid,
    grid0: &OutcomeGrid,
) -> Result<PsiTable> {
    let (g1, g0) = (grid1.clone(), grid0.clone());
    match &spec.family {
        PsiFamily::FractionBenefit => Ok(PsiTable::from_phi(
            g1,
            g0,
            PhiSpec {
                form: PhiForm::Difference,
                delta: 0.0,
                complement: true,
            },
        )),
        PsiFamily::FractionHarmed => Ok(PsiTable::from_phi(
            g1,
            g0,
            PhiSpec {
                form: PhiForm::ReverseDifference,
                delta: 0.0,
                complement: true,
            },
        )),
        PsiFamily::TeCdf(delta) => Ok(PsiTable::from_phi(
            g1,
            g0,
            PhiSpec {
                form: PhiForm::Difference,
                delta: *delta,
                complement: false,
            },
        )),
        PsiFamily::AteDisadvantaged(c) => {
            let p = required_p(nuis)?;
            let c = *c;
            let v = table(grid1, grid0, |y1, y0| if y0 <= c { (y1 - y0) / p } else { 0.0 });
            PsiTable::new(g1, g0, v)
        }
        PsiFamily::UpwardMobility(c) => {
            let p = required_p(nuis)?;
            let c = *c;
            let v = table(grid1, grid0, |y1, y0| {
                if y1 > c && y0 <= c {
                    1.0 / p
                } else {
                    0.0
                }
            });
            PsiTable::new(g1, g0, v)
        }
        PsiFamily::Correlation => {
            let sd = (nuis.var_y1 * nuis.var_y0).sqrt();
            if sd <= 0.0 {
                return Err(Error::ZeroProbability(
                    "correlation needs positive outcome variances".into(),
                ));
            }
            let (m1, m0) = (nuis.mean_y1, nuis.mean_y0);
            let v = table(grid1, grid0, |y1, y0| (y1 - m1) * (y0 - m0) / sd);
            Ok(PsiTable {
                grid1: g1,
                grid0: g0,
                values: v,
                shape: PsiShape::SuperModular,
                phi_spec: None,
            })
        }
        PsiFamily::CustomTable(values) => PsiTable::new(g1, g0, values.clone()),
    }
}

/// Weight of one `(s, x)` cell in the target population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub x: String,
    pub s: u8,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationWeights {
    pub population: Population,
    /// Ordered by system cell, then `s = 0, 1`.
    pub cells: Vec<CellWeight>,
    /// Probability of the population event.
    pub normalizer: f64,
}

impl PopulationWeights {
    pub fn get(&self, x: &str, s: u8) -> f64 {
        self.cells
            .iter()
            .find(|c| c.x == x && c.s == s)
            .map_or(0.0, |c| c.weight)
    }

    /// Per-`x` weights `Σ_s w(s, x)`, for the experimental-only regime.
    pub fn by_x(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for c in &self.cells {
            match out.iter_mut().find(|(x, _)| *x == c.x) {
                Some((_, w)) => *w += c.weight,
                None => out.push((c.x.clone(), c.weight)),
            }
        }
        out
    }
}

/// Population weights over `(s, x)` cells. `Group` populations use the
/// observed cell frequencies of that arm when a dataset is supplied, and
/// `P(x)` otherwise.
pub fn population_weight(
    pop: &Population,
    system: &IdentifiedCdfSystem,
    ds: Option<&Dataset>,
) -> Result<PopulationWeights> {
    let p_s = |s: u8| -> f64 { system.cells.iter().map(|c| c.p_x * c.p_s(s)).sum() };
    let group_px = match (pop, ds) {
        (Population::Group(g), Some(ds)) => Some(ds.cell_probabilities_in(*g)?),
        _ => None,
    };
    let normalizer = match pop {
        Population::All => 1.0,
        Population::Selection(s) => p_s(*s),
        Population::Cell(x) => system
            .cell(x)
            .map(|c| c.p_x)
            .ok_or_else(|| Error::invalid(format!("unknown covariate cell `{x}`")))?,
        Population::Group(g) => match ds {
            Some(ds) => {
                let total = ds.weight_where(|_| true);
                ds.weight_where(|r| r.g == *g) / total
            }
            None => 1.0,
        },
    };
    if normalizer <= 0.0 {
        return Err(Error::ZeroProbability(format!("population {pop} has zero probability")));
    }
    let mut cells = Vec::with_capacity(2 * system.cells.len());
    for c in &system.cells {
        for s in [0u8, 1] {
            let weight = match pop {
                Population::All => c.p_s(s) * c.p_x,
                Population::Selection(t) if *t == s => c.p_s(s) * c.p_x / normalizer,
                Population::Selection(_) => 0.0,
                Population::Cell(x) if *x == c.x => c.p_s(s),
                Population::Cell(_) => 0.0,
                Population::Group(_) => {
                    let px = group_px
                        .as_ref()
                        .map_or(c.p_x, |m| m.get(&c.x).copied().unwrap_or(0.0));
                    c.p_s(s) * px
                }
            };
            cells.push(CellWeight {
                x: c.x.clone(),
                s,
                weight,
            });
        }
    }
    Ok(PopulationWeights {
        population: pop.clone(),
        cells,
        normalizer,
    })
}
