//! Outcome grids and right-continuous step CDFs carried on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the terminal value of a CDF.
pub const CDF_TERMINAL_TOL: f64 = 1e-12;

/// Strictly increasing, nonempty list of support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OutcomeGrid {
    points: Vec<f64>,
}

impl OutcomeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("outcome grid must be nonempty"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("outcome grid points must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("outcome grid must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// Sorts and deduplicates arbitrary finite values into a grid.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut points: Vec<f64> = values.into_iter().collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index of the largest grid point `<= y`, or `None` below the support.
    pub fn floor_index(&self, y: f64) -> Option<usize> {
        let n = self.points.partition_point(|&p| p <= y);
        n.checked_sub(1)
    }

    /// Index of the nearest grid point; ties go to the lower point.
    pub fn nearest_index(&self, y: f64) -> usize {
        let hi = self.points.partition_point(|&p| p < y);
        if hi == 0 {
            return 0;
        }
        if hi == self.points.len() {
            return hi - 1;
        }
        if y - self.points[hi - 1] <= self.points[hi] - y {
            hi - 1
        } else {
            hi
        }
    }
}

impl TryFrom<Vec<f64>> for OutcomeGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<OutcomeGrid> for Vec<f64> {
    fn from(grid: OutcomeGrid) -> Self {
        grid.points
    }
}

/// Grid construction policy for [`crate::dataset::build_grid`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPolicy {
    #[default]
    UnionOfObserved,
    EqualWidth(usize),
    Quantile(usize),
}

impl std::str::FromStr for GridPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_k = |k: &str| {
            k.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad grid size `{k}`")))
        };
        match s.split_once(':') {
            None if s == "union" => Ok(GridPolicy::UnionOfObserved),
            Some(("equal", k)) => Ok(GridPolicy::EqualWidth(parse_k(k)?)),
            Some(("quantile", k)) => Ok(GridPolicy::Quantile(parse_k(k)?)),
            _ => Err(Error::invalid(format!(
                "unknown grid policy `{s}` (expected union | equal:<k> | quantile:<k>)"
            ))),
        }
    }
}

/// Right-continuous step CDF: `values[i] = P(Y <= grid[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCdf {
    grid: OutcomeGrid,
    values: Vec<f64>,
}

impl StepCdf {
    /// Validates the CDF invariants: nondecreasing, within `[0, 1]`, terminal value 1.
    pub fn new(grid: OutcomeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "cdf has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0 + CDF_TERMINAL_TOL).contains(v)) {
            return Err(Error::invalid("cdf values must lie in [0, 1]"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("cdf values must be nondecreasing"));
        }
        let last = values[values.len() - 1];
        if (last - 1.0).abs() > CDF_TERMINAL_TOL {
            return Err(Error::invalid(format!("cdf must end at 1, got {last}")));
        }
        Ok(Self { grid, values })
    }

    /// Builds a CDF from nonnegative masses, normalizing them to sum to one.
    pub fn from_masses(grid: OutcomeGrid, masses: &[f64]) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} masses for a grid of {} points",
                masses.len(),
                grid.len()
            )));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroProbability("all masses are zero".into()));
        }
        let mut acc = 0.0;
        let mut values: Vec<f64> = masses
            .iter()
            .map(|m| {
                acc += m;
                (acc / total).min(1.0)
            })
            .collect();
        let n = values.len();
        values[n - 1] = 1.0;
        Ok(Self { grid, values })
    }

    /// Point mass at a single value.
    pub fn point_mass(y: f64) -> Result<Self> {
        Self::new(OutcomeGrid::new(vec![y])?, vec![1.0])
    }

    pub fn grid(&self) -> &OutcomeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `F(y)`, zero below the first grid point.
    pub fn eval(&self, y: f64) -> f64 {
        self.grid.floor_index(y).map_or(0.0, |i| self.values[i])
    }

    /// `F` at grid index `i`; `None` is the below-support sentinel.
    pub fn at(&self, i: Option<usize>) -> f64 {
        i.map_or(0.0, |i| self.values[i])
    }

    /// Probability mass at each grid point.
    pub fn masses(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let m = v - prev;
                prev = v;
                m.max(0.0)
            })
            .collect()
    }

    /// Generalized inverse `inf{y : F(y) >= u}`.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.values.partition_point(|&v| v < u);
        self.grid.points()[i.min(self.grid.len() - 1)]
    }

    /// Evaluates this CDF on another grid by right-continuous step evaluation.
    pub fn on_grid(&self, grid: &OutcomeGrid) -> Result<StepCdf> {
        let values: Vec<f64> = grid.points().iter().map(|&y| self.eval(y)).collect();
        StepCdf::new(grid.clone(), values)
    }

    pub fn mean(&self) -> f64 {
        self.masses()
            .iter()
            .zip(self.grid.points())
            .map(|(m, y)| m * y)
            .sum()
    }

    /// Sup-norm distance between two CDFs over the union of their grids.
    pub fn sup_distance(&self, other: &StepCdf) -> f64 {
        self.grid
            .points()
            .iter()
            .chain(other.grid.points())
            .map(|&y| (self.eval(y) - other.eval(y)).abs())
            .fold(0.0, f64::max)
    }
}
