//! Reference populations with known joint distributions, a sampler for
//! doubly randomized preference trials, and independent oracles.

pub mod oracles;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ObservationRecord, OutcomeGrid, Source, StepCdf, DEFAULT_CELL};
use crate::error::{Error, Result};
use crate::identify::{CellSystem, IdentifiedCdfSystem};
use crate::params::{PopulationWeights, PsiTable};

/// Piecewise-uniform population on `[-1, 1]²` with `P(S = 1) = 1/2`.
///
/// Given `S = 1`, `(Y1, Y0)` is uniform on `(0,1]×[-1,0]` with mass `a` and
/// on `[-1,0]×(0,1]` with mass `b`; `S = 0` swaps `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockPopulation {
    pub a: f64,
    pub b: f64,
    pub p_s1: f64,
}

pub fn block_population(a: f64, b: f64) -> Result<BlockPopulation> {
    if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "need a, b >= 0 with a + b = 1, got ({a}, {b})"
        )));
    }
    Ok(BlockPopulation { a, b, p_s1: 0.5 })
}

impl BlockPopulation {
    /// Masses of the two off-diagonal blocks given `S = s`: the first is the
    /// block `y1 > 0 >= y0`, the second `y1 <= 0 < y0`.
    pub fn block_masses(&self, s: u8) -> (f64, f64) {
        if s == 1 {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }

    /// Conditional density of `(Y1, Y0)` given `S = s`.
    pub fn density(&self, s: u8, y1: f64, y0: f64) -> f64 {
        let inside = |v: f64| (-1.0..=1.0).contains(&v);
        if !inside(y1) || !inside(y0) {
            return 0.0;
        }
        let (up, down) = self.block_masses(s);
        if y1 > 0.0 && y0 <= 0.0 {
            up
        } else if y1 <= 0.0 && y0 > 0.0 {
            down
        } else {
            0.0
        }
    }

    /// Unconditional density, the `S` mixture of the conditional ones.
    pub fn joint_density(&self, y1: f64, y0: f64) -> f64 {
        self.p_s1 * self.density(1, y1, y0) + (1.0 - self.p_s1) * self.density(0, y1, y0)
    }

    /// `F_{Y_d | S = s}(y)`.
    pub fn cdf(&self, d: u8, s: u8, y: f64) -> f64 {
        let y = y.clamp(-1.0, 1.0);
        let (up, down) = self.block_masses(s);
        // mass of Y_d on [-1, 0] and on (0, 1]
        let (neg, pos) = if d == 1 { (down, up) } else { (up, down) };
        neg * (1.0 + y.min(0.0)) + pos * y.max(0.0)
    }

    /// `F_{Y_d}(y)`, uniform on `[-1, 1]`.
    pub fn marginal_cdf(&self, d: u8, y: f64) -> f64 {
        self.p_s1 * self.cdf(d, 1, y) + (1.0 - self.p_s1) * self.cdf(d, 0, y)
    }
}

/// One `(s, x)` cell of a [`SyntheticPopulation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationCell {
    pub x: String,
    pub s: u8,
    /// Joint masses `P(Y1 = grid1[i], Y0 = grid0[j], S = s, X = x)`.
    pub pmf: Vec<Vec<f64>>,
}

impl PopulationCell {
    pub fn prob(&self) -> f64 {
        self.pmf.iter().flatten().sum()
    }

    /// Masses of `Y_d` in this cell (not normalized).
    pub fn margin(&self, d: u8) -> Vec<f64> {
        if d == 1 {
            self.pmf.iter().map(|r| r.iter().sum()).collect()
        } else {
            let n0 = self.pmf.first().map_or(0, Vec::len);
            (0..n0).map(|j| self.pmf.iter().map(|r| r[j]).sum()).collect()
        }
    }
}

/// A finite population with a known joint distribution of `(Y1, Y0, S, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub grid1: OutcomeGrid,
    pub grid0: OutcomeGrid,
    pub cells: Vec<PopulationCell>,
    /// Named true parameter values, recorded for fixtures.
    #[serde(default)]
    pub truths: BTreeMap<String, f64>,
}

impl SyntheticPopulation {
    pub fn new(grid1: OutcomeGrid, grid0: OutcomeGrid, cells: Vec<PopulationCell>) -> Result<Self> {
        for c in &cells {
            if c.pmf.len() != grid1.len() || c.pmf.iter().any(|r| r.len() != grid0.len()) {
                return Err(Error::ShapeMismatch(format!(
                    "cell (x={}, s={}) pmf does not match the grids",
                    c.x, c.s
                )));
            }
            if c.pmf.iter().flatten().any(|m| !m.is_finite() || *m < 0.0) {
                return Err(Error::invalid("population masses must be nonnegative"));
            }
            if c.s > 1 {
                return Err(Error::invalid("s must be 0 or 1"));
            }
        }
        let pop = Self {
            grid1,
            grid0,
            cells,
            truths: BTreeMap::new(),
        };
        let total = pop.total_mass();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("population mass is {total}, not 1")));
        }
        Ok(pop)
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(PopulationCell::prob).sum()
    }

    /// Covariate labels in first-appearance order.
    pub fn covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.x) {
                out.push(c.x.clone());
            }
        }
        out
    }

    /// The exact identified system implied by the population. Cells are
    /// ordered by label so the layout matches a system identified from data.
    pub fn identified_system(&self) -> Result<IdentifiedCdfSystem> {
        let mut xs = self.covariates();
        xs.sort();
        let grids = [self.grid0.clone(), self.grid1.clone()];
        let mut cells = Vec::with_capacity(xs.len());
        for x in xs {
            let xr = x.as_str();
            let by_s = |s: u8| self.cells.iter().filter(move |c| c.x == xr && c.s == s);
            let margin = |s: u8, d: u8| -> Vec<f64> {
                let n = grids[d as usize].len();
                by_s(s).fold(vec![0.0; n], |mut acc, c| {
                    for (a, m) in acc.iter_mut().zip(c.margin(d)) {
                        *a += m;
                    }
                    acc
                })
            };
            let p = [0u8, 1].map(|s| by_s(s).map(PopulationCell::prob).sum::<f64>());
            let p_x = p[0] + p[1];
            if p_x <= 0.0 {
                continue;
            }
            let experimental = [0u8, 1].map(|d| {
                let m: Vec<f64> = margin(0, d)
                    .iter()
                    .zip(margin(1, d))
                    .map(|(a, b)| a + b)
                    .collect();
                StepCdf::from_masses(grids[d as usize].clone(), &m)
            });
            let [e0, e1] = experimental;
            let experimental = [e0?, e1?];
            let cond = |d: u8, s: u8| -> Result<StepCdf> {
                if p[s as usize] > 0.0 {
                    StepCdf::from_masses(grids[d as usize].clone(), &margin(s, d))
                } else {
                    Ok(experimental[d as usize].clone())
                }
            };
            let conditional = [[cond(0, 0)?, cond(0, 1)?], [cond(1, 0)?, cond(1, 1)?]];
            cells.push(CellSystem {
                x,
                p_x,
                p_s1: p[1] / p_x,
                experimental,
                conditional,
                mixture_residual: [0.0; 2],
            });
        }
        IdentifiedCdfSystem::from_cells(grids, cells)
    }

    /// `E[ψ]` over the weighted population: `Σ w(s,x) E[ψ | s, x]`.
    pub fn true_theta(&self, psi: &PsiTable, weights: &PopulationWeights) -> f64 {
        let mut theta = 0.0;
        for x in self.covariates() {
            for s in [0u8, 1] {
                let w = weights.get(&x, s);
                let cells: Vec<&PopulationCell> =
                    self.cells.iter().filter(|c| c.x == x && c.s == s).collect();
                let p: f64 = cells.iter().map(|c| c.prob()).sum();
                if w == 0.0 || p <= 0.0 {
                    continue;
                }
                let e: f64 = cells
                    .iter()
                    .flat_map(|c| {
                        c.pmf.iter().enumerate().flat_map(move |(i, r)| {
                            r.iter().enumerate().map(move |(j, m)| m * psi.get(i, j))
                        })
                    })
                    .sum();
                theta += w * e / p;
            }
        }
        theta
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pop: Self = serde_json::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        let truths = pop.truths.clone();
        let mut pop = Self::new(pop.grid1, pop.grid0, pop.cells)?;
        pop.truths = truths;
        Ok(pop)
    }
}

/// Midpoint grid of `k` points on `[-1, 1]`.
pub fn midpoint_grid(k: usize) -> OutcomeGrid {
    let h = 2.0 / k as f64;
    let pts = (0..k).map(|i| -1.0 + h * (i as f64 + 0.5)).collect();
    OutcomeGrid::new(pts).expect("midpoints are increasing")
}

/// Length of `[lo, hi] ∩ [a, b]`.
fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).max(0.0)
}

/// Discretizes the population on a `k × k` midpoint grid. Each grid point
/// carries the exact mass of its square cell, so block masses are kept.
pub fn discretize_population(pop: &BlockPopulation, k: usize) -> Result<SyntheticPopulation> {
    if k < 2 {
        return Err(Error::invalid("discretization needs k >= 2"));
    }
    let grid = midpoint_grid(k);
    let h = 2.0 / k as f64;
    let edge = |i: usize| (-1.0 + h * i as f64, -1.0 + h * (i + 1) as f64);
    let cells = [0u8, 1]
        .map(|s| {
            let p_s = if s == 1 { pop.p_s1 } else { 1.0 - pop.p_s1 };
            let (up, down) = pop.block_masses(s);
            let pmf = (0..k)
                .map(|i| {
                    let (a1, b1) = edge(i);
                    (0..k)
                        .map(|j| {
                            let (a0, b0) = edge(j);
                            let upper_block = overlap(a1, b1, 0.0, 1.0) * overlap(a0, b0, -1.0, 0.0);
                            let lower_block = overlap(a1, b1, -1.0, 0.0) * overlap(a0, b0, 0.0, 1.0);
                            p_s * (up * upper_block + down * lower_block)
                        })
                        .collect()
                })
                .collect();
            PopulationCell {
                x: DEFAULT_CELL.to_string(),
                s,
                pmf,
            }
        })
        .into_iter()
        .collect();
    SyntheticPopulation::new(grid.clone(), grid, cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    ExpTreat,
    ExpControl,
    SelfSelect,
}

/// Latent draw behind one emitted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub arm: Arm,
    pub s: u8,
    pub d: u8,
    pub y1: f64,
    pub y0: f64,
}

/// Draws a doubly randomized preference trial. The generator is ChaCha8
/// seeded through `seed_from_u64`, so a seed fixes the sample on every
/// platform.
pub fn sample_drpt(
    pop: &SyntheticPopulation,
    n: usize,
    arm_probs: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Vec<LedgerEntry>)> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    if arm_probs.iter().any(|p| *p < 0.0) || (arm_probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("arm probabilities must be nonnegative and sum to 1"));
    }
    let mut atoms = Vec::new();
    let mut cum = Vec::new();
    let mut acc = 0.0;
    for (c, cell) in pop.cells.iter().enumerate() {
        for (i, row) in cell.pmf.iter().enumerate() {
            for (j, &m) in row.iter().enumerate() {
                if m > 0.0 {
                    acc += m;
                    atoms.push((c, i, j));
                    cum.push(acc);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut ledger = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * acc;
        let k = cum.partition_point(|&c| c <= u).min(atoms.len() - 1);
        let (c, i, j) = atoms[k];
        let cell = &pop.cells[c];
        let (y1, y0) = (pop.grid1.points()[i], pop.grid0.points()[j]);
        let v: f64 = rng.gen();
        let arm = if v < arm_probs[0] {
            Arm::ExpTreat
        } else if v < arm_probs[0] + arm_probs[1] {
            Arm::ExpControl
        } else {
            Arm::SelfSelect
        };
        let (d, g) = match arm {
            Arm::ExpTreat => (1, Source::Exp),
            Arm::ExpControl => (0, Source::Exp),
            Arm::SelfSelect => (cell.s, Source::Obs),
        };
        let y = if d == 1 { y1 } else { y0 };
        records.push(ObservationRecord::unit(y, d, g, cell.x.clone())?);
        ledger.push(LedgerEntry {
            arm,
            s: cell.s,
            d,
            y1,
            y0,
        });
    }
    Ok((Dataset::new(records), ledger))
}

/// Population in which `S` is independent of `(Y1, Y0)` given `X`: each
/// covariate cell has its own joint pmf, split across `s` in proportion
/// `P(S = 1 | x)`.
pub fn selection_on_observables(
    grid1: OutcomeGrid,
    grid0: OutcomeGrid,
    cells: &[(String, f64, f64, Vec<Vec<f64>>)],
) -> Result<SyntheticPopulation> {
    let mut out = Vec::new();
    for (x, p_x, p_s1, joint) in cells {
        let total: f64 = joint.iter().flatten().sum();
        for s in [0u8, 1] {
            let ps = if s == 1 { *p_s1 } else { 1.0 - p_s1 };
            out.push(PopulationCell {
                x: x.clone(),
                s,
                pmf: joint
                    .iter()
                    .map(|r| r.iter().map(|m| m / total * p_x * ps).collect())
                    .collect(),
            });
        }
    }
    SyntheticPopulation::new(grid1, grid0, out)
}
