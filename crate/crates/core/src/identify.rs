//! Identification of self-selection probabilities and the outcome CDFs
//! conditional on self-selection.
//!
//! For `d == s` the CDF `F_{Y_d | S=s, X=x}` is the observed CDF of the
//! `(D=s, G=obs, X=x)` stratum. For `d != s` it is the counterfactual obtained
//! by inverting the mixture
//!
//! ```text
//! F_{Y_d|X} = P(S=d|X) F_{Y_d|S=d,X} + P(S=s|X) F_{Y_d|S=s,X}
//! ```
//!
//! where `F_{Y_d|X}` comes from the randomized arm. In finite samples the
//! inversion need not be a CDF, so it is repaired (clip, rearrange, pin the
//! terminal value) and the repair size is logged.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    empirical_cdf_on_grid, validate_overlap, Dataset, OutcomeGrid, Source, StepCdf,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionProbabilities {
    pub p1_given_x: BTreeMap<String, f64>,
}

/// `P(S = 1 | X = x)`, estimated as the weighted share of `d = 1` among
/// observational records in cell `x`.
pub fn selection_prob(ds: &Dataset, x: &str) -> Result<f64> {
    let obs = ds.weight_where(|r| r.g == Source::Obs && r.x == x);
    if obs <= 0.0 {
        return Err(Error::ZeroProbability(format!(
            "no observational records in cell `{x}`"
        )));
    }
    Ok(ds.weight_where(|r| r.g == Source::Obs && r.x == x && r.d == 1) / obs)
}

/// What the finite-sample repair did to one counterfactual curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    /// Grid points whose raw value fell outside `[0, 1]`.
    pub clipped: usize,
    /// Whether rearrangement changed the order of values.
    pub rearranged: bool,
    /// Sup-norm distance between the raw inversion and the repaired CDF.
    pub magnitude: f64,
}

impl Repair {
    pub fn is_event(&self) -> bool {
        self.clipped > 0 || self.rearranged || self.magnitude > 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEvent {
    pub x: String,
    pub d: u8,
    pub s: u8,
    pub repair: Repair,
}

/// Raw mixture inversion `(F_exp - p_fact F_fact) / (1 - p_fact)` on a common grid.
pub fn invert_mixture(exp: &[f64], factual: &[f64], p_factual: f64) -> Result<Vec<f64>> {
    let p_other = 1.0 - p_factual;
    if p_other <= 0.0 {
        return Err(Error::ZeroProbability(
            "counterfactual selection group has zero probability".into(),
        ));
    }
    Ok(exp
        .iter()
        .zip(factual)
        .map(|(e, f)| (e - p_factual * f) / p_other)
        .collect())
}

/// Forward mixture `p_fact F_fact + (1 - p_fact) F_cf`.
pub fn mix(factual: &[f64], counterfactual: &[f64], p_factual: f64) -> Vec<f64> {
    factual
        .iter()
        .zip(counterfactual)
        .map(|(f, c)| p_factual * f + (1.0 - p_factual) * c)
        .collect()
}

/// Clip to `[0, 1]`, sort (monotone rearrangement), force the last value to 1.
pub fn repair_cdf(raw: &[f64]) -> (Vec<f64>, Repair) {
    let mut clipped = 0;
    let mut values: Vec<f64> = raw
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                clipped += 1;
            }
            v.clamp(0.0, 1.0)
        })
        .collect();
    let rearranged = values.windows(2).any(|w| w[1] < w[0]);
    if rearranged {
        values.sort_by(f64::total_cmp);
    }
    if let Some(last) = values.last_mut() {
        *last = 1.0;
    }
    let magnitude = raw
        .iter()
        .zip(&values)
        .map(|(r, v)| (r - v).abs())
        .fold(0.0, f64::max);
    (
        values,
        Repair {
            clipped,
            rearranged,
            magnitude,
        },
    )
}

/// `F_{Y_d | S=s, X=x}` on `grid`, with the repair applied to the
/// counterfactual branch.
pub fn cdf_given_selection(
    ds: &Dataset,
    d: u8,
    s: u8,
    x: &str,
    grid: &OutcomeGrid,
) -> Result<(StepCdf, Repair)> {
    let stratum = |dd: u8, g: Source| {
        let label = format!("d={dd}, g={g}, x={x}");
        empirical_cdf_on_grid(
            ds.records().iter().filter(|r| r.d == dd && r.g == g && r.x == x),
            grid,
            &label,
        )
    };
    if d == s {
        return Ok((stratum(s, Source::Obs)?, Repair::default()));
    }
    let p1 = selection_prob(ds, x)?;
    let p_fact = if d == 1 { p1 } else { 1.0 - p1 };
    if p_fact >= 1.0 {
        return Err(Error::ZeroProbability(format!(
            "P(D={s} | obs, x={x}) = 0; counterfactual CDF is not identified"
        )));
    }
    let exp = stratum(d, Source::Exp)?;
    let fact = stratum(d, Source::Obs)?;
    let raw = invert_mixture(exp.values(), fact.values(), p_fact)?;
    let (values, repair) = repair_cdf(&raw);
    Ok((StepCdf::new(grid.clone(), values)?, repair))
}

/// Identified objects for one covariate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSystem {
    pub x: String,
    /// `P(X = x)`.
    pub p_x: f64,
    /// `P(S = 1 | X = x)`.
    pub p_s1: f64,
    /// `F_{Y_d | X = x}` indexed by `d`.
    pub experimental: [StepCdf; 2],
    /// `F_{Y_d | S = s, X = x}` indexed `[d][s]`. When `P(S = s | x) = 0` the
    /// entry is a placeholder equal to the experimental marginal.
    pub conditional: [[StepCdf; 2]; 2],
    /// Sup-norm residual of the mixture identity per `d`.
    pub mixture_residual: [f64; 2],
}

impl CellSystem {
    pub fn p_s(&self, s: u8) -> f64 {
        if s == 1 {
            self.p_s1
        } else {
            1.0 - self.p_s1
        }
    }

    fn compute_residuals(&mut self) {
        for d in 0..2 {
            let mixed = mix(
                self.conditional[d][1].values(),
                self.conditional[d][0].values(),
                self.p_s1,
            );
            self.mixture_residual[d] = mixed
                .iter()
                .zip(self.experimental[d].values())
                .map(|(m, e)| (m - e).abs())
                .fold(0.0, f64::max);
        }
    }
}

/// All identified CDFs for every covariate cell. `grids[d]` carries `Y_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedCdfSystem {
    pub grids: [OutcomeGrid; 2],
    pub cells: Vec<CellSystem>,
    pub repairs: Vec<RepairEvent>,
}

impl IdentifiedCdfSystem {
    /// Assembles a system from exact components; residuals are recomputed.
    pub fn from_cells(grids: [OutcomeGrid; 2], mut cells: Vec<CellSystem>) -> Result<Self> {
        let total: f64 = cells.iter().map(|c| c.p_x).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("cell probabilities sum to {total}")));
        }
        for c in &mut cells {
            if !(0.0..=1.0).contains(&c.p_s1) {
                return Err(Error::invalid(format!("P(S=1|x={}) outside [0,1]", c.x)));
            }
            for d in 0..2 {
                let grid = &grids[d];
                let mut curves = c.conditional[d].iter().chain(std::iter::once(&c.experimental[d]));
                if curves.any(|f| f.grid() != grid) {
                    return Err(Error::ShapeMismatch(format!(
                        "cell {} has a Y{d} curve off the system grid",
                        c.x
                    )));
                }
            }
            c.compute_residuals();
        }
        Ok(Self {
            grids,
            cells,
            repairs: Vec::new(),
        })
    }

    pub fn cell(&self, x: &str) -> Option<&CellSystem> {
        self.cells.iter().find(|c| c.x == x)
    }

    pub fn selection_probabilities(&self) -> SelectionProbabilities {
        SelectionProbabilities {
            p1_given_x: self.cells.iter().map(|c| (c.x.clone(), c.p_s1)).collect(),
        }
    }

    pub fn max_mixture_residual(&self) -> f64 {
        self.cells
            .iter()
            .flat_map(|c| c.mixture_residual)
            .fold(0.0, f64::max)
    }

    pub fn total_repair_magnitude(&self) -> f64 {
        self.repairs.iter().map(|r| r.repair.magnitude).sum()
    }
}

/// Identifies the full system on a common outcome grid. Requires overlap.
pub fn identify_system(ds: &Dataset, grid: &OutcomeGrid) -> Result<IdentifiedCdfSystem> {
    let overlap = validate_overlap(ds);
    if !overlap.pass {
        return Err(Error::Overlap {
            cell: overlap.failing_cells.join(","),
            message: "every cell needs records for all (d, g) combinations".into(),
        });
    }
    let p_x = ds.cell_probabilities()?;
    let cells: Vec<&String> = ds.covariate_cells().iter().collect();
    let results: Vec<Result<(CellSystem, Vec<RepairEvent>)>> = cells
        .par_iter()
        .map(|x| identify_cell(ds, x, p_x[*x], grid))
        .collect();

    let mut systems = Vec::with_capacity(cells.len());
    let mut repairs = Vec::new();
    for r in results {
        let (cell, events) = r?;
        systems.push(cell);
        repairs.extend(events);
    }
    Ok(IdentifiedCdfSystem {
        grids: [grid.clone(), grid.clone()],
        cells: systems,
        repairs,
    })
}

fn identify_cell(
    ds: &Dataset,
    x: &str,
    p_x: f64,
    grid: &OutcomeGrid,
) -> Result<(CellSystem, Vec<RepairEvent>)> {
    let p_s1 = selection_prob(ds, x)?;
    let exp_cdf = |d: u8| {
        empirical_cdf_on_grid(
            ds.records()
                .iter()
                .filter(|r| r.d == d && r.g == Source::Exp && r.x == x),
            grid,
            &format!("d={d}, g=exp, x={x}"),
        )
    };
    let mut events = Vec::new();
    let mut cond = |d: u8, s: u8| -> Result<StepCdf> {
        let (cdf, repair) = cdf_given_selection(ds, d, s, x, grid)?;
        if repair.is_event() {
            events.push(RepairEvent {
                x: x.to_string(),
                d,
                s,
                repair,
            });
        }
        Ok(cdf)
    };
    let conditional = [[cond(0, 0)?, cond(0, 1)?], [cond(1, 0)?, cond(1, 1)?]];
    let mut cell = CellSystem {
        x: x.to_string(),
        p_x,
        p_s1,
        experimental: [exp_cdf(0)?, exp_cdf(1)?],
        conditional,
        mixture_residual: [0.0; 2],
    };
    cell.compute_residuals();
    Ok((cell, events))
}

/// One `(s, x)` cell of the joint margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCell {
    pub x: String,
    pub s: u8,
    /// `P(S = s, X = x)`.
    pub prob: f64,
}

/// Joint pmfs of `(Y_d, S, X)` for `d = 0, 1` on the system grids.
/// `pmf[d][c][i]` is the mass at grid point `i` of `Y_d` in cell `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMargins {
    pub grids: [OutcomeGrid; 2],
    pub cells: Vec<MarginCell>,
    pub pmf: [Vec<Vec<f64>>; 2],
}

impl JointMargins {
    /// Margins conditional on `X = x`, renormalized to total mass one.
    pub fn conditional_on(&self, x: &str) -> Option<JointMargins> {
        let idx: Vec<usize> = (0..self.cells.len()).filter(|&c| self.cells[c].x == x).collect();
        self.restrict(&idx)
    }

    /// The listed cells only, renormalized to total mass one.
    pub fn restrict(&self, idx: &[usize]) -> Option<JointMargins> {
        let total: f64 = idx.iter().map(|&c| self.cells[c].prob).sum();
        if idx.is_empty() || total <= 0.0 {
            return None;
        }
        let pick = |d: usize| -> Vec<Vec<f64>> {
            idx.iter()
                .map(|&c| self.pmf[d][c].iter().map(|m| m / total).collect())
                .collect()
        };
        Some(JointMargins {
            grids: self.grids.clone(),
            cells: idx
                .iter()
                .map(|&c| MarginCell {
                    x: self.cells[c].x.clone(),
                    s: self.cells[c].s,
                    prob: self.cells[c].prob / total,
                })
                .collect(),
            pmf: [pick(0), pick(1)],
        })
    }

    /// Distinct covariate labels in cell order.
    pub fn covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.x) {
                out.push(c.x.clone());
            }
        }
        out
    }

    pub fn total_mass(&self, d: usize) -> f64 {
        self.pmf[d].iter().flatten().sum()
    }
}

/// Differences each conditional CDF and scales by `P(S=s|x) P(x)`.
/// Cells with zero probability are omitted.
pub fn margins_pmf(system: &IdentifiedCdfSystem) -> JointMargins {
    let mut cells = Vec::new();
    let mut pmf: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for c in &system.cells {
        for s in [0u8, 1] {
            let prob = c.p_s(s) * c.p_x;
            if prob <= 0.0 {
                continue;
            }
            cells.push(MarginCell {
                x: c.x.clone(),
                s,
                prob,
            });
            for d in 0..2 {
                pmf[d].push(
                    c.conditional[d][s as usize]
                        .masses()
                        .iter()
                        .map(|m| m * prob)
                        .collect(),
                );
            }
        }
    }
    JointMargins {
        grids: system.grids.clone(),
        cells,
        pmf,
    }
}
