//! Sharp bounds as a linear program over the joint pmf of
//! `(Y1, Y0, S, X)` on the grid product, optionally restricted by mutual
//! stochastic monotonicity (MSI) and generalized Roy selection (GRM).
//!
//! Variables are `f(y1, y0, s, x)` on the support of the identified margins.
//! Constraints only couple variables within one covariate cell, and without
//! GRM only within one `(s, x)` cell, so [`sharp_bounds_lp`] solves one
//! small program per block and sums the optimal values.

pub mod dump;
pub mod simplex;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds_analytic::{aggregate, analytic_bounds, BoundsInterval, CellInterval, Regime};
use crate::dataset::OutcomeGrid;
use crate::error::{Error, Result};
use crate::identify::{margins_pmf, IdentifiedCdfSystem, JointMargins, MarginCell};
use crate::params::{PopulationWeights, PsiShape, PsiTable};

pub use simplex::{Sense, Status};

/// Largest total variable count accepted by [`sharp_bounds_lp`].
pub const VARIABLE_CAP: usize = 250_000;

const MARGIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintOptions {
    /// Mutual stochastic monotonicity within each `(s, x)` cell.
    pub msi: bool,
    /// Generalized Roy selection within each `x` cell.
    pub grm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpVariable {
    /// Index into [`LpProblem::cells`].
    pub cell: usize,
    pub i1: usize,
    pub i0: usize,
}

/// A sparse row. Equality rows read `coeffs·f = rhs`, inequality rows
/// `coeffs·f >= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpRow {
    pub label: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub grids: [OutcomeGrid; 2],
    pub cells: Vec<MarginCell>,
    pub variables: Vec<LpVariable>,
    pub objective: Vec<f64>,
    pub eq_rows: Vec<LpRow>,
    pub ineq_rows: Vec<LpRow>,
    /// Every variable lies in `[0, var_upper]`.
    pub var_upper: f64,
    pub direction: Sense,
    /// Constraint families skipped because a conditioning cell has no mass.
    pub skipped: Vec<String>,
}

impl LpProblem {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    /// Equivalent problem in the solver's form. Upper bounds are added as
    /// rows only when no nonnegative equality row already implies them.
    pub fn to_standard(&self) -> simplex::StandardLp {
        use simplex::{Row, RowKind};
        let n = self.n_vars();
        let mut implied = vec![f64::INFINITY; n];
        for r in &self.eq_rows {
            if r.coeffs.iter().all(|&(_, v)| v >= 0.0) && r.rhs >= 0.0 {
                for &(j, v) in &r.coeffs {
                    if v > 0.0 {
                        implied[j] = implied[j].min(r.rhs / v);
                    }
                }
            }
        }
        let mut rows: Vec<Row> = self
            .eq_rows
            .iter()
            .map(|r| Row {
                coeffs: r.coeffs.clone(),
                kind: RowKind::Eq,
                rhs: r.rhs,
            })
            .chain(self.ineq_rows.iter().map(|r| Row {
                coeffs: r.coeffs.clone(),
                kind: RowKind::Ge,
                rhs: r.rhs,
            }))
            .collect();
        for (j, &u) in implied.iter().enumerate() {
            if u > self.var_upper {
                rows.push(Row {
                    coeffs: vec![(j, 1.0)],
                    kind: RowKind::Le,
                    rhs: self.var_upper,
                });
            }
        }
        simplex::StandardLp {
            n,
            objective: self.objective.clone(),
            rows,
            sense: self.direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: Status,
    pub value: f64,
    pub primal: Vec<f64>,
    /// Largest constraint violation of the returned point.
    pub residuals: f64,
    pub duality_gap: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

pub fn solve_lp(p: &LpProblem) -> SolveReport {
    let sol = simplex::solve(&p.to_standard());
    SolveReport {
        status: sol.status,
        value: sol.value,
        primal: sol.primal,
        residuals: sol.residual,
        duality_gap: sol.duality_gap,
        dual_infeasibility: sol.dual_infeasibility,
        iterations: sol.iterations,
    }
}

/// Positive-mass grid indices of `Y_d` in margin cell `c`.
fn support(m: &JointMargins, d: usize, c: usize) -> Vec<usize> {
    (0..m.pmf[d][c].len()).filter(|&i| m.pmf[d][c][i] > 0.0).collect()
}

/// Builds the program for the given margins. The objective coefficient of
/// `f(y1, y0, s, x)` is `ψ(y1, y0) w(s, x) / P(s, x)` with `P(s, x)` the
/// cell mass in `margins`, so the optimal value is the weighted population
/// expectation.
pub fn build_lp(
    margins: &JointMargins,
    psi: &PsiTable,
    weights: &PopulationWeights,
    opts: ConstraintOptions,
    direction: Sense,
) -> Result<LpProblem> {
    if psi.grid1 != margins.grids[1] || psi.grid0 != margins.grids[0] {
        return Err(Error::ShapeMismatch("psi grids differ from the margin grids".into()));
    }
    let mut total = 0.0;
    for (c, cell) in margins.cells.iter().enumerate() {
        let m1: f64 = margins.pmf[1][c].iter().sum();
        let m0: f64 = margins.pmf[0][c].iter().sum();
        if (m1 - m0).abs() > MARGIN_TOL || (m1 - cell.prob).abs() > MARGIN_TOL {
            return Err(Error::InconsistentMargins(format!(
                "cell (x={}, s={}) has Y1 mass {m1}, Y0 mass {m0}, cell mass {}",
                cell.x, cell.s, cell.prob
            )));
        }
        total += cell.prob;
    }
    if (total - 1.0).abs() > MARGIN_TOL {
        return Err(Error::InconsistentMargins(format!("margins sum to {total}")));
    }

    let mut variables = Vec::new();
    let mut objective = Vec::new();
    // first variable index of each cell, and per-cell supports
    let mut starts = Vec::with_capacity(margins.cells.len());
    let mut supports = Vec::with_capacity(margins.cells.len());
    for (c, cell) in margins.cells.iter().enumerate() {
        let s1 = support(margins, 1, c);
        let s0 = support(margins, 0, c);
        starts.push(variables.len());
        let scale = if cell.prob > 0.0 {
            weights.get(&cell.x, cell.s) / cell.prob
        } else {
            0.0
        };
        for &i1 in &s1 {
            for &i0 in &s0 {
                variables.push(LpVariable { cell: c, i1, i0 });
                objective.push(psi.get(i1, i0) * scale);
            }
        }
        supports.push([s0, s1]);
    }
    // index of variable (c, position of i1 in s1, position of i0 in s0)
    let var_at = |c: usize, p1: usize, p0: usize| starts[c] + p1 * supports[c][0].len() + p0;

    let mut eq_rows = vec![LpRow {
        label: "norm".into(),
        coeffs: (0..variables.len()).map(|j| (j, 1.0)).collect(),
        rhs: 1.0,
    }];
    for c in 0..margins.cells.len() {
        let [s0, s1] = &supports[c];
        for (p1, &i1) in s1.iter().enumerate() {
            eq_rows.push(LpRow {
                label: format!("margin:c{c}:d1:y{i1}"),
                coeffs: (0..s0.len()).map(|p0| (var_at(c, p1, p0), 1.0)).collect(),
                rhs: margins.pmf[1][c][i1],
            });
        }
        for (p0, &i0) in s0.iter().enumerate() {
            eq_rows.push(LpRow {
                label: format!("margin:c{c}:d0:y{i0}"),
                coeffs: (0..s1.len()).map(|p1| (var_at(c, p1, p0), 1.0)).collect(),
                rhs: margins.pmf[0][c][i0],
            });
        }
    }

    let mut ineq_rows = Vec::new();
    let mut skipped = Vec::new();
    if opts.msi {
        for c in 0..margins.cells.len() {
            for d in [0usize, 1] {
                let dp = 1 - d;
                let sd = &supports[c][d];
                let sdp = &supports[c][dp];
                // variable index for position pd of Y_d and pdp of Y_d'
                let var = |pd: usize, pdp: usize| {
                    if d == 1 {
                        var_at(c, pd, pdp)
                    } else {
                        var_at(c, pdp, pd)
                    }
                };
                for (pt, &t) in sd.iter().enumerate() {
                    for k in 1..sdp.len() {
                        let (ya, yb) = (sdp[k - 1], sdp[k]);
                        let (fa, fb) = (margins.pmf[dp][c][ya], margins.pmf[dp][c][yb]);
                        let mut coeffs = Vec::with_capacity(2 * (pt + 1));
                        for pd in 0..=pt {
                            coeffs.push((var(pd, k - 1), 1.0 / fa));
                        }
                        for pd in 0..=pt {
                            coeffs.push((var(pd, k), -1.0 / fb));
                        }
                        ineq_rows.push(LpRow {
                            label: format!("msi:c{c}:d{d}:t{t}:y{ya}-{yb}"),
                            coeffs,
                            rhs: 0.0,
                        });
                    }
                }
            }
        }
    }
    if opts.grm {
        let xs: Vec<String> = margins.covariates();
        for x in xs {
            let cell_of = |s: u8| {
                margins
                    .cells
                    .iter()
                    .position(|m| m.x == x && m.s == s && m.prob > 0.0)
            };
            let (Some(c0), Some(c1)) = (cell_of(0), cell_of(1)) else {
                skipped.push(format!("grm:x={x}: one selection group has zero mass"));
                continue;
            };
            let g1 = margins.grids[1].points();
            let g0 = margins.grids[0].points();
            let diff = |v: &LpVariable| g1[v.i1] - g0[v.i0];
            let in_cells = |v: &&LpVariable| v.cell == c0 || v.cell == c1;
            let mut thresholds: Vec<f64> = variables.iter().filter(in_cells).map(diff).collect();
            thresholds.sort_by(f64::total_cmp);
            thresholds.dedup();
            let sentinel = thresholds[0] - 1.0;
            thresholds.insert(0, sentinel);
            let (p0, p1) = (margins.cells[c0].prob, margins.cells[c1].prob);
            for (k, &t) in thresholds.iter().enumerate() {
                let coeffs: Vec<(usize, f64)> = variables
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| diff(v) > t)
                    .filter_map(|(j, v)| {
                        if v.cell == c1 {
                            Some((j, 1.0 / p1))
                        } else if v.cell == c0 {
                            Some((j, -1.0 / p0))
                        } else {
                            None
                        }
                    })
                    .collect();
                if coeffs.is_empty() {
                    continue;
                }
                ineq_rows.push(LpRow {
                    label: format!("grm:c{c0}-c{c1}:k{k}"),
                    coeffs,
                    rhs: 0.0,
                });
            }
        }
    }

    Ok(LpProblem {
        grids: margins.grids.clone(),
        cells: margins.cells.clone(),
        variables,
        objective,
        eq_rows,
        ineq_rows,
        var_upper: 1.0,
        direction,
        skipped,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LpDiagnostics {
    pub options: ConstraintOptions,
    pub blocks: usize,
    pub variables: usize,
    pub eq_rows: usize,
    pub ineq_rows: usize,
    pub iterations: usize,
    pub max_residual: f64,
    pub max_duality_gap: f64,
    pub max_dual_infeasibility: f64,
    pub skipped: Vec<String>,
    /// Largest endpoint difference from the closed-form bounds, when `ψ`
    /// admits them and no extra constraints are active.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_discrepancy: Option<f64>,
}

struct Block {
    x: String,
    s: Option<u8>,
    weight: f64,
    margins: JointMargins,
}

fn blocks(
    margins: &JointMargins,
    weights: &PopulationWeights,
    opts: ConstraintOptions,
) -> Vec<Block> {
    let w = |c: &MarginCell| weights.get(&c.x, c.s);
    if opts.grm {
        margins
            .covariates()
            .into_iter()
            .filter_map(|x| {
                let idx: Vec<usize> =
                    (0..margins.cells.len()).filter(|&c| margins.cells[c].x == x).collect();
                let weight: f64 = idx.iter().map(|&c| w(&margins.cells[c])).sum();
                if weight <= 0.0 {
                    return None;
                }
                Some(Block {
                    x,
                    s: None,
                    weight,
                    margins: margins.restrict(&idx)?,
                })
            })
            .collect()
    } else {
        (0..margins.cells.len())
            .filter_map(|c| {
                let cell = &margins.cells[c];
                let weight = w(cell);
                if weight <= 0.0 {
                    return None;
                }
                Some(Block {
                    x: cell.x.clone(),
                    s: Some(cell.s),
                    weight,
                    margins: margins.restrict(&[c])?,
                })
            })
            .collect()
    }
}

struct BlockResult {
    lower: f64,
    upper: f64,
    reports: [SolveReport; 2],
    sizes: (usize, usize, usize),
    skipped: Vec<String>,
}

fn solve_block(
    b: &Block,
    psi: &PsiTable,
    weights: &PopulationWeights,
    opts: ConstraintOptions,
) -> Result<BlockResult> {
    let mut reports = Vec::with_capacity(2);
    let mut sizes = (0, 0, 0);
    let mut skipped = Vec::new();
    for dir in [Sense::Min, Sense::Max] {
        let p = build_lp(&b.margins, psi, weights, opts, dir)?;
        sizes = (p.n_vars(), p.eq_rows.len(), p.ineq_rows.len());
        skipped = p.skipped.clone();
        let r = solve_lp(&p);
        let cell = match b.s {
            Some(s) => format!("x={}, s={s}", b.x),
            None => format!("x={}", b.x),
        };
        match r.status {
            Status::Optimal => {}
            Status::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "assumption set empty given data ({cell})"
                )))
            }
            other => {
                return Err(Error::Solver(format!("{other:?} in cell {cell}")));
            }
        }
        reports.push(r);
    }
    let max = reports.pop().expect("two solves");
    let min = reports.pop().expect("two solves");
    Ok(BlockResult {
        lower: min.value,
        upper: max.value,
        reports: [min, max],
        sizes,
        skipped,
    })
}

/// Sharp bounds over the combined-data identified set, with the optional
/// shape restrictions. With no restriction active and a shape that admits
/// closed-form bounds, the closed form is computed too and the largest
/// endpoint difference is recorded.
pub fn sharp_bounds_lp(
    system: &IdentifiedCdfSystem,
    psi: &PsiTable,
    weights: &PopulationWeights,
    opts: ConstraintOptions,
) -> Result<BoundsInterval> {
    let margins = margins_pmf(system);
    let bl = blocks(&margins, weights, opts);
    let n_vars: usize = bl
        .iter()
        .map(|b| {
            (0..b.margins.cells.len())
                .map(|c| support(&b.margins, 0, c).len() * support(&b.margins, 1, c).len())
                .sum::<usize>()
        })
        .sum();
    if n_vars > VARIABLE_CAP {
        return Err(Error::invalid(format!(
            "linear program would have {n_vars} variables (cap {VARIABLE_CAP}); use a coarser grid"
        )));
    }
    let results: Vec<Result<BlockResult>> = bl
        .par_iter()
        .map(|b| solve_block(b, psi, weights, opts))
        .collect();

    let mut cells = Vec::with_capacity(bl.len());
    let mut diag = LpDiagnostics {
        options: opts,
        blocks: bl.len(),
        ..Default::default()
    };
    let mut skipped = BTreeSet::new();
    for (b, r) in bl.iter().zip(results) {
        let r = r?;
        cells.push(CellInterval {
            x: b.x.clone(),
            s: b.s,
            weight: b.weight,
            lower: r.lower / b.weight,
            upper: r.upper / b.weight,
        });
        diag.variables += r.sizes.0;
        diag.eq_rows += r.sizes.1;
        diag.ineq_rows += r.sizes.2;
        for rep in &r.reports {
            diag.iterations += rep.iterations;
            diag.max_residual = diag.max_residual.max(rep.residuals);
            diag.max_duality_gap = diag.max_duality_gap.max(rep.duality_gap);
            diag.max_dual_infeasibility = diag.max_dual_infeasibility.max(rep.dual_infeasibility);
        }
        skipped.extend(r.skipped);
    }
    diag.skipped = skipped.into_iter().collect();

    let mut out = aggregate(cells, Regime::CombinedLp, system, "linear-program");
    if !opts.msi && !opts.grm && !matches!(psi.shape, PsiShape::General) {
        let closed = analytic_bounds(system, psi, weights, Regime::Combined)?;
        diag.analytic_discrepancy =
            Some((closed.lower - out.lower).abs().max((closed.upper - out.upper).abs()));
    }
    if diag.max_residual > 1e-8 || diag.max_duality_gap > 1e-7 * psi_scale(psi) {
        out.diagnostics.notes.push(format!(
            "optimality certificate is loose: residual {:e}, duality gap {:e}",
            diag.max_residual, diag.max_duality_gap
        ));
    }
    out.diagnostics.lp = Some(diag);
    Ok(out)
}

fn psi_scale(psi: &PsiTable) -> f64 {
    let (lo, hi) = psi.range();
    lo.abs().max(hi.abs()).max(1.0)
}
