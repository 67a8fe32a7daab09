//! Closed-form bounds: Fréchet envelopes, comonotone/antimonotone coupling
//! expectations for super- and sub-modular `ψ`, and Makarov-type bounds for
//! indicators of monotone level sets.
//!
//! All computations are exact for step CDFs on finite grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::StepCdf;
use crate::error::{Error, Result};
use crate::identify::{CellSystem, IdentifiedCdfSystem};
use crate::params::{LevelSet, Orientation, PhiSpec, Population, PopulationWeights, PsiShape, PsiTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrechetKind {
    /// `M(u, v) = max(u + v - 1, 0)`.
    LowerM,
    /// `W(u, v) = min(u, v)`.
    UpperW,
}

pub fn frechet(kind: FrechetKind, u: f64, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("frechet arguments ({u}, {v}) outside [0,1]")));
    }
    Ok(match kind {
        FrechetKind::LowerM => (u + v - 1.0).max(0.0),
        FrechetKind::UpperW => u.min(v),
    })
}

/// Walks two cumulative sequences in lockstep and calls `f(i, j, len)` for
/// each quantile segment where `Y1` sits at index `i` and `Y0` at index `j`.
fn merge_quantiles(c1: &[f64], c0: &[f64], mut f: impl FnMut(usize, usize, f64)) {
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    while i < c1.len() && j < c0.len() {
        let next = c1[i].min(c0[j]);
        if next > u {
            f(i, j, next - u);
            u = next;
        }
        if c1[i] <= next {
            i += 1;
        }
        if c0[j] <= next {
            j += 1;
        }
    }
}

fn check_grids(psi: &PsiTable, f1: &StepCdf, f0: &StepCdf) {
    debug_assert_eq!(f1.grid(), &psi.grid1);
    debug_assert_eq!(f0.grid(), &psi.grid0);
}

/// `E[ψ(F1⁻¹(U), F0⁻¹(U))]`, the expectation under the upper Fréchet coupling.
pub fn comonotone_expectation(psi: &PsiTable, f1: &StepCdf, f0: &StepCdf) -> f64 {
    check_grids(psi, f1, f0);
    let mut total = 0.0;
    merge_quantiles(f1.values(), f0.values(), |i, j, len| total += psi.get(i, j) * len);
    total
}

/// `E[ψ(F1⁻¹(U), F0⁻¹(1 - U))]`, the expectation under the lower Fréchet coupling.
pub fn antimonotone_expectation(psi: &PsiTable, f1: &StepCdf, f0: &StepCdf) -> f64 {
    check_grids(psi, f1, f0);
    let masses = f0.masses();
    let n0 = masses.len();
    let mut acc = 0.0;
    let survival: Vec<f64> = masses
        .iter()
        .rev()
        .map(|m| {
            acc += m;
            acc
        })
        .collect();
    let mut total = 0.0;
    merge_quantiles(f1.values(), &survival, |i, k, len| {
        total += psi.get(i, n0 - 1 - k) * len
    });
    total
}

/// Cumulative masses of a CDF in an oriented order.
fn oriented_cumulative(f: &StepCdf, dir: crate::params::Direction) -> Vec<f64> {
    let m = f.masses();
    let n = m.len();
    let mut acc = 0.0;
    (0..n)
        .map(|r| {
            acc += m[Orientation::map(dir, r, n)];
            acc
        })
        .collect()
}

/// Pointwise terms of the lower and upper bounds for `P((Y1, Y0) ∈ D)`,
/// `D` the down-set of `ls`. Entry `r` is the rectangle or cut indexed by
/// oriented row `r`; the trailing entry is the trivial candidate (0 or 1).
fn makarov_terms(f1: &StepCdf, f0: &StepCdf, ls: &LevelSet) -> (Vec<f64>, Vec<f64>) {
    let p = oriented_cumulative(f1, ls.orientation.y1);
    let q = oriented_cumulative(f0, ls.orientation.y0);
    let qe = |r: usize| ls.ends[r].map_or(0.0, |e| q[e]);
    let mut lower: Vec<f64> = (0..p.len()).map(|r| p[r] + qe(r) - 1.0).collect();
    lower.push(0.0);
    let mut upper: Vec<f64> = (0..p.len())
        .map(|r| if r == 0 { 0.0 } else { p[r - 1] } + qe(r))
        .collect();
    upper.push(1.0);
    (lower, upper)
}

/// Sharp bounds on `P(ψ = 1)` over all couplings of two step CDFs, where
/// `ψ` is the indicator of a monotone level set or its complement.
pub fn makarov_levelset(f1: &StepCdf, f0: &StepCdf, ls: &LevelSet) -> (f64, f64) {
    let (lo, up) = makarov_terms(f1, f0, ls);
    let lower = lo.into_iter().fold(0.0, f64::max);
    let upper = up.into_iter().fold(1.0, f64::min);
    if ls.complement {
        (1.0 - upper, 1.0 - lower)
    } else {
        (lower, upper)
    }
}

/// Makarov interval for `P(φ(Y1, Y0) <= δ)` (or its complement) from two
/// marginal step CDFs.
pub fn makarov_interval(f1: &StepCdf, f0: &StepCdf, phi: &PhiSpec) -> (f64, f64) {
    let ls = phi.level_set(f1.grid(), f0.grid());
    makarov_levelset(f1, f0, &ls)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    ExperimentalOnly,
    Combined,
    CombinedLp,
}

/// Contribution of one cell. `s` is `None` in the experimental-only regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellInterval {
    pub x: String,
    pub s: Option<u8>,
    pub weight: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Grid sizes for `Y1` and `Y0`.
    pub grid: [usize; 2],
    pub repair_total: f64,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp: Option<crate::bounds_lp::LpDiagnostics>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsInterval {
    pub lower: f64,
    pub upper: f64,
    pub regime: Regime,
    pub cells: Vec<CellInterval>,
    pub diagnostics: Diagnostics,
}

impl BoundsInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lower - tol <= v && v <= self.upper + tol
    }

    /// Whether `self` lies inside `other` up to `tol` at both endpoints.
    pub fn nested_in(&self, other: &BoundsInterval, tol: f64) -> bool {
        self.lower >= other.lower - tol && self.upper <= other.upper + tol
    }
}

/// Cells of the chosen regime with their marginal CDF pair and weight.
pub(crate) struct RegimeCell<'a> {
    pub x: &'a str,
    pub s: Option<u8>,
    pub weight: f64,
    pub f1: &'a StepCdf,
    pub f0: &'a StepCdf,
}

pub(crate) fn regime_cells<'a>(
    system: &'a IdentifiedCdfSystem,
    weights: &PopulationWeights,
    regime: Regime,
) -> Result<Vec<RegimeCell<'a>>> {
    let find = |x: &str| -> Result<&'a CellSystem> {
        system
            .cell(x)
            .ok_or_else(|| Error::invalid(format!("weights reference unknown cell `{x}`")))
    };
    let mut out = Vec::new();
    match regime {
        Regime::ExperimentalOnly => {
            if matches!(weights.population, Population::Selection(_)) {
                return Err(Error::invalid(
                    "selection populations need the observational arm; \
                     the experimental-only regime cannot target them",
                ));
            }
            for (x, w) in weights.by_x() {
                if w > 0.0 {
                    let c = find(&x)?;
                    out.push(RegimeCell {
                        x: &c.x,
                        s: None,
                        weight: w,
                        f1: &c.experimental[1],
                        f0: &c.experimental[0],
                    });
                }
            }
        }
        Regime::Combined | Regime::CombinedLp => {
            for cw in &weights.cells {
                if cw.weight > 0.0 {
                    let c = find(&cw.x)?;
                    let s = cw.s as usize;
                    out.push(RegimeCell {
                        x: &c.x,
                        s: Some(cw.s),
                        weight: cw.weight,
                        f1: &c.conditional[1][s],
                        f0: &c.conditional[0][s],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Sums per-cell intervals in cell order so the result does not depend on
/// how the cell computations were scheduled.
pub(crate) fn aggregate(
    cells: Vec<CellInterval>,
    regime: Regime,
    system: &IdentifiedCdfSystem,
    method: &str,
) -> BoundsInterval {
    let mut lower = 0.0;
    let mut upper = 0.0;
    for c in &cells {
        lower += c.weight * c.lower;
        upper += c.weight * c.upper;
    }
    BoundsInterval {
        lower,
        upper,
        regime,
        cells,
        diagnostics: Diagnostics {
            grid: [system.grids[1].len(), system.grids[0].len()],
            repair_total: system.total_repair_magnitude(),
            method: method.to_string(),
            ..Default::default()
        },
    }
}

fn cell_bounds(
    system: &IdentifiedCdfSystem,
    weights: &PopulationWeights,
    regime: Regime,
    method: &str,
    f: impl Fn(&StepCdf, &StepCdf) -> (f64, f64) + Sync,
) -> Result<BoundsInterval> {
    let cells = regime_cells(system, weights, regime)?;
    let intervals: Vec<CellInterval> = cells
        .par_iter()
        .map(|c| {
            let (lower, upper) = f(c.f1, c.f0);
            CellInterval {
                x: c.x.to_string(),
                s: c.s,
                weight: c.weight,
                lower,
                upper,
            }
        })
        .collect();
    Ok(aggregate(intervals, regime, system, method))
}

fn check_psi_grids(system: &IdentifiedCdfSystem, psi: &PsiTable) -> Result<()> {
    if psi.grid1 != system.grids[1] || psi.grid0 != system.grids[0] {
        return Err(Error::ShapeMismatch(
            "psi table grids differ from the identified system grids".into(),
        ));
    }
    Ok(())
}

/// Coupling bounds for super-modular (or sub-modular) `ψ`.
pub fn supermodular_bounds(
    system: &IdentifiedCdfSystem,
    psi: &PsiTable,
    weights: &PopulationWeights,
    regime: Regime,
) -> Result<BoundsInterval> {
    check_psi_grids(system, psi)?;
    let sub = match psi.shape {
        PsiShape::SuperModular => false,
        PsiShape::SubModular => true,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "coupling bounds need a super- or sub-modular psi, got {}",
                psi.shape.name()
            )))
        }
    };
    cell_bounds(system, weights, regime, "frechet-coupling", |f1, f0| {
        let co = comonotone_expectation(psi, f1, f0);
        let anti = antimonotone_expectation(psi, f1, f0);
        if sub {
            (co, anti)
        } else {
            (anti, co)
        }
    })
}

/// Makarov-type bounds for indicator `ψ`.
pub fn phi_indicator_bounds(
    system: &IdentifiedCdfSystem,
    psi: &PsiTable,
    weights: &PopulationWeights,
    regime: Regime,
) -> Result<BoundsInterval> {
    check_psi_grids(system, psi)?;
    let PsiShape::PhiIndicator { level_set } = &psi.shape else {
        return Err(Error::ShapeMismatch(format!(
            "makarov bounds need an indicator psi, got {}",
            psi.shape.name()
        )));
    };
    cell_bounds(system, weights, regime, "makarov", |f1, f0| {
        makarov_levelset(f1, f0, level_set)
    })
}

/// Dispatches on the shape of `ψ`. General tables have no closed form.
pub fn analytic_bounds(
    system: &IdentifiedCdfSystem,
    psi: &PsiTable,
    weights: &PopulationWeights,
    regime: Regime,
) -> Result<BoundsInterval> {
    match psi.shape {
        PsiShape::PhiIndicator { .. } => phi_indicator_bounds(system, psi, weights, regime),
        PsiShape::SuperModular | PsiShape::SubModular => {
            supermodular_bounds(system, psi, weights, regime)
        }
        PsiShape::General => Err(Error::ShapeMismatch(
            "psi has no closed-form bounds; use the linear program".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainVerdict {
    NoGainPredicted,
    GainPredicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainWitness {
    pub x: String,
    pub y1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub verdict: GainVerdict,
    pub witness: Option<GainWitness>,
    /// Largest Jensen gap or argmax disagreement found.
    pub max_gap: f64,
}

const GAIN_TOL: f64 = 1e-10;

/// Predicts whether conditioning on self-selection narrows the bounds.
///
/// For modular `ψ` the check runs over every grid pair where the `ψ` measure
/// has mass and compares the mixture of the Fréchet envelopes across `s`
/// with the envelope of the mixture, within each covariate cell. For
/// indicator `ψ` it asks whether the bound-attaining index is common to both
/// self-selection groups. Cells where one group has zero probability carry
/// no information and are skipped.
pub fn gain_diagnostic(system: &IdentifiedCdfSystem, psi: &PsiTable) -> Result<GainReport> {
    check_psi_grids(system, psi)?;
    let mut best: Option<(f64, GainWitness)> = None;
    let mut record = |gap: f64, w: GainWitness| {
        if gap > best.as_ref().map_or(GAIN_TOL, |b| b.0) {
            best = Some((gap, w));
        }
    };
    let g1 = system.grids[1].points();
    let g0 = system.grids[0].points();
    for c in system.cells.iter().filter(|c| c.p_s1 > 0.0 && c.p_s1 < 1.0) {
        let ws = [1.0 - c.p_s1, c.p_s1];
        match &psi.shape {
            PsiShape::SuperModular | PsiShape::SubModular | PsiShape::General => {
                if matches!(psi.shape, PsiShape::General) {
                    return Err(Error::ShapeMismatch(
                        "gain diagnostic needs a modular or indicator psi".into(),
                    ));
                }
                for i in 1..g1.len() {
                    for j in 1..g0.len() {
                        let minor = psi.get(i, j) + psi.get(i - 1, j - 1)
                            - psi.get(i - 1, j)
                            - psi.get(i, j - 1);
                        if minor == 0.0 {
                            continue;
                        }
                        let u = [0, 1].map(|s| c.conditional[1][s].values()[i - 1]);
                        let v = [0, 1].map(|s| c.conditional[0][s].values()[j - 1]);
                        let mix = |a: [f64; 2]| ws[0] * a[0] + ws[1] * a[1];
                        let (um, vm) = (mix(u), mix(v));
                        let lower_gap = mix([0, 1].map(|s| (u[s] + v[s] - 1.0).max(0.0)))
                            - (um + vm - 1.0).max(0.0);
                        let upper_gap = um.min(vm) - mix([0, 1].map(|s| u[s].min(v[s])));
                        record(
                            lower_gap.max(upper_gap),
                            GainWitness {
                                x: c.x.clone(),
                                y1: g1[i - 1],
                                y0: Some(g0[j - 1]),
                            },
                        );
                    }
                }
            }
            PsiShape::PhiIndicator { level_set } => {
                let terms = [0, 1].map(|s| {
                    makarov_terms(&c.conditional[1][s], &c.conditional[0][s], level_set)
                });
                let n1 = g1.len();
                let witness = |r: usize| GainWitness {
                    x: c.x.clone(),
                    y1: if r < n1 {
                        g1[Orientation::map(level_set.orientation.y1, r, n1)]
                    } else {
                        f64::NAN
                    },
                    y0: None,
                };
                let lo = [&terms[0].0, &terms[1].0];
                let (gap, r) = argmax_disagreement(lo, false);
                record(gap, witness(r));
                let up = [&terms[0].1, &terms[1].1];
                let (gap, r) = argmax_disagreement(up, true);
                record(gap, witness(r));
            }
        }
    }
    Ok(match best {
        Some((gap, w)) => GainReport {
            verdict: GainVerdict::GainPredicted,
            witness: Some(w),
            max_gap: gap,
        },
        None => GainReport {
            verdict: GainVerdict::NoGainPredicted,
            witness: None,
            max_gap: 0.0,
        },
    })
}

/// For two term vectors, the smallest total shortfall from each vector's own
/// optimum at a shared index, with the index of the first vector's optimum.
/// Zero means a common maximizer (or minimizer when `minimize`) exists.
fn argmax_disagreement(terms: [&Vec<f64>; 2], minimize: bool) -> (f64, usize) {
    let sign = if minimize { -1.0 } else { 1.0 };
    let best = terms.map(|t| t.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max));
    let shortfall = (0..terms[0].len())
        .map(|k| (0..2).map(|s| best[s] - sign * terms[s][k]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let r = (0..terms[0].len())
        .find(|&k| sign * terms[0][k] >= best[0])
        .unwrap_or(0);
    (shortfall, r)
}

/// Fréchet envelopes on the grid product, mixed over covariates only
/// (`marginal`) and over `(s, x)` cells (`conditional`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JensenEnvelopes {
    pub lower_marginal: Vec<Vec<f64>>,
    pub lower_conditional: Vec<Vec<f64>>,
    pub upper_marginal: Vec<Vec<f64>>,
    pub upper_conditional: Vec<Vec<f64>>,
}

impl JensenEnvelopes {
    /// Largest violation of `lower_marginal <= lower_conditional` and
    /// `upper_conditional <= upper_marginal`.
    pub fn max_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.lower_marginal.len() {
            for j in 0..self.lower_marginal[i].len() {
                worst = worst
                    .max(self.lower_marginal[i][j] - self.lower_conditional[i][j])
                    .max(self.upper_conditional[i][j] - self.upper_marginal[i][j]);
            }
        }
        worst
    }
}

pub fn jensen_envelopes(system: &IdentifiedCdfSystem) -> JensenEnvelopes {
    let n1 = system.grids[1].len();
    let n0 = system.grids[0].len();
    let zero = vec![vec![0.0; n0]; n1];
    let mut env = JensenEnvelopes {
        lower_marginal: zero.clone(),
        lower_conditional: zero.clone(),
        upper_marginal: zero.clone(),
        upper_conditional: zero,
    };
    let m = |u: f64, v: f64| (u + v - 1.0).max(0.0);
    let w = |u: f64, v: f64| u.min(v);
    for c in &system.cells {
        let e1 = c.experimental[1].values();
        let e0 = c.experimental[0].values();
        for i in 0..n1 {
            for j in 0..n0 {
                env.lower_marginal[i][j] += c.p_x * m(e1[i], e0[j]);
                env.upper_marginal[i][j] += c.p_x * w(e1[i], e0[j]);
                for s in 0..2u8 {
                    let p = c.p_x * c.p_s(s);
                    let u = c.conditional[1][s as usize].values()[i];
                    let v = c.conditional[0][s as usize].values()[j];
                    env.lower_conditional[i][j] += p * m(u, v);
                    env.upper_conditional[i][j] += p * w(u, v);
                }
            }
        }
    }
    env
}
