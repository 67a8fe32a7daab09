//! JSON report types. `SCHEMA_VERSION` changes whenever a field is renamed
//! or removed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::bounds_analytic::{BoundsInterval, GainReport, GainVerdict};
use crate::dataset::OverlapReport;
use crate::identify::{RepairEvent, SelectionProbabilities};
use crate::verify::oracles::{ContinuousIntervals, SuiteReport};
use crate::verify::BlockPopulation;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "dtebounds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport {
    pub psi: String,
    pub shape: String,
    pub population: String,
    pub p_population: f64,
}

/// Bounds on the opposite strict indicator and the implied tie mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanionReport {
    pub psi: String,
    pub experimental_only: Option<(f64, f64)>,
    pub combined: Option<(f64, f64)>,
    pub tie_mass_experimental_only: Option<(f64, f64)>,
    pub tie_mass_combined: Option<(f64, f64)>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureResidual {
    pub x: String,
    pub d0: f64,
    pub d1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    pub n_records: usize,
    pub grid_size: usize,
    pub overlap: OverlapReport,
    pub selection_probabilities: SelectionProbabilities,
    pub mixture_residuals: Vec<MixtureResidual>,
    pub repairs: Vec<RepairEvent>,
    pub repair_total: f64,
    pub gain: Option<GainReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub estimand: EstimandReport,
    pub experimental_only: Option<BoundsInterval>,
    pub combined: Option<BoundsInterval>,
    pub width_reduction_pct: Option<f64>,
    pub companion: Option<CompanionReport>,
    pub diagnostics: ReportDiagnostics,
}

fn verdict_name(g: &GainReport) -> &'static str {
    match g.verdict {
        GainVerdict::NoGainPredicted => "no gain predicted",
        GainVerdict::GainPredicted => "gain predicted",
    }
}

impl BoundsReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} over population {} ({})",
            self.estimand.psi, self.estimand.population, self.estimand.shape
        );
        let _ = writeln!(out, "{:<20} {:>10} {:>10} {:>10}", "regime", "lower", "upper", "width");
        for (name, b) in [
            ("experimental-only", &self.experimental_only),
            ("combined", &self.combined),
        ] {
            if let Some(b) = b {
                let _ = writeln!(
                    out,
                    "{name:<20} {:>10.4} {:>10.4} {:>10.4}",
                    b.lower,
                    b.upper,
                    b.width()
                );
            }
        }
        if let Some(r) = self.width_reduction_pct {
            let _ = writeln!(out, "width reduction: {r:.1}%");
        }
        if let Some(g) = &self.diagnostics.gain {
            let _ = writeln!(out, "gain diagnostic: {}", verdict_name(g));
        }
        for n in &self.diagnostics.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceCell {
    pub x: String,
    pub p_exp: f64,
    pub p_obs: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub note: String,
    pub cells: Vec<BalanceCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub n_records: usize,
    pub overlap: OverlapReport,
    pub balance: BalanceReport,
    pub mixture_residuals: Vec<MixtureResidual>,
    pub repairs: Vec<RepairEvent>,
    pub gain: Option<GainReport>,
}

impl CheckReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>8} {:>8}  overlap",
            "cell", "d0,exp", "d0,obs", "d1,exp", "d1,obs"
        );
        for c in &self.overlap.cells {
            let k = c.counts;
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:>8} {:>8} {:>8}  {}",
                c.cell,
                k[0][0],
                k[0][1],
                k[1][0],
                k[1][1],
                if c.pass { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "balance ({})", self.balance.note);
        for b in &self.balance.cells {
            let _ = writeln!(
                out,
                "  {:<14} exp {:.4}  obs {:.4}  diff {:+.4}",
                b.x, b.p_exp, b.p_obs, b.difference
            );
        }
        if let Some(g) = &self.gain {
            let _ = writeln!(out, "gain diagnostic: {}", verdict_name(g));
        }
        out
    }
}

/// Sidecar written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruths {
    pub schema_version: u32,
    pub tool_version: String,
    pub population: Option<BlockPopulation>,
    pub fixture: Option<PathBuf>,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub arm_probs: [f64; 3],
    pub psi: String,
    /// True value on the discretized population.
    pub theta: f64,
    pub exact_continuous: Option<ContinuousIntervals>,
    pub exact_discrete_experimental_only: Option<(f64, f64)>,
    pub exact_discrete_combined: Option<(f64, f64)>,
    pub fixture_truths: BTreeMap<String, f64>,
}

impl SimulationTruths {
    pub fn table(&self, csv: &Path) -> String {
        let mut out = format!("wrote {} records to {}\n", self.n, csv.display());
        let _ = writeln!(out, "true {}: {:.4}", self.psi, self.theta);
        if let Some(c) = &self.exact_continuous {
            let _ = writeln!(
                out,
                "exact intervals: experimental-only [{:.4}, {:.4}], combined [{:.4}, {:.4}]",
                c.experimental.0, c.experimental.1, c.combined.0, c.combined.1
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

impl OracleReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let _ = writeln!(
                out,
                "{:<20} {:>6} instances  max deviation {:.3e} (tol {:.0e})  {}",
                s.name,
                s.instances,
                s.max_deviation,
                s.tolerance,
                if s.pass { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub exit_code: i32,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: ErrorDetail,
}
