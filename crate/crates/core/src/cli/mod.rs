//! Command-line front end: argument parsing, the four commands and the
//! JSON reports they write.

pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use report::*;

use crate::bounds_analytic::{analytic_bounds, gain_diagnostic, BoundsInterval, Regime};
use crate::bounds_lp::dump::write_lp;
use crate::bounds_lp::{build_lp, sharp_bounds_lp, ConstraintOptions, Sense};
use crate::dataset::{build_grid, load_csv, load_x_marginal, validate_overlap, write_csv, CsvSchema, Dataset, GridPolicy};
use crate::error::{Error, Result};
use crate::identify::{identify_system, margins_pmf, CellSystem, IdentifiedCdfSystem};
use crate::params::{
    estimate_nuisances, materialize_psi, population_weight, CellWeight, PhiForm, PhiSpec,
    Population, PopulationWeights, PsiFamily, PsiShape, PsiSpec, PsiTable,
};
use crate::verify::oracles::{block_intervals, run_suites, SuiteOptions};
use crate::verify::{block_population, discretize_population, sample_drpt, SyntheticPopulation};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ORACLE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_OVERLAP: i32 = 3;
pub const EXIT_LP: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dtebounds", version, about = "Sharp bounds on distributional treatment effects")]
pub struct Cli {
    /// Worker threads for the per-cell computations (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute identified intervals from a CSV.
    Bounds(RunConfig),
    /// Overlap, balance, mixture residuals and the gain verdict.
    Check(CheckConfig),
    /// Draw a simulated trial from a reference population.
    Simulate(SimulateConfig),
    /// Run the oracle equivalence suites.
    Oracle(OracleConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeChoice {
    Both,
    Exp,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RunConfig {
    /// Input CSV with columns y, d, g and optional x, w.
    #[arg(long)]
    pub input: PathBuf,
    /// fraction-benefit | fraction-harmed | te-cdf:<d> | ate-disadv:<c> | upward:<c> | correlation | custom:<csv>
    #[arg(long, default_value = "fraction-benefit")]
    pub psi: String,
    /// all | s=0 | s=1 | x=<label> | g=exp | g=obs
    #[arg(long, default_value = "all")]
    pub population: String,
    #[arg(long, value_enum, default_value_t = RegimeChoice::Both)]
    pub regime: RegimeChoice,
    /// Impose mutual stochastic monotonicity (linear program).
    #[arg(long)]
    pub msi: bool,
    /// Impose generalized Roy selection (linear program).
    #[arg(long)]
    pub grm: bool,
    /// Use the linear program even when closed forms apply.
    #[arg(long)]
    pub lp: bool,
    /// union | equal:<k> | quantile:<k>
    #[arg(long, default_value = "union")]
    pub grid: String,
    /// CSV with columns x, p giving the covariate distribution.
    #[arg(long)]
    pub x_marginal: Option<PathBuf>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the combined-regime maximization program in text form.
    #[arg(long)]
    pub dump_lp: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CheckConfig {
    #[arg(long)]
    pub input: PathBuf,
    /// Estimand for the gain verdict.
    #[arg(long, default_value = "fraction-benefit")]
    pub psi: String,
    #[arg(long, default_value = "union")]
    pub grid: String,
    #[arg(long)]
    pub x_marginal: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// Mass of the block y1 > 0 >= y0 given S = 1.
    #[arg(long, default_value_t = 0.8)]
    pub a: f64,
    #[arg(long, default_value_t = 0.2)]
    pub b: f64,
    /// Grid points per axis of the discretized population.
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    /// Population JSON fixture to sample instead of the block population.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Arm probabilities: exp-treat, exp-control, self-select.
    #[arg(long, default_value = "0.25,0.25,0.5")]
    pub arm_probs: String,
    /// Output CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Truths sidecar (default: the output path with `.truths.json`).
    #[arg(long)]
    pub truths: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OracleConfig {
    #[arg(long, default_value_t = SuiteOptions::default().seed)]
    pub seed: u64,
    /// Random instances in the LP suite.
    #[arg(long, default_value_t = SuiteOptions::default().instances)]
    pub instances: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Perturb the values under test (harness check).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Which intervals to compute and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub regime: RegimeChoice,
    pub constraints: ConstraintOptions,
    pub force_lp: bool,
}

impl EngineOptions {
    pub fn uses_lp(&self) -> bool {
        self.force_lp || self.constraints.msi || self.constraints.grm
    }
}

/// A validated bounds request.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRun {
    pub family: PsiFamily,
    pub population: Population,
    pub grid: GridPolicy,
    pub engine: EngineOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<ValidatedRun> {
        let family = PsiFamily::parse(&self.psi)?;
        let population: Population = self.population.parse()?;
        let grid: GridPolicy = self.grid.parse()?;
        if self.regime == RegimeChoice::Exp {
            if matches!(population, Population::Selection(_)) {
                return Err(Error::invalid(format!(
                    "population {population} is defined by the self-selection choice, which only \
                     the observational arm reveals; use --regime combined or both"
                )));
            }
            if self.msi || self.grm {
                return Err(Error::invalid(
                    "--msi and --grm restrict the combined-data program; drop --regime exp",
                ));
            }
        }
        let engine = EngineOptions {
            regime: self.regime,
            constraints: ConstraintOptions {
                msi: self.msi,
                grm: self.grm,
            },
            force_lp: self.lp,
        };
        Ok(ValidatedRun {
            family,
            population,
            grid,
            engine,
        })
    }
}

/// Intervals for the requested regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeIntervals {
    pub experimental_only: Option<BoundsInterval>,
    pub combined: Option<BoundsInterval>,
}

impl RegimeIntervals {
    /// Percentage by which the combined interval is narrower.
    pub fn width_reduction_pct(&self) -> Option<f64> {
        let (e, c) = (self.experimental_only.as_ref()?, self.combined.as_ref()?);
        (e.width() > 0.0).then(|| 100.0 * (1.0 - c.width() / e.width()))
    }
}

/// The system seen by the experimental-only regime: every cell behaves as a
/// single selection group whose margins are the experimental ones.
fn experimental_view(
    system: &IdentifiedCdfSystem,
    weights: &PopulationWeights,
) -> Result<(IdentifiedCdfSystem, PopulationWeights)> {
    let cells = system
        .cells
        .iter()
        .map(|c| CellSystem {
            x: c.x.clone(),
            p_x: c.p_x,
            p_s1: 1.0,
            experimental: c.experimental.clone(),
            conditional: [0, 1].map(|d| [c.experimental[d].clone(), c.experimental[d].clone()]),
            mixture_residual: [0.0; 2],
        })
        .collect();
    let view = IdentifiedCdfSystem::from_cells(system.grids.clone(), cells)?;
    let w = PopulationWeights {
        population: weights.population.clone(),
        cells: weights
            .by_x()
            .into_iter()
            .flat_map(|(x, w)| {
                [
                    CellWeight {
                        x: x.clone(),
                        s: 0,
                        weight: 0.0,
                    },
                    CellWeight { x, s: 1, weight: w },
                ]
            })
            .collect(),
        normalizer: weights.normalizer,
    };
    Ok((view, w))
}

fn experimental_lp(
    system: &IdentifiedCdfSystem,
    psi: &PsiTable,
    weights: &PopulationWeights,
) -> Result<BoundsInterval> {
    if matches!(weights.population, Population::Selection(_)) {
        return Err(Error::invalid(
            "selection populations need the observational arm; \
             the experimental-only regime cannot target them",
        ));
    }
    let (view, w) = experimental_view(system, weights)?;
    let mut out = sharp_bounds_lp(&view, psi, &w, ConstraintOptions::default())?;
    out.regime = Regime::ExperimentalOnly;
    for c in &mut out.cells {
        c.s = None;
    }
    Ok(out)
}

/// Computes the requested intervals. Closed forms are used when `ψ` admits
/// them and no restriction or `force_lp` asks for the program.
pub fn compute_intervals(
    system: &IdentifiedCdfSystem,
    psi: &PsiTable,
    weights: &PopulationWeights,
    opts: &EngineOptions,
) -> Result<RegimeIntervals> {
    let general = matches!(psi.shape, PsiShape::General);
    let experimental_only = match opts.regime {
        RegimeChoice::Combined => None,
        _ if general || opts.force_lp => Some(experimental_lp(system, psi, weights)?),
        _ => Some(analytic_bounds(system, psi, weights, Regime::ExperimentalOnly)?),
    };
    let combined = match opts.regime {
        RegimeChoice::Exp => None,
        _ if general || opts.uses_lp() => {
            Some(sharp_bounds_lp(system, psi, weights, opts.constraints)?)
        }
        _ => Some(analytic_bounds(system, psi, weights, Regime::Combined)?),
    };
    Ok(RegimeIntervals {
        experimental_only,
        combined,
    })
}

/// Strict-inequality counterpart reported next to the fraction estimands.
fn companion_family(family: &PsiFamily) -> Option<PsiFamily> {
    match family {
        PsiFamily::FractionBenefit => Some(PsiFamily::FractionHarmed),
        PsiFamily::FractionHarmed => Some(PsiFamily::FractionBenefit),
        _ => None,
    }
}

fn family_name(family: &PsiFamily) -> String {
    match family {
        PsiFamily::FractionBenefit => "fraction-benefit".into(),
        PsiFamily::FractionHarmed => "fraction-harmed".into(),
        PsiFamily::TeCdf(d) => format!("te-cdf:{d}"),
        PsiFamily::AteDisadvantaged(c) => format!("ate-disadv:{c}"),
        PsiFamily::UpwardMobility(c) => format!("upward:{c}"),
        PsiFamily::Correlation => "correlation".into(),
        PsiFamily::CustomTable(_) => "custom".into(),
    }
}

fn companion(
    system: &IdentifiedCdfSystem,
    family: &PsiFamily,
    weights: &PopulationWeights,
    opts: &EngineOptions,
    main: &RegimeIntervals,
) -> Result<Option<CompanionReport>> {
    let Some(other) = companion_family(family) else {
        return Ok(None);
    };
    let form = match other {
        PsiFamily::FractionBenefit => PhiForm::Difference,
        _ => PhiForm::ReverseDifference,
    };
    let psi = PsiTable::from_phi(
        system.grids[1].clone(),
        system.grids[0].clone(),
        PhiSpec {
            form,
            delta: 0.0,
            complement: true,
        },
    );
    let r = compute_intervals(system, &psi, weights, opts)?;
    let pair = |b: &Option<BoundsInterval>| b.as_ref().map(|b| (b.lower, b.upper));
    // P(Y1 = Y0) = 1 - P(Y1 > Y0) - P(Y1 < Y0), bounded from the two intervals
    let tie = |a: &Option<BoundsInterval>, b: &Option<BoundsInterval>| {
        let (a, b) = (a.as_ref()?, b.as_ref()?);
        Some(((1.0 - a.upper - b.upper).max(0.0), (1.0 - a.lower - b.lower).max(0.0)))
    };
    Ok(Some(CompanionReport {
        psi: family_name(&other),
        experimental_only: pair(&r.experimental_only),
        combined: pair(&r.combined),
        tie_mass_experimental_only: tie(&main.experimental_only, &r.experimental_only),
        tie_mass_combined: tie(&main.combined, &r.combined),
        note: "P(Y1 > Y0) and P(Y1 < Y0) sum to 1 - P(Y1 = Y0); on discrete outcomes \
               the tie mass can be positive, so the two intervals need not be complements"
            .into(),
    }))
}

fn load_dataset(input: &Path, x_marginal: Option<&Path>) -> Result<Dataset> {
    let ds = load_csv(input, &CsvSchema::default())?;
    match x_marginal {
        Some(p) => ds.with_x_marginal(load_x_marginal(p)?),
        None => Ok(ds),
    }
}

fn mixture_residuals(system: &IdentifiedCdfSystem) -> Vec<MixtureResidual> {
    system
        .cells
        .iter()
        .map(|c| MixtureResidual {
            x: c.x.clone(),
            d0: c.mixture_residual[0],
            d1: c.mixture_residual[1],
        })
        .collect()
}

pub fn cmd_bounds(cfg: &RunConfig) -> Result<BoundsReport> {
    let run = cfg.validate()?;
    let ds = load_dataset(&cfg.input, cfg.x_marginal.as_deref())?;
    let overlap = validate_overlap(&ds);
    let grid = build_grid(&ds, run.grid)?;
    let system = identify_system(&ds, &grid)?;
    let spec = PsiSpec {
        family: run.family.clone(),
        population: run.population.clone(),
    };
    let nuis = estimate_nuisances(&ds, &spec)?;
    let psi = materialize_psi(&spec, &nuis, &system.grids[1], &system.grids[0])?;
    let weights = population_weight(&run.population, &system, Some(&ds))?;
    // written before solving so a failing program can still be inspected
    if let Some(path) = &cfg.dump_lp {
        let p = build_lp(&margins_pmf(&system), &psi, &weights, run.engine.constraints, Sense::Max)?;
        std::fs::write(path, write_lp(&p)).map_err(|e| Error::io(path, e))?;
    }
    let intervals = compute_intervals(&system, &psi, &weights, &run.engine)?;

    let mut notes = Vec::new();
    let gain = match psi.shape {
        PsiShape::General => {
            notes.push("gain diagnostic skipped: psi is neither modular nor an indicator".into());
            None
        }
        _ => Some(gain_diagnostic(&system, &psi)?),
    };
    if system.total_repair_magnitude() > 0.0 {
        notes.push(format!(
            "counterfactual CDFs were repaired (total magnitude {:e}); see repairs",
            system.total_repair_magnitude()
        ));
    }
    let companion = companion(&system, &run.family, &weights, &run.engine, &intervals)?;
    Ok(BoundsReport {
        schema_version: SCHEMA_VERSION,
        tool: TOOL.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        estimand: EstimandReport {
            psi: family_name(&run.family),
            shape: psi.shape.name().into(),
            population: run.population.to_string(),
            p_population: nuis.p_population,
        },
        width_reduction_pct: intervals.width_reduction_pct(),
        experimental_only: intervals.experimental_only,
        combined: intervals.combined,
        companion,
        diagnostics: ReportDiagnostics {
            n_records: ds.len(),
            grid_size: system.grids[1].len(),
            overlap,
            selection_probabilities: system.selection_probabilities(),
            mixture_residuals: mixture_residuals(&system),
            repairs: system.repairs.clone(),
            repair_total: system.total_repair_magnitude(),
            gain,
            notes,
        },
    })
}

pub fn cmd_check(cfg: &CheckConfig) -> Result<CheckReport> {
    let family = PsiFamily::parse(&cfg.psi)?;
    let policy: GridPolicy = cfg.grid.parse()?;
    let ds = load_dataset(&cfg.input, cfg.x_marginal.as_deref())?;
    let overlap = validate_overlap(&ds);
    let balance = balance_table(&ds)?;
    let mut report = CheckReport {
        schema_version: SCHEMA_VERSION,
        tool: TOOL.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        n_records: ds.len(),
        overlap,
        balance,
        mixture_residuals: Vec::new(),
        repairs: Vec::new(),
        gain: None,
    };
    if !report.overlap.pass {
        return Ok(report);
    }
    let grid = build_grid(&ds, policy)?;
    let system = identify_system(&ds, &grid)?;
    let spec = PsiSpec {
        family,
        population: Population::All,
    };
    let nuis = estimate_nuisances(&ds, &spec)?;
    let psi = materialize_psi(&spec, &nuis, &system.grids[1], &system.grids[0])?;
    report.mixture_residuals = mixture_residuals(&system);
    report.repairs = system.repairs.clone();
    if !matches!(psi.shape, PsiShape::General) {
        report.gain = Some(gain_diagnostic(&system, &psi)?);
    }
    Ok(report)
}

fn balance_table(ds: &Dataset) -> Result<BalanceReport> {
    use crate::dataset::Source;
    let total = ds.weight_where(|_| true);
    let share = |g: Source| ds.weight_where(|r| r.g == g) / total;
    let (pe, po) = (share(Source::Exp), share(Source::Obs));
    let cells = ds
        .covariate_cells()
        .iter()
        .map(|x| {
            let within = |g: Source, p: f64| {
                if p > 0.0 {
                    ds.weight_where(|r| r.g == g && &r.x == x) / total / p
                } else {
                    0.0
                }
            };
            let (e, o) = (within(Source::Exp, pe), within(Source::Obs, po));
            BalanceCell {
                x: x.clone(),
                p_exp: e,
                p_obs: o,
                difference: o - e,
            }
        })
        .collect();
    Ok(BalanceReport {
        note: "descriptive only: that the experimental and observational arms sample the same \
               population cannot be tested from these frequencies"
            .into(),
        cells,
    })
}

fn parse_arm_probs(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad arm probability `{t}`")))
        })
        .collect::<Result<_>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| Error::invalid("expected three arm probabilities"))
}

fn fraction_benefit_table(pop: &SyntheticPopulation) -> PsiTable {
    PsiTable::from_phi(
        pop.grid1.clone(),
        pop.grid0.clone(),
        PhiSpec {
            form: PhiForm::Difference,
            delta: 0.0,
            complement: true,
        },
    )
}

/// Exact fraction-benefit truth and intervals of a discrete population.
pub fn population_truths(pop: &SyntheticPopulation) -> Result<(f64, RegimeIntervals)> {
    let system = pop.identified_system()?;
    let weights = population_weight(&Population::All, &system, None)?;
    let psi = fraction_benefit_table(pop);
    let opts = EngineOptions {
        regime: RegimeChoice::Both,
        constraints: ConstraintOptions::default(),
        force_lp: false,
    };
    let intervals = compute_intervals(&system, &psi, &weights, &opts)?;
    Ok((pop.true_theta(&psi, &weights), intervals))
}

pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<SimulationTruths> {
    if cfg.n == 0 {
        return Err(Error::invalid("--n must be positive"));
    }
    let arm_probs = parse_arm_probs(&cfg.arm_probs)?;
    let (pop, continuous, block) = match &cfg.fixture {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            (SyntheticPopulation::from_json(&text)?, None, None)
        }
        None => {
            let block = block_population(cfg.a, cfg.b)?;
            (
                discretize_population(&block, cfg.k)?,
                Some(block_intervals(&block)),
                Some(block),
            )
        }
    };
    let (ds, _) = sample_drpt(&pop, cfg.n, arm_probs, cfg.seed)?;
    let (theta, exact) = population_truths(&pop)?;
    let span = |b: &Option<BoundsInterval>| b.as_ref().map(|b| (b.lower, b.upper));
    let truths = SimulationTruths {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        population: block,
        fixture: cfg.fixture.clone(),
        k: pop.grid1.len(),
        n: cfg.n,
        seed: cfg.seed,
        arm_probs,
        psi: "fraction-benefit".into(),
        theta,
        exact_continuous: continuous,
        exact_discrete_experimental_only: span(&exact.experimental_only),
        exact_discrete_combined: span(&exact.combined),
        fixture_truths: pop.truths.clone(),
    };
    let file = std::fs::File::create(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write_csv(&ds, std::io::BufWriter::new(file))?;
    let sidecar = cfg
        .truths
        .clone()
        .unwrap_or_else(|| cfg.output.with_extension("truths.json"));
    write_json(Some(&sidecar), &truths)?;
    Ok(truths)
}

pub fn cmd_oracle(cfg: &OracleConfig) -> Result<OracleReport> {
    let opts = SuiteOptions {
        seed: cfg.seed,
        instances: cfg.instances,
        fault: cfg.inject_fault,
    };
    let suites = run_suites(&opts)?;
    Ok(OracleReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        pass: suites.iter().all(|s| s.pass),
        suites,
    })
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Overlap { .. } => EXIT_OVERLAP,
        Error::Infeasible(_) | Error::Solver(_) => EXIT_LP,
        _ => EXIT_VALIDATION,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Csv(_) => "csv",
        Error::MalformedRow { .. } => "malformed-row",
        Error::MissingColumn(_) => "missing-column",
        Error::Empty(_) => "empty",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::EmptyCondition(_) => "empty-condition",
        Error::Overlap { .. } => "overlap",
        Error::ZeroProbability(_) => "zero-probability",
        Error::ShapeMismatch(_) => "shape-mismatch",
        Error::InconsistentMargins(_) => "inconsistent-margins",
        Error::Infeasible(_) => "infeasible",
        Error::Solver(_) => "solver",
    }
}

pub fn error_body(e: &Error) -> ErrorReport {
    ErrorReport {
        error: ErrorDetail {
            exit_code: exit_code(e),
            kind: error_kind(e).into(),
            message: e.to_string(),
        },
    }
}

/// Pretty JSON with a trailing newline, to `path` or standard output.
pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Human-readable lines go to standard output when the JSON went to a file
/// and to standard error otherwise.
fn print_human(json_to_file: bool, text: &str) {
    if json_to_file {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
}

fn dispatch(command: &Command) -> Result<i32> {
    match command {
        Command::Bounds(cfg) => {
            let report = cmd_bounds(cfg)?;
            write_json(cfg.output.as_deref(), &report)?;
            print_human(cfg.output.is_some(), &report.table());
            Ok(EXIT_OK)
        }
        Command::Check(cfg) => {
            let report = cmd_check(cfg)?;
            write_json(cfg.output.as_deref(), &report)?;
            print_human(cfg.output.is_some(), &report.table());
            Ok(if report.overlap.pass { EXIT_OK } else { EXIT_OVERLAP })
        }
        Command::Simulate(cfg) => {
            let truths = cmd_simulate(cfg)?;
            print!("{}", truths.table(&cfg.output));
            Ok(EXIT_OK)
        }
        Command::Oracle(cfg) => {
            let report = cmd_oracle(cfg)?;
            write_json(cfg.output.as_deref(), &report)?;
            print_human(cfg.output.is_some(), &report.table());
            Ok(if report.pass { EXIT_OK } else { EXIT_ORACLE })
        }
    }
}

/// Runs a parsed command line and returns the process exit code. Errors
/// are printed as a JSON body on standard output.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(Error::invalid(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let body = error_body(&e);
            if write_json(None, &body).is_err() {
                eprintln!("{e}");
            }
            body.error.exit_code
        }
    }
}
