//! Acceptance criteria. Each criterion prints one `PASS`, `FAIL` or `SKIP`
//! line; the test fails if any line is `FAIL`.
//!
//! Criterion 9 needs the original trial CSV. Point `DTEBOUNDS_TRIAL_CSV`
//! at it (columns y, d, g and optionally x) and, optionally, set
//! `DTEBOUNDS_TRIAL_EXPECT` to `exp_lo,exp_hi,comb_lo,comb_hi` for the
//! candidate in that file.

mod common;

use std::path::Path;
use std::time::Instant;

use dtebounds::bounds_analytic::{
    analytic_bounds, gain_diagnostic, jensen_envelopes, phi_indicator_bounds, supermodular_bounds,
    BoundsInterval, GainVerdict, Regime,
};
use dtebounds::bounds_lp::{sharp_bounds_lp, ConstraintOptions};
use dtebounds::cli::{cmd_bounds, RegimeChoice, RunConfig};
use dtebounds::dataset::write_csv;
use dtebounds::params::{population_weight, PhiForm, PhiSpec, Population, PsiShape, PsiTable};
use dtebounds::verify::oracles::{
    instance_psis, permutation_suite, random_grid, random_instance,
    SuiteOptions,
};
use dtebounds::verify::{
    block_population, discretize_population, sample_drpt, selection_on_observables,
    SyntheticPopulation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: u8,
    verdict: Verdict,
    detail: String,
}

impl Line {
    fn new(id: u8, ok: bool, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Self { id, verdict, detail }
    }

    fn print(&self) {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("{tag} criterion {:>2}: {}", self.id, self.detail);
    }
}

const K: usize = 200;
/// Grid size for block-population programs with the monotonicity rows, whose
/// dense tableau grows quickly with the grid.
const K_MSI: usize = 12;
const N_SAMPLED: usize = 100_000;
const SEED: u64 = 20_240_601;
const ARMS: [f64; 3] = [0.25, 0.25, 0.5];

fn fraction_benefit(pop: &SyntheticPopulation) -> PsiTable {
    PsiTable::from_phi(
        pop.grid1.clone(),
        pop.grid0.clone(),
        PhiSpec { form: PhiForm::Difference, delta: 0.0, complement: true },
    )
}

fn span(b: &BoundsInterval) -> (f64, f64) {
    (b.lower, b.upper)
}

fn near(got: (f64, f64), want: (f64, f64), tol: f64) -> bool {
    (got.0 - want.0).abs() <= tol && (got.1 - want.1).abs() <= tol
}

/// Exact intervals of a block population on the `K` grid.
#[derive(Debug, Clone, Serialize)]
struct BlockExact {
    a: f64,
    truth: f64,
    experimental: (f64, f64),
    combined: (f64, f64),
    coarse: CoarseLp,
}

/// Unconstrained and constrained programs on the coarse grid.
#[derive(Debug, Clone, Serialize)]
struct CoarseLp {
    experimental: (f64, f64),
    combined: (f64, f64),
    msi: (f64, f64),
    grm: (f64, f64),
    msi_grm: (f64, f64),
}

fn block_exact(a: f64) -> BlockExact {
    let block = block_population(a, 1.0 - a).unwrap();
    let pop = discretize_population(&block, K).unwrap();
    let sys = pop.identified_system().unwrap();
    let w = population_weight(&Population::All, &sys, None).unwrap();
    let psi = fraction_benefit(&pop);
    let e = analytic_bounds(&sys, &psi, &w, Regime::ExperimentalOnly).unwrap();
    let c = analytic_bounds(&sys, &psi, &w, Regime::Combined).unwrap();

    let small = discretize_population(&block, K_MSI).unwrap();
    let ssys = small.identified_system().unwrap();
    let sw = population_weight(&Population::All, &ssys, None).unwrap();
    let spsi = fraction_benefit(&small);
    let lp = |msi, grm| span(&sharp_bounds_lp(&ssys, &spsi, &sw, ConstraintOptions { msi, grm }).unwrap());
    let coarse = CoarseLp {
        experimental: span(&analytic_bounds(&ssys, &spsi, &sw, Regime::ExperimentalOnly).unwrap()),
        combined: lp(false, false),
        msi: lp(true, false),
        grm: lp(false, true),
        msi_grm: lp(true, true),
    };
    BlockExact {
        a,
        truth: pop.true_theta(&psi, &w),
        experimental: span(&e),
        combined: span(&c),
        coarse,
    }
}

/// Runs the full data pipeline on a DRPT sample written to `dir`.
fn sampled_report(
    dir: &Path,
    name: &str,
    pop: &SyntheticPopulation,
    n: usize,
    arms: [f64; 3],
    seed: u64,
) -> dtebounds::cli::report::BoundsReport {
    let (ds, _) = sample_drpt(pop, n, arms, seed).unwrap();
    let path = dir.join(name);
    write_csv(&ds, std::fs::File::create(&path).unwrap()).unwrap();
    cmd_bounds(&RunConfig {
        input: path,
        psi: "fraction-benefit".into(),
        population: "all".into(),
        regime: RegimeChoice::Both,
        msi: false,
        grm: false,
        lp: false,
        grid: "union".into(),
        x_marginal: None,
        output: None,
        dump_lp: None,
    })
    .unwrap()
}

fn interval_pair(r: &dtebounds::cli::report::BoundsReport) -> ((f64, f64), (f64, f64)) {
    (
        span(r.experimental_only.as_ref().unwrap()),
        span(r.combined.as_ref().unwrap()),
    )
}

fn contains(iv: (f64, f64), v: f64, slack: f64) -> bool {
    iv.0 - slack <= v && v <= iv.1 + slack
}

fn nested(inner: (f64, f64), outer: (f64, f64), tol: f64) -> bool {
    inner.0 >= outer.0 - tol && inner.1 <= outer.1 + tol
}

/// Random-instance results behind criteria 4 and 6.
#[derive(Debug, Clone, Serialize)]
struct InstanceResult {
    lp: (f64, f64),
    closed_form: (f64, f64),
    experimental: (f64, f64),
    msi: Option<(f64, f64)>,
    grm: Option<(f64, f64)>,
    msi_grm: Option<(f64, f64)>,
}

fn random_instances(count: usize) -> Vec<InstanceResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut out = Vec::new();
    for _ in 0..count {
        let pop = random_instance(&mut rng);
        let sys = pop.identified_system().unwrap();
        let w = population_weight(&Population::All, &sys, None).unwrap();
        for psi in instance_psis(&mut rng, &pop) {
            let lp = sharp_bounds_lp(&sys, &psi, &w, ConstraintOptions::default()).unwrap();
            let closed = match psi.shape {
                PsiShape::PhiIndicator { .. } => phi_indicator_bounds(&sys, &psi, &w, Regime::Combined),
                _ => supermodular_bounds(&sys, &psi, &w, Regime::Combined),
            }
            .unwrap();
            let e = analytic_bounds(&sys, &psi, &w, Regime::ExperimentalOnly).unwrap();
            // restricted programs may be infeasible on a random population
            let lp_opt = |msi, grm| {
                sharp_bounds_lp(&sys, &psi, &w, ConstraintOptions { msi, grm }).ok().map(|b| span(&b))
            };
            out.push(InstanceResult {
                lp: span(&lp),
                closed_form: span(&closed),
                experimental: span(&e),
                msi: lp_opt(true, false),
                grm: lp_opt(false, true),
                msi_grm: lp_opt(true, true),
            });
        }
    }
    out
}

fn sel_obs_population() -> SyntheticPopulation {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let g1 = random_grid(&mut rng, 5);
    let g0 = random_grid(&mut rng, 5);
    let mut joint = || -> Vec<Vec<f64>> {
        (0..5).map(|_| (0..5).map(|_| rng.gen_range(0.1..1.0)).collect()).collect()
    };
    let cells = vec![
        ("lo".to_string(), 0.45, 0.3, joint()),
        ("hi".to_string(), 0.55, 0.65, joint()),
    ];
    selection_on_observables(g1, g0, &cells).unwrap()
}

/// Everything criterion 10 compares across runs and thread counts.
#[derive(Debug, Serialize)]
struct Artifacts {
    block: Vec<BlockExact>,
    sampled: Vec<((f64, f64), (f64, f64))>,
    instances: Vec<InstanceResult>,
    permutation_max_deviation: f64,
    sel_obs_sampled: ((f64, f64), (f64, f64)),
    sel_obs_gain: GainVerdict,
    jensen_violation: f64,
}

fn artifacts(dir: &Path) -> Artifacts {
    let block = vec![block_exact(0.8), block_exact(1.0)];
    let sampled = [0.8, 1.0]
        .iter()
        .map(|&a| {
            let pop = discretize_population(&block_population(a, 1.0 - a).unwrap(), K).unwrap();
            interval_pair(&sampled_report(dir, &format!("app{a}.csv"), &pop, N_SAMPLED, ARMS, SEED))
        })
        .collect();
    let sel = sel_obs_population();
    let sys = sel.identified_system().unwrap();
    let report = sampled_report(dir, "selobs.csv", &sel, N_SAMPLED, ARMS, SEED);
    let jensen = {
        let pop = discretize_population(&block_population(0.8, 0.2).unwrap(), 50).unwrap();
        jensen_envelopes(&pop.identified_system().unwrap()).max_violation()
    };
    Artifacts {
        block,
        sampled,
        instances: random_instances(200),
        permutation_max_deviation: permutation_suite(&SuiteOptions::default(), 50).unwrap().max_deviation,
        sel_obs_sampled: interval_pair(&report),
        sel_obs_gain: gain_diagnostic(&sys, &fraction_benefit(&sel)).unwrap().verdict,
        jensen_violation: jensen,
    }
}

fn criterion_1() -> Line {
    let t = Instant::now();
    let block = block_population(0.8, 0.2).unwrap();
    let pop = discretize_population(&block, K).unwrap();
    let sys = pop.identified_system().unwrap();
    let w = population_weight(&Population::All, &sys, None).unwrap();
    let psi = fraction_benefit(&pop);
    let e = span(&analytic_bounds(&sys, &psi, &w, Regime::ExperimentalOnly).unwrap());
    let c = span(&analytic_bounds(&sys, &psi, &w, Regime::Combined).unwrap());
    let secs = t.elapsed().as_secs_f64();
    let ok = near(e, (0.0, 1.0), 0.01) && near(c, (0.3, 0.7), 0.01) && secs < 5.0;
    Line::new(
        1,
        ok,
        format!(
            "block population k={K}: experimental-only [{:.4}, {:.4}], combined [{:.4}, {:.4}], {secs:.2} s",
            e.0, e.1, c.0, c.1
        ),
    )
}

fn criterion_2(roy: &BlockExact) -> Line {
    let (lo, hi) = roy.combined;
    let ok = hi - lo <= 0.01 && ((lo + hi) / 2.0 - 0.5).abs() <= 0.005;
    Line::new(2, ok, format!("Roy case combined [{lo:.4}, {hi:.4}], width {:.4}", hi - lo))
}

fn criterion_3(exact: &[BlockExact], sampled: &[((f64, f64), (f64, f64))]) -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for (ex, (se, sc)) in exact.iter().zip(sampled) {
        ok &= (ex.truth - 0.5).abs() < 1e-12;
        ok &= contains(ex.experimental, 0.5, 1e-12) && contains(ex.combined, 0.5, 1e-12);
        ok &= contains(ex.coarse.grm, 0.5, 1e-12);
        ok &= contains(*se, 0.5, 0.01) && contains(*sc, 0.5, 0.01);
        parts.push(format!(
            "a={}: sampled exp [{:.4}, {:.4}] comb [{:.4}, {:.4}]",
            ex.a, se.0, se.1, sc.0, sc.1
        ));
    }
    Line::new(3, ok, format!("truth 0.5 contained (exact and n={N_SAMPLED}); {}", parts.join("; ")))
}

fn criterion_4() -> (Line, Vec<InstanceResult>) {
    let t = Instant::now();
    let res = random_instances(200);
    let secs = t.elapsed().as_secs_f64();
    let worst = res
        .iter()
        .map(|r| (r.lp.0 - r.closed_form.0).abs().max((r.lp.1 - r.closed_form.1).abs()))
        .fold(0.0, f64::max);
    let ok = worst <= 1e-6 && secs < 60.0;
    let line = Line::new(
        4,
        ok,
        format!("200 instances ({} psi): max |lp - closed form| {worst:.2e}, {secs:.2} s", res.len()),
    );
    (line, res)
}

fn criterion_5() -> Line {
    let r = permutation_suite(&SuiteOptions::default(), 50).unwrap();
    let ok = r.max_deviation <= 1e-10 && r.pass;
    Line::new(
        5,
        ok,
        format!("n=2..6, {} tables: max deviation {:.2e}", r.instances, r.max_deviation),
    )
}

fn criterion_6(exact: &[BlockExact], instances: &[InstanceResult]) -> Line {
    const TOL: f64 = 1e-8;
    let mut ok = true;
    let mut restricted = 0;
    for ex in exact {
        ok &= nested(ex.combined, ex.experimental, TOL);
        let c = &ex.coarse;
        ok &= nested(c.combined, c.experimental, TOL);
        for r in [c.msi, c.grm, c.msi_grm] {
            ok &= nested(r, c.combined, TOL);
        }
    }
    for r in instances {
        ok &= nested(r.lp, r.experimental, TOL);
        for x in [r.msi, r.grm, r.msi_grm].into_iter().flatten() {
            ok &= nested(x, r.lp, TOL);
            restricted += 1;
        }
    }
    Line::new(
        6,
        ok,
        format!(
            "block population (k={K}, restricted programs at k={K_MSI}) and {} instance intervals, \
             {restricted} feasible restricted programs",
            instances.len()
        ),
    )
}

fn criterion_7(dir: &Path) -> Line {
    let pop = sel_obs_population();
    let sys = pop.identified_system().unwrap();
    let gain = gain_diagnostic(&sys, &fraction_benefit(&pop)).unwrap();
    let (e, c) = interval_pair(&sampled_report(dir, "selobs.csv", &pop, N_SAMPLED, ARMS, SEED));
    let ok = gain.verdict == GainVerdict::NoGainPredicted && near(e, c, 0.01);
    Line::new(
        7,
        ok,
        format!(
            "S independent of outcomes given X: exp [{:.4}, {:.4}] comb [{:.4}, {:.4}], verdict {:?}",
            e.0, e.1, c.0, c.1, gain.verdict
        ),
    )
}

fn criterion_8() -> Line {
    // continuous population on a 50 x 50 grid of evaluation points
    let block = block_population(0.8, 0.2).unwrap();
    let pts: Vec<f64> = (0..50).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 50.0).collect();
    let m = |u: f64, v: f64| (u + v - 1.0).max(0.0);
    let w = |u: f64, v: f64| u.min(v);
    let mut worst = f64::NEG_INFINITY;
    for &y1 in &pts {
        for &y0 in &pts {
            let (u, v) = (block.marginal_cdf(1, y1), block.marginal_cdf(0, y0));
            let mut lower = 0.0;
            let mut upper = 0.0;
            for s in [0u8, 1] {
                let p = if s == 1 { block.p_s1 } else { 1.0 - block.p_s1 };
                let (us, vs) = (block.cdf(1, s, y1), block.cdf(0, s, y0));
                lower += p * m(us, vs);
                upper += p * w(us, vs);
            }
            worst = worst.max(m(u, v) - lower).max(upper - w(u, v));
        }
    }
    let pop = discretize_population(&block, 50).unwrap();
    let discrete = jensen_envelopes(&pop.identified_system().unwrap()).max_violation();
    let ok = worst <= 1e-12 && discrete <= 1e-12;
    Line::new(
        8,
        ok,
        format!("max envelope violation {worst:.2e} (continuous), {discrete:.2e} (k=50 system)"),
    )
}

fn criterion_9(dir: &Path) -> Line {
    if let Ok(csv) = std::env::var("DTEBOUNDS_TRIAL_CSV") {
        let expect: Vec<f64> = std::env::var("DTEBOUNDS_TRIAL_EXPECT")
            .unwrap_or_else(|_| "0.13,0.90,0.21,0.81".into())
            .split(',')
            .map(|v| v.trim().parse().expect("numeric expectation"))
            .collect();
        let r = cmd_bounds(&RunConfig {
            input: csv.clone().into(),
            psi: "fraction-harmed".into(),
            population: "all".into(),
            regime: RegimeChoice::Both,
            msi: false,
            grm: false,
            lp: false,
            grid: "union".into(),
            x_marginal: None,
            output: None,
            dump_lp: None,
        });
        return match r {
            Ok(r) => {
                let (e, c) = interval_pair(&r);
                let ok = near(e, (expect[0], expect[1]), 0.02) && near(c, (expect[2], expect[3]), 0.02);
                Line::new(
                    9,
                    ok,
                    format!("{csv}: exp [{:.3}, {:.3}] comb [{:.3}, {:.3}]", e.0, e.1, c.0, c.1),
                )
            }
            Err(e) => Line::new(9, false, format!("{csv}: {e}")),
        };
    }
    // stand-in: containment on simulated trials of the same shape
    let pop = discretize_population(&block_population(0.8, 0.2).unwrap(), K).unwrap();
    let arms = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
    let mut missed = 0;
    let trials = 40;
    for t in 0..trials {
        let (ds, _) = sample_drpt(&pop, 483, arms, SEED + t).unwrap();
        if dtebounds::dataset::validate_overlap(&ds).pass {
            let (e, c) = interval_pair(&sampled_report(dir, "small.csv", &pop, 483, arms, SEED + t));
            if !contains(e, 0.5, 0.01) || !contains(c, 0.5, 0.01) {
                missed += 1;
            }
        }
    }
    let detail = format!(
        "no DTEBOUNDS_TRIAL_CSV; stand-in containment on {trials} simulated 483-record \
         three-arm trials: {missed} misses"
    );
    if missed == 0 {
        Line { id: 9, verdict: Verdict::Skip, detail }
    } else {
        Line::new(9, false, detail)
    }
}

fn criterion_10(dir: &Path, first: &str) -> Line {
    let again = serde_json::to_string(&artifacts(dir)).unwrap();
    let in_pool = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| serde_json::to_string(&artifacts(dir)).unwrap())
    };
    let one = in_pool(1);
    let four = in_pool(4);
    let ok = first == again && first == one && first == four;
    Line::new(
        10,
        ok,
        format!("{} bytes of serialized results; repeat, 1-thread and 4-thread runs identical: {ok}", first.len()),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let t = Instant::now();
    let base = artifacts(dir);
    let first = serde_json::to_string(&base).unwrap();

    let (line4, instances) = criterion_4();
    let lines = vec![
        criterion_1(),
        criterion_2(&base.block[1]),
        criterion_3(&base.block, &base.sampled),
        line4,
        criterion_5(),
        criterion_6(&base.block, &instances),
        criterion_7(dir),
        criterion_8(),
        criterion_9(dir),
        criterion_10(dir, &first),
    ];
    for l in &lines {
        l.print();
    }
    println!("acceptance total {:.1} s", t.elapsed().as_secs_f64());
    let failed: Vec<u8> = lines.iter().filter(|l| l.verdict == Verdict::Fail).map(|l| l.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
