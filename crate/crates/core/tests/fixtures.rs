//! Regression values on a small hand-built population (masses in units of
//! 1/40). The frozen numbers were produced by this crate; each run also
//! cross-checks them against an independent LP solver and checks the
//! recorded truths.

mod common;

use dtebounds::bounds_analytic::{analytic_bounds, Regime};
use dtebounds::bounds_lp::{build_lp, sharp_bounds_lp, ConstraintOptions, Sense};
use dtebounds::identify::margins_pmf;
use dtebounds::params::{population_weight, PhiForm, PhiSpec, Population, PsiTable};
use dtebounds::verify::SyntheticPopulation;

const TOL: f64 = 1e-10;

fn fixture() -> SyntheticPopulation {
    let path = common::fixture_path("two_cell_population.json");
    SyntheticPopulation::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn strict(pop: &SyntheticPopulation, form: PhiForm) -> PsiTable {
    PsiTable::from_phi(
        pop.grid1.clone(),
        pop.grid0.clone(),
        PhiSpec { form, delta: 0.0, complement: true },
    )
}

const MSI: ConstraintOptions = ConstraintOptions { msi: true, grm: false };
const GRM: ConstraintOptions = ConstraintOptions { msi: false, grm: true };
const BOTH: ConstraintOptions = ConstraintOptions { msi: true, grm: true };

struct Frozen {
    target: Population,
    form: PhiForm,
    truth_key: &'static str,
    experimental: Option<(f64, f64)>,
    combined: (f64, f64),
    msi: (f64, f64),
}

fn frozen() -> Vec<Frozen> {
    vec![
        Frozen {
            target: Population::All,
            form: PhiForm::Difference,
            truth_key: "fraction_benefit",
            experimental: Some((0.125, 0.7)),
            combined: (0.125, 0.6),
            msi: (0.19375, 0.440_773_809_523_809_5),
        },
        Frozen {
            target: Population::All,
            form: PhiForm::ReverseDifference,
            truth_key: "fraction_harmed",
            experimental: Some((0.0, 0.5)),
            combined: (0.05, 0.475),
            msi: (0.05, 0.267_627_164_502_164_4),
        },
        Frozen {
            target: Population::Selection(1),
            form: PhiForm::Difference,
            truth_key: "fraction_benefit_s1",
            experimental: None,
            combined: (0.25, 0.7),
            msi: (0.3875, 0.591_666_666_666_666_8),
        },
    ]
}

fn close(got: (f64, f64), want: (f64, f64)) -> bool {
    (got.0 - want.0).abs() < TOL && (got.1 - want.1).abs() < TOL
}

#[test]
fn recorded_truths_match_the_pmf() {
    let pop = fixture();
    let sys = pop.identified_system().unwrap();
    for f in frozen() {
        let w = population_weight(&f.target, &sys, None).unwrap();
        let theta = pop.true_theta(&strict(&pop, f.form), &w);
        assert!((theta - pop.truths[f.truth_key]).abs() < 1e-12, "{}", f.truth_key);
    }
}

#[test]
fn frozen_intervals() {
    let pop = fixture();
    let sys = pop.identified_system().unwrap();
    let margins = margins_pmf(&sys);
    for f in frozen() {
        let w = population_weight(&f.target, &sys, None).unwrap();
        let psi = strict(&pop, f.form);
        let truth = pop.truths[f.truth_key];
        if let Some(want) = f.experimental {
            let e = analytic_bounds(&sys, &psi, &w, Regime::ExperimentalOnly).unwrap();
            assert!(close((e.lower, e.upper), want), "{:?}", (e.lower, e.upper));
            assert!(e.contains(truth, TOL));
        }
        let c = analytic_bounds(&sys, &psi, &w, Regime::Combined).unwrap();
        assert!(close((c.lower, c.upper), f.combined), "{:?}", (c.lower, c.upper));
        assert!(c.contains(truth, TOL));

        for (opts, want) in [
            (ConstraintOptions::default(), f.combined),
            (MSI, f.msi),
            (GRM, f.combined),
            (BOTH, f.msi),
        ] {
            let b = sharp_bounds_lp(&sys, &psi, &w, opts).unwrap();
            assert!(close((b.lower, b.upper), want), "{opts:?}: {:?}", (b.lower, b.upper));
            let lo = common::reference_value(&build_lp(&margins, &psi, &w, opts, Sense::Min).unwrap());
            let hi = common::reference_value(&build_lp(&margins, &psi, &w, opts, Sense::Max).unwrap());
            assert!(close((lo.unwrap(), hi.unwrap()), want), "reference {opts:?}");
        }
    }
}

#[test]
fn fixture_round_trips_through_json() {
    let pop = fixture();
    let back = SyntheticPopulation::from_json(&pop.to_json().unwrap()).unwrap();
    assert_eq!(back, pop);
}

#[test]
fn simulate_accepts_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let csv = common::path_in(&dir, "fx.csv");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_dtebounds"))
        .args(["simulate", "--n", "500", "--fixture"])
        .arg(common::fixture_path("two_cell_population.json"))
        .arg("--output")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(csv.with_extension("truths.json")).unwrap()).unwrap();
    assert_eq!(sidecar["fixture_truths"]["fraction_benefit"].as_f64(), Some(0.275));
    assert!((sidecar["theta"].as_f64().unwrap() - 0.275).abs() < 1e-12);
    let comb = sidecar["exact_discrete_combined"].as_array().unwrap();
    assert!((comb[0].as_f64().unwrap() - 0.125).abs() < TOL);
    assert!((comb[1].as_f64().unwrap() - 0.6).abs() < TOL);
}
