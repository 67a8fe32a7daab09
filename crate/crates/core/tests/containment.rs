//! The true value of a population lies inside every interval its margins
//! identify, and inside the restricted intervals whenever the population
//! satisfies the restriction.

use dtebounds::bounds_analytic::{analytic_bounds, Regime};
use dtebounds::bounds_lp::{sharp_bounds_lp, ConstraintOptions};
use dtebounds::params::{population_weight, PhiForm, PhiSpec, Population, PsiTable};
use dtebounds::verify::oracles::{instance_psis, random_grid, random_instance};
use dtebounds::verify::{block_population, discretize_population, selection_on_observables, SyntheticPopulation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn populations() -> Vec<Population> {
    vec![Population::All, Population::Selection(0), Population::Selection(1)]
}

fn check_unrestricted(pop: &SyntheticPopulation, rng: &mut ChaCha8Rng) {
    let sys = pop.identified_system().unwrap();
    for target in populations() {
        let w = population_weight(&target, &sys, None).unwrap();
        for psi in instance_psis(rng, pop) {
            let truth = pop.true_theta(&psi, &w);
            for regime in [Regime::ExperimentalOnly, Regime::Combined] {
                if regime == Regime::ExperimentalOnly && target != Population::All {
                    continue;
                }
                let b = analytic_bounds(&sys, &psi, &w, regime).unwrap();
                assert!(b.contains(truth, TOL), "{regime:?} {target:?}: {truth} not in {b:?}");
            }
            let lp = sharp_bounds_lp(&sys, &psi, &w, ConstraintOptions::default()).unwrap();
            assert!(lp.contains(truth, TOL), "lp {target:?}: {truth} not in {lp:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truth_inside_unrestricted_intervals(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = random_instance(&mut rng);
        check_unrestricted(&pop, &mut rng);
    }

    /// Independent `(Y1, Y0)` within each `(s, x)` satisfies mutual
    /// stochastic monotonicity.
    #[test]
    fn truth_inside_msi_interval_under_independence(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n0) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let (g1, g0) = (random_grid(&mut rng, n1), random_grid(&mut rng, n0));
        let mut cells = Vec::new();
        let mut total = 0.0;
        for x in 0..rng.gen_range(1..=2) {
            for s in [0u8, 1] {
                let a: Vec<f64> = (0..n1).map(|_| rng.gen_range(0.05..1.0)).collect();
                let b: Vec<f64> = (0..n0).map(|_| rng.gen_range(0.05..1.0)).collect();
                let pmf: Vec<Vec<f64>> = a.iter().map(|u| b.iter().map(|v| u * v).collect()).collect();
                total += pmf.iter().flatten().sum::<f64>();
                cells.push(dtebounds::verify::PopulationCell { x: format!("x{x}"), s, pmf });
            }
        }
        for c in &mut cells {
            for v in c.pmf.iter_mut().flatten() {
                *v /= total;
            }
        }
        let drift = 1.0 - cells.iter().map(|c| c.prob()).sum::<f64>();
        cells[0].pmf[0][0] += drift;
        let pop = SyntheticPopulation::new(g1, g0, cells).unwrap();
        let sys = pop.identified_system().unwrap();
        let w = population_weight(&Population::All, &sys, None).unwrap();
        let opts = ConstraintOptions { msi: true, grm: false };
        for psi in instance_psis(&mut rng, &pop) {
            let truth = pop.true_theta(&psi, &w);
            let b = sharp_bounds_lp(&sys, &psi, &w, opts).unwrap();
            prop_assert!(b.contains(truth, 1e-8), "{truth} not in {b:?}");
        }
    }
}

#[test]
fn truth_inside_grm_interval_when_selection_follows_gains() {
    // a >= b: those who select treatment hold the larger gains
    for (a, b) in [(0.8, 0.2), (0.6, 0.4), (0.5, 0.5)] {
        let pop = discretize_population(&block_population(a, b).unwrap(), 8).unwrap();
        let sys = pop.identified_system().unwrap();
        let w = population_weight(&Population::All, &sys, None).unwrap();
        let psi = PsiTable::from_phi(
            pop.grid1.clone(),
            pop.grid0.clone(),
            PhiSpec { form: PhiForm::Difference, delta: 0.0, complement: true },
        );
        let truth = pop.true_theta(&psi, &w);
        for opts in [
            ConstraintOptions { msi: false, grm: true },
            ConstraintOptions { msi: false, grm: false },
        ] {
            let iv = sharp_bounds_lp(&sys, &psi, &w, opts).unwrap();
            assert!(iv.contains(truth, 1e-8), "a={a} b={b} {opts:?}: {truth} not in {iv:?}");
        }
    }
}

#[test]
fn selection_on_observables_truth_is_contained() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_grid(&mut rng, 4);
    let joint = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..4).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
    };
    let cells = vec![
        ("lo".to_string(), 0.4, 0.3, joint(&mut rng)),
        ("hi".to_string(), 0.6, 0.7, joint(&mut rng)),
    ];
    let pop = selection_on_observables(g.clone(), g, &cells).unwrap();
    check_unrestricted(&pop, &mut rng);
}
