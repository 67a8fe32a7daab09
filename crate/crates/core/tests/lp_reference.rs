//! The crate's simplex against an independent LP solver.

mod common;

use dtebounds::bounds_lp::{build_lp, sharp_bounds_lp, solve_lp, ConstraintOptions, LpProblem, Sense, Status};
use dtebounds::identify::margins_pmf;
use dtebounds::params::{population_weight, Population, PsiTable};
use dtebounds::verify::oracles::{instance_psis, random_instance};
use dtebounds::verify::{block_population, discretize_population};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALL_OPTIONS: [ConstraintOptions; 4] = [
    ConstraintOptions { msi: false, grm: false },
    ConstraintOptions { msi: true, grm: false },
    ConstraintOptions { msi: false, grm: true },
    ConstraintOptions { msi: true, grm: true },
];

/// Random 3x3 general table instances, every option set, both directions.
#[test]
fn agrees_with_reference_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    while checked < 40 {
        let pop = random_instance(&mut rng);
        if pop.grid1.len() != 3 || pop.grid0.len() != 3 {
            continue;
        }
        let sys = pop.identified_system().unwrap();
        let w = population_weight(&Population::All, &sys, None).unwrap();
        let vals = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let psi = PsiTable::new(pop.grid1.clone(), pop.grid0.clone(), vals).unwrap();
        let margins = margins_pmf(&sys);
        for opts in ALL_OPTIONS {
            for dir in [Sense::Min, Sense::Max] {
                let p = build_lp(&margins, &psi, &w, opts, dir).unwrap();
                let ours = solve_lp(&p);
                match common::reference_value(&p) {
                    Some(v) => {
                        assert_eq!(ours.status, Status::Optimal);
                        assert!((ours.value - v).abs() < 1e-8, "{opts:?} {dir:?}: {} vs {v}", ours.value);
                    }
                    None => assert_eq!(ours.status, Status::Infeasible, "{opts:?} {dir:?}"),
                }
            }
        }
        checked += 1;
    }
}

/// The blockwise solve in `sharp_bounds_lp` equals one monolithic program.
#[test]
fn blockwise_equals_monolithic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..15 {
        let pop = random_instance(&mut rng);
        let sys = pop.identified_system().unwrap();
        let w = population_weight(&Population::All, &sys, None).unwrap();
        for psi in instance_psis(&mut rng, &pop) {
            for opts in [ALL_OPTIONS[0], ALL_OPTIONS[2]] {
                let Ok(b) = sharp_bounds_lp(&sys, &psi, &w, opts) else {
                    continue;
                };
                let margins = margins_pmf(&sys);
                let hi = build_lp(&margins, &psi, &w, opts, Sense::Max).unwrap();
                let lo = build_lp(&margins, &psi, &w, opts, Sense::Min).unwrap();
                let (rl, rh) = (common::reference_value(&lo).unwrap(), common::reference_value(&hi).unwrap());
                assert!((b.lower - rl).abs() < 1e-8 && (b.upper - rh).abs() < 1e-8);
            }
        }
    }
}

fn permuted(p: &LpProblem, perm: &[usize]) -> LpProblem {
    // perm[old] = new
    let mut q = p.clone();
    for (old, &new) in perm.iter().enumerate() {
        q.variables[new] = p.variables[old];
        q.objective[new] = p.objective[old];
    }
    for rows in [&mut q.eq_rows, &mut q.ineq_rows] {
        for r in rows.iter_mut() {
            for c in r.coeffs.iter_mut() {
                c.0 = perm[c.0];
            }
            r.coeffs.sort_by_key(|c| c.0);
        }
    }
    q
}

#[test]
fn value_is_invariant_to_variable_order() {
    let pop = discretize_population(&block_population(0.8, 0.2).unwrap(), 6).unwrap();
    let sys = pop.identified_system().unwrap();
    let w = population_weight(&Population::All, &sys, None).unwrap();
    let psi = dtebounds::params::PsiTable::from_phi(
        pop.grid1.clone(),
        pop.grid0.clone(),
        dtebounds::params::PhiSpec {
            form: dtebounds::params::PhiForm::Difference,
            delta: 0.0,
            complement: true,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for opts in ALL_OPTIONS {
        let p = build_lp(&margins_pmf(&sys), &psi, &w, opts, Sense::Max).unwrap();
        let base = solve_lp(&p);
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..p.n_vars()).collect();
            perm.shuffle(&mut rng);
            let r = solve_lp(&permuted(&p, &perm));
            assert_eq!(r.status, base.status);
            if base.status == Status::Optimal {
                assert!((r.value - base.value).abs() < 1e-9, "{opts:?}");
            }
        }
    }
}
