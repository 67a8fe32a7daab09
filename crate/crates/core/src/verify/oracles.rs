//! Brute-force oracles, random instance generators and the equivalence
//! suites run by `dtebounds oracle` and the acceptance tests.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BlockPopulation, PopulationCell, SyntheticPopulation};
use crate::bounds_analytic::{
    analytic_bounds, antimonotone_expectation, comonotone_expectation, makarov_interval, Regime,
};
use crate::bounds_lp::{sharp_bounds_lp, ConstraintOptions};
use crate::dataset::{OutcomeGrid, StepCdf};
use crate::error::{Error, Result};
use crate::params::{population_weight, PhiForm, PhiSpec, Population, PsiTable};

/// Largest support size accepted by [`permutation_oracle`].
pub const PERMUTATION_MAX: usize = 6;

/// Extrema of `E[ψ]` over all couplings of two uniform `n`-point margins.
/// The extreme couplings are permutation matrices, so enumerating the `n!`
/// pairings gives the exact minimum and maximum.
pub fn permutation_oracle(psi: &PsiTable) -> Result<(f64, f64)> {
    let (n1, n0) = psi.dims();
    if n1 != n0 {
        return Err(Error::ShapeMismatch(format!(
            "permutation oracle needs a square table, got {n1}x{n0}"
        )));
    }
    if n1 > PERMUTATION_MAX {
        return Err(Error::invalid(format!(
            "permutation oracle is limited to n <= {PERMUTATION_MAX}, got {n1}"
        )));
    }
    let n = n1;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for perm in (0..n).permutations(n) {
        let v: f64 = perm.iter().enumerate().map(|(i, &j)| psi.get(i, j)).sum::<f64>() / n as f64;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// Bounds on `P(φ(Y1, Y0) <= δ)` (or the complement, per `phi`) by scanning
/// every quadrant rectangle on the grid product. A rectangle inside the
/// event gives the lower bound `P1(I1) + P0(I0) - 1`; one inside the
/// complement gives the upper bound the same way. Containment is checked
/// at the four corners, which is enough because `φ` is monotone in each
/// argument.
pub fn makarov_scan_oracle(f1: &StepCdf, f0: &StepCdf, phi: &PhiSpec) -> (f64, f64) {
    let g1 = f1.grid().points();
    let g0 = f0.grid().points();
    let (n1, n0) = (g1.len(), g0.len());
    let in_event = |i: usize, j: usize| phi.indicator(g1[i], g0[j]) > 0.5;
    // (index range, probability) of every half-line on each axis
    let halves = |f: &StepCdf, n: usize| -> Vec<(usize, usize, f64)> {
        let v = f.values();
        let mut out = Vec::with_capacity(2 * n);
        for k in 0..n {
            out.push((0, k, v[k]));
            let below = if k == 0 { 0.0 } else { v[k - 1] };
            out.push((k, n - 1, 1.0 - below));
        }
        out
    };
    let h1 = halves(f1, n1);
    let h0 = halves(f0, n0);
    let mut inside: f64 = 0.0;
    let mut outside: f64 = 0.0;
    for &(a1, b1, p1) in &h1 {
        for &(a0, b0, p0) in &h0 {
            let corners = [in_event(a1, a0), in_event(a1, b0), in_event(b1, a0), in_event(b1, b0)];
            let bound = p1 + p0 - 1.0;
            if corners.iter().all(|&c| c) {
                inside = inside.max(bound);
            } else if corners.iter().all(|&c| !c) {
                outside = outside.max(bound);
            }
        }
    }
    (inside, 1.0 - outside)
}

/// Bounds on `P(Y1 - Y0 <= δ)` for two continuous piecewise-linear CDFs
/// given as closures, by evaluating `F1(y) - F0(y - δ)` at the supplied
/// kink points.
pub fn continuous_makarov(
    f1: impl Fn(f64) -> f64,
    f0: impl Fn(f64) -> f64,
    delta: f64,
    kinks: &[f64],
) -> (f64, f64) {
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for &y in kinks.iter().chain(kinks.iter().map(|k| k + delta).collect::<Vec<_>>().iter()) {
        let v = f1(y) - f0(y - delta);
        sup = sup.max(v);
        inf = inf.min(v);
    }
    (sup.max(0.0), 1.0 + inf.min(0.0))
}

/// Exact intervals for `P(Y1 > Y0)` on the continuous population: the
/// experimental-only interval from the uniform marginals and the combined
/// interval from the `S`-conditional CDFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousIntervals {
    pub experimental: (f64, f64),
    pub combined: (f64, f64),
    pub truth: f64,
}

pub fn block_intervals(pop: &BlockPopulation) -> ContinuousIntervals {
    let kinks = [-1.0, 0.0, 1.0];
    let flip = |(lo, hi): (f64, f64)| (1.0 - hi, 1.0 - lo);
    let experimental = flip(continuous_makarov(
        |y| pop.marginal_cdf(1, y),
        |y| pop.marginal_cdf(0, y),
        0.0,
        &kinks,
    ));
    let mut combined = (0.0, 0.0);
    for s in [0u8, 1] {
        let p = if s == 1 { pop.p_s1 } else { 1.0 - pop.p_s1 };
        let (lo, hi) = flip(continuous_makarov(
            |y| pop.cdf(1, s, y),
            |y| pop.cdf(0, s, y),
            0.0,
            &kinks,
        ));
        combined.0 += p * lo;
        combined.1 += p * hi;
    }
    ContinuousIntervals {
        experimental,
        combined,
        truth: 0.5,
    }
}

/// Increasing grid with integer steps of 1 to 3, so differences tie often.
pub fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> OutcomeGrid {
    let mut y = rng.gen_range(-4..=0) as f64;
    let pts = (0..n)
        .map(|_| {
            let v = y;
            y += rng.gen_range(1..=3) as f64;
            v
        })
        .collect();
    OutcomeGrid::new(pts).expect("strictly increasing")
}

/// Random discrete population: grids up to 8 points, `|S| = 2`, `|X|` up to
/// 3, roughly a third of the joint masses zero, every `(s, x)` cell with
/// positive mass.
pub fn random_instance(rng: &mut ChaCha8Rng) -> SyntheticPopulation {
    let n1 = rng.gen_range(2..=8);
    let n0 = rng.gen_range(2..=8);
    let g1 = random_grid(rng, n1);
    let g0 = random_grid(rng, n0);
    let nx = rng.gen_range(1..=3);
    let mut cells = Vec::with_capacity(2 * nx);
    for x in 0..nx {
        for s in [0u8, 1] {
            let mut pmf: Vec<Vec<f64>> = (0..n1)
                .map(|_| {
                    (0..n0)
                        .map(|_| if rng.gen_bool(0.35) { 0.0 } else { rng.gen::<f64>() })
                        .collect()
                })
                .collect();
            let (i, j) = (rng.gen_range(0..n1), rng.gen_range(0..n0));
            pmf[i][j] += 0.5;
            cells.push(PopulationCell {
                x: format!("x{x}"),
                s,
                pmf,
            });
        }
    }
    let total: f64 = cells.iter().map(PopulationCell::prob).sum();
    for c in &mut cells {
        for v in c.pmf.iter_mut().flatten() {
            *v /= total;
        }
    }
    // renormalizing can leave the total a few ulps off 1
    let drift = 1.0 - cells.iter().map(PopulationCell::prob).sum::<f64>();
    let big = cells[0]
        .pmf
        .iter_mut()
        .flatten()
        .max_by(|a, b| a.total_cmp(b))
        .expect("nonempty");
    *big += drift;
    SyntheticPopulation::new(g1, g0, cells).expect("valid random population")
}

/// Random super-modular table: cumulative sums of nonnegative rectangle
/// increments plus arbitrary row and column terms.
pub fn random_supermodular(rng: &mut ChaCha8Rng, n1: usize, n0: usize) -> Vec<Vec<f64>> {
    let row: Vec<f64> = (0..n1).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let col: Vec<f64> = (0..n0).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut v = vec![vec![0.0; n0]; n1];
    for i in 0..n1 {
        for j in 0..n0 {
            let minor = if i > 0 && j > 0 { rng.gen::<f64>() } else { 0.0 };
            let up = if i > 0 { v[i - 1][j] } else { 0.0 };
            let left = if j > 0 { v[i][j - 1] } else { 0.0 };
            let diag = if i > 0 && j > 0 { v[i - 1][j - 1] } else { 0.0 };
            v[i][j] = up + left - diag + minor;
        }
    }
    for i in 0..n1 {
        for j in 0..n0 {
            v[i][j] += row[i] + col[j];
        }
    }
    v
}

/// Uniform single-cell population on an `n`-point grid with the joint pmf
/// on the diagonal; all mass is in `s = 1`.
pub fn uniform_population(grid: &OutcomeGrid) -> SyntheticPopulation {
    let n = grid.len();
    let diag: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 / n as f64 } else { 0.0 }).collect())
        .collect();
    let cells = vec![
        PopulationCell {
            x: crate::dataset::DEFAULT_CELL.to_string(),
            s: 0,
            pmf: vec![vec![0.0; n]; n],
        },
        PopulationCell {
            x: crate::dataset::DEFAULT_CELL.to_string(),
            s: 1,
            pmf: diag,
        },
    ];
    SyntheticPopulation::new(grid.clone(), grid.clone(), cells).expect("valid uniform population")
}

/// Population violating generalized Roy selection: those who choose
/// treatment gain less than those who do not.
pub fn anti_roy_population() -> SyntheticPopulation {
    let g = OutcomeGrid::new(vec![0.0, 1.0]).expect("grid");
    // s = 1: gain -1 only; s = 0: gain +1 only
    let cells = vec![
        PopulationCell {
            x: crate::dataset::DEFAULT_CELL.to_string(),
            s: 1,
            pmf: vec![vec![0.0, 0.5], vec![0.0, 0.0]],
        },
        PopulationCell {
            x: crate::dataset::DEFAULT_CELL.to_string(),
            s: 0,
            pmf: vec![vec![0.0, 0.0], vec![0.5, 0.0]],
        },
    ];
    SyntheticPopulation::new(g.clone(), g, cells).expect("valid population")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SuiteReport {
    fn new(name: &str, instances: usize, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_deviation,
            tolerance,
            pass: max_deviation.is_finite() && max_deviation <= tolerance,
        }
    }
}

/// Options for [`run_suites`]. `fault` shifts every value produced by the
/// code under test by `1e-3` so the harness can be checked for teeth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub instances: usize,
    pub fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            instances: 200,
            fault: false,
        }
    }
}

fn fault_shift(opts: &SuiteOptions) -> f64 {
    if opts.fault {
        1e-3
    } else {
        0.0
    }
}

fn dev(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Random TeCdf and product `ψ` on random instances: the linear program
/// without options against the closed-form combined bounds.
pub fn lp_analytic_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.instances {
        let pop = random_instance(&mut rng);
        let sys = pop.identified_system()?;
        let w = population_weight(&Population::All, &sys, None)?;
        for psi in instance_psis(&mut rng, &pop) {
            let lp = sharp_bounds_lp(&sys, &psi, &w, ConstraintOptions::default())?;
            let an = analytic_bounds(&sys, &psi, &w, Regime::Combined)?;
            let shift = fault_shift(opts);
            worst = worst.max(dev((lp.lower + shift, lp.upper), (an.lower, an.upper)));
        }
    }
    Ok(SuiteReport::new("lp-vs-analytic", opts.instances, worst, 1e-6))
}

/// The two `ψ` used per random instance: a TeCdf indicator at a random
/// observed difference and the product `y1·y0`.
pub fn instance_psis(rng: &mut ChaCha8Rng, pop: &SyntheticPopulation) -> Vec<PsiTable> {
    let g1 = pop.grid1.points();
    let g0 = pop.grid0.points();
    let delta = g1[rng.gen_range(0..g1.len())] - g0[rng.gen_range(0..g0.len())];
    let te = PsiTable::from_phi(
        pop.grid1.clone(),
        pop.grid0.clone(),
        PhiSpec {
            form: PhiForm::Difference,
            delta,
            complement: false,
        },
    );
    let product = g1.iter().map(|a| g0.iter().map(|b| a * b).collect()).collect();
    let product =
        PsiTable::new(pop.grid1.clone(), pop.grid0.clone(), product).expect("finite table");
    vec![te, product]
}

/// Uniform margins with `n` from 2 to 6: coupling expectations against the
/// permutation brute force for random super-modular tables, and the linear
/// program against it for unrestricted random tables.
pub fn permutation_suite(opts: &SuiteOptions, tables: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5045_524d);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in 2..=PERMUTATION_MAX {
        let grid = OutcomeGrid::new((0..n).map(|i| i as f64).collect())?;
        let f = StepCdf::from_masses(grid.clone(), &vec![1.0 / n as f64; n])?;
        let pop = uniform_population(&grid);
        let sys = pop.identified_system()?;
        let w = population_weight(&Population::All, &sys, None)?;
        for t in 0..tables {
            let sm = PsiTable::new(grid.clone(), grid.clone(), random_supermodular(&mut rng, n, n))?;
            let brute = permutation_oracle(&sm)?;
            let coupled = (
                antimonotone_expectation(&sm, &f, &f) + fault_shift(opts),
                comonotone_expectation(&sm, &f, &f),
            );
            worst = worst.max(dev(coupled, brute));
            // a general table every few rounds keeps the LP run time small
            if t % 5 == 0 {
                let vals = (0..n)
                    .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let general = PsiTable::new(grid.clone(), grid.clone(), vals)?;
                let lp = sharp_bounds_lp(&sys, &general, &w, ConstraintOptions::default())?;
                worst = worst.max(dev((lp.lower, lp.upper), permutation_oracle(&general)?));
            }
            count += 1;
        }
    }
    Ok(SuiteReport::new("permutation-oracle", count, worst, 1e-10))
}

/// Random step-CDF pairs: [`makarov_interval`] against the rectangle scan.
pub fn makarov_scan_suite(opts: &SuiteOptions, pairs: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4d41_4b41);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let n1 = rng.gen_range(1..=8);
        let n0 = rng.gen_range(1..=8);
        let g1 = random_grid(&mut rng, n1);
        let g0 = random_grid(&mut rng, n0);
        let masses = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            let mut m: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            m[rng.gen_range(0..n)] += 0.1;
            m
        };
        let m1 = masses(&mut rng, n1);
        let m0 = masses(&mut rng, n0);
        let f1 = StepCdf::from_masses(g1.clone(), &m1)?;
        let f0 = StepCdf::from_masses(g0.clone(), &m0)?;
        let form = if rng.gen_bool(0.5) {
            PhiForm::Difference
        } else {
            PhiForm::ReverseDifference
        };
        let a = g1.points()[rng.gen_range(0..n1)];
        let b = g0.points()[rng.gen_range(0..n0)];
        let delta = form.eval(a, b) + if rng.gen_bool(0.3) { 0.5 } else { 0.0 };
        let phi = PhiSpec {
            form,
            delta,
            complement: rng.gen_bool(0.5),
        };
        let (lo, hi) = makarov_interval(&f1, &f0, &phi);
        worst = worst.max(dev((lo + fault_shift(opts), hi), makarov_scan_oracle(&f1, &f0, &phi)));
    }
    Ok(SuiteReport::new("makarov-scan", pairs, worst, 1e-12))
}

/// All suites with the default sizes.
pub fn run_suites(opts: &SuiteOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        lp_analytic_suite(opts)?,
        permutation_suite(opts, 50)?,
        makarov_scan_suite(opts, 1000)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{block_population, discretize_population};

    fn grid(p: &[f64]) -> OutcomeGrid {
        OutcomeGrid::new(p.to_vec()).unwrap()
    }

    #[test]
    fn permutation_oracle_examples() {
        let g1 = grid(&[1.0, 2.0]);
        let g0 = grid(&[3.0, 4.0]);
        let v = vec![vec![3.0, 4.0], vec![6.0, 8.0]];
        let psi = PsiTable::new(g1, g0, v).unwrap();
        let (lo, hi) = permutation_oracle(&psi).unwrap();
        assert!((lo - 5.0).abs() < 1e-15 && (hi - 5.5).abs() < 1e-15);

        let one = PsiTable::new(grid(&[2.0]), grid(&[7.0]), vec![vec![14.0]]).unwrap();
        assert_eq!(permutation_oracle(&one).unwrap(), (14.0, 14.0));

        let g = grid(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let big = PsiTable::new(g.clone(), g, vec![vec![0.0; 7]; 7]).unwrap();
        assert!(permutation_oracle(&big).is_err());
    }

    #[test]
    fn sorted_pairing_attains_supermodular_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=5 {
            let g = grid(&(0..n).map(f64::from).collect::<Vec<_>>());
            let v = random_supermodular(&mut rng, n as usize, n as usize);
            let sorted: f64 = (0..n as usize).map(|i| v[i][i]).sum::<f64>() / f64::from(n);
            let psi = PsiTable::new(g.clone(), g, v).unwrap();
            assert!(psi.check_shape());
            let (_, hi) = permutation_oracle(&psi).unwrap();
            assert!((hi - sorted).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_on_identical_margins() {
        let g = grid(&[0.0, 1.0, 2.0, 3.0]);
        let f = StepCdf::from_masses(g, &[0.25; 4]).unwrap();
        let phi = PhiSpec {
            form: PhiForm::Difference,
            delta: 0.0,
            complement: false,
        };
        // the diagonal always lies in the event, so only the ties force mass
        let (lo, hi) = makarov_scan_oracle(&f, &f, &phi);
        assert!((lo - 0.25).abs() < 1e-15);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn scan_on_block_cell() {
        // S = 1 cell; grid ties add O(1/k) to the continuous [0, 0.4]
        let pop = discretize_population(&block_population(0.8, 0.2).unwrap(), 200).unwrap();
        let sys = pop.identified_system().unwrap();
        let c = &sys.cells[0];
        let phi = PhiSpec {
            form: PhiForm::Difference,
            delta: 0.0,
            complement: false,
        };
        let (f1, f0) = (&c.conditional[1][1], &c.conditional[0][1]);
        let (lo, hi) = makarov_scan_oracle(f1, f0, &phi);
        assert!(lo.abs() < 0.01);
        assert!((hi - 0.4).abs() < 0.01);
        assert!(dev((lo, hi), makarov_interval(f1, f0, &phi)) < 1e-12);
    }

    #[test]
    fn continuous_intervals() {
        let r = block_intervals(&block_population(0.8, 0.2).unwrap());
        assert!(dev(r.experimental, (0.0, 1.0)) < 1e-15);
        assert!(dev(r.combined, (0.3, 0.7)) < 1e-12);
        let roy = block_intervals(&block_population(1.0, 0.0).unwrap());
        assert!(dev(roy.combined, (0.5, 0.5)) < 1e-12);
        for a in [0.0, 0.1, 0.35, 0.5, 0.9] {
            let r = block_intervals(&block_population(a, 1.0 - a).unwrap());
            let h = (2.0 * a - 1.0).abs() / 2.0;
            assert!(dev(r.combined, (h, 1.0 - h)) < 1e-12);
        }
    }

    #[test]
    fn suites_pass_and_fault_is_caught() {
        let opts = SuiteOptions {
            seed: 11,
            instances: 20,
            fault: false,
        };
        assert!(lp_analytic_suite(&opts).unwrap().pass);
        assert!(permutation_suite(&opts, 5).unwrap().pass);
        assert!(makarov_scan_suite(&opts, 200).unwrap().pass);
        let bad = SuiteOptions { fault: true, ..opts };
        assert!(!lp_analytic_suite(&bad).unwrap().pass);
        assert!(!permutation_suite(&bad, 5).unwrap().pass);
        assert!(!makarov_scan_suite(&bad, 200).unwrap().pass);
    }

    #[test]
    fn anti_roy_margins() {
        let pop = anti_roy_population();
        let sys = pop.identified_system().unwrap();
        assert_eq!(sys.cells.len(), 1);
        assert!((sys.cells[0].p_s1 - 0.5).abs() < 1e-15);
    }
}
