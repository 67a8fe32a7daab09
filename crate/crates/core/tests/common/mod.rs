//! Helpers shared by the integration tests.

#![allow(dead_code)]

use dtebounds::bounds_lp::{LpProblem, Sense};

/// Optimal value of `p` from the `minilp` solver, an implementation
/// independent of the crate's own simplex.
pub fn reference_value(p: &LpProblem) -> Option<f64> {
    let dir = match p.direction {
        Sense::Min => minilp::OptimizationDirection::Minimize,
        Sense::Max => minilp::OptimizationDirection::Maximize,
    };
    let mut m = minilp::Problem::new(dir);
    let vars: Vec<_> = p
        .objective
        .iter()
        .map(|&c| m.add_var(c, (0.0, p.var_upper)))
        .collect();
    for (rows, op) in [
        (&p.eq_rows, minilp::ComparisonOp::Eq),
        (&p.ineq_rows, minilp::ComparisonOp::Ge),
    ] {
        for r in rows {
            let mut e = minilp::LinearExpr::empty();
            for &(j, v) in &r.coeffs {
                e.add(vars[j], v);
            }
            m.add_constraint(e, op, r.rhs);
        }
    }
    m.solve().ok().map(|s| s.objective())
}

/// Unique temporary path inside `dir`.
pub fn path_in(dir: &tempfile::TempDir, name: &str) -> std::path::PathBuf {
    dir.path().join(name)
}

/// Path of a checked-in fixture.
pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
