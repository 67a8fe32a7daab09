//! Plain-text dump of an [`LpProblem`] for debugging and for feeding other
//! solvers. One record per line, whitespace separated:
//!
//! ```text
//! dtebounds-lp 1
//! direction min|max
//! var_upper <u>
//! grid1 <n> <y_0> ... <y_n-1>
//! grid0 <n> <y_0> ... <y_n-1>
//! cells <k>
//! cell <s> <prob> <x label, rest of line>
//! variables <n>
//! var <cell> <i1> <i0> <objective coefficient>
//! eq <count>
//! row <label> <rhs> <nnz> <j>:<coef> ...
//! ge <count>
//! row <label> <rhs> <nnz> <j>:<coef> ...
//! skipped <count>
//! note <text, rest of line>
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a dump parses back
//! to an identical problem.

use std::fmt::Write as _;

use super::{LpProblem, LpRow, LpVariable, Sense};
use crate::dataset::OutcomeGrid;
use crate::error::{Error, Result};
use crate::identify::MarginCell;

pub fn write_lp(p: &LpProblem) -> String {
    let mut out = String::new();
    let dir = match p.direction {
        Sense::Min => "min",
        Sense::Max => "max",
    };
    let _ = writeln!(out, "dtebounds-lp 1");
    let _ = writeln!(out, "direction {dir}");
    let _ = writeln!(out, "var_upper {:?}", p.var_upper);
    for (name, g) in [("grid1", &p.grids[1]), ("grid0", &p.grids[0])] {
        let _ = write!(out, "{name} {}", g.len());
        for y in g.points() {
            let _ = write!(out, " {y:?}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "cells {}", p.cells.len());
    for c in &p.cells {
        let _ = writeln!(out, "cell {} {:?} {}", c.s, c.prob, c.x);
    }
    let _ = writeln!(out, "variables {}", p.variables.len());
    for (v, c) in p.variables.iter().zip(&p.objective) {
        let _ = writeln!(out, "var {} {} {} {c:?}", v.cell, v.i1, v.i0);
    }
    for (name, rows) in [("eq", &p.eq_rows), ("ge", &p.ineq_rows)] {
        let _ = writeln!(out, "{name} {}", rows.len());
        for r in rows {
            let _ = write!(out, "row {} {:?} {}", r.label, r.rhs, r.coeffs.len());
            for (j, v) in &r.coeffs {
                let _ = write!(out, " {j}:{v:?}");
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "skipped {}", p.skipped.len());
    for s in &p.skipped {
        let _ = writeln!(out, "note {s}");
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, tag: &str) -> Result<(usize, &'a str)> {
        let (i, line) = self
            .it
            .next()
            .ok_or_else(|| Error::invalid(format!("lp dump ended before `{tag}`")))?;
        let rest = line
            .strip_prefix(tag)
            .and_then(|r| if r.is_empty() { Some(r) } else { r.strip_prefix(' ') })
            .ok_or_else(|| Error::MalformedRow {
                row: i + 1,
                message: format!("expected `{tag}`"),
            })?;
        Ok((i + 1, rest))
    }
}

fn num<T: std::str::FromStr>(row: usize, s: Option<&str>) -> Result<T> {
    s.and_then(|v| v.parse().ok()).ok_or_else(|| Error::MalformedRow {
        row,
        message: format!("bad number `{}`", s.unwrap_or("")),
    })
}

fn read_grid(lines: &mut Lines, tag: &str) -> Result<OutcomeGrid> {
    let (row, rest) = lines.next(tag)?;
    let mut parts = rest.split(' ');
    let n: usize = num(row, parts.next())?;
    let pts = (0..n).map(|_| num(row, parts.next())).collect::<Result<Vec<f64>>>()?;
    OutcomeGrid::new(pts)
}

fn read_rows(lines: &mut Lines, tag: &str) -> Result<Vec<LpRow>> {
    let (row, rest) = lines.next(tag)?;
    let count: usize = num(row, Some(rest))?;
    (0..count)
        .map(|_| {
            let (row, rest) = lines.next("row")?;
            let mut parts = rest.split(' ');
            let label = parts.next().unwrap_or_default().to_string();
            let rhs = num(row, parts.next())?;
            let nnz: usize = num(row, parts.next())?;
            let coeffs = (0..nnz)
                .map(|_| {
                    let (j, v) = parts
                        .next()
                        .and_then(|t| t.split_once(':'))
                        .ok_or_else(|| Error::MalformedRow {
                            row,
                            message: "bad coefficient".into(),
                        })?;
                    Ok((num(row, Some(j))?, num(row, Some(v))?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LpRow { label, coeffs, rhs })
        })
        .collect()
}

pub fn read_lp(text: &str) -> Result<LpProblem> {
    let mut lines = Lines {
        it: text.lines().enumerate(),
    };
    let (row, version) = lines.next("dtebounds-lp")?;
    if version != "1" {
        return Err(Error::MalformedRow {
            row,
            message: format!("unsupported lp dump version `{version}`"),
        });
    }
    let (row, dir) = lines.next("direction")?;
    let direction = match dir {
        "min" => Sense::Min,
        "max" => Sense::Max,
        other => {
            return Err(Error::MalformedRow {
                row,
                message: format!("bad direction `{other}`"),
            })
        }
    };
    let (row, u) = lines.next("var_upper")?;
    let var_upper = num(row, Some(u))?;
    let grid1 = read_grid(&mut lines, "grid1")?;
    let grid0 = read_grid(&mut lines, "grid0")?;
    let (row, k) = lines.next("cells")?;
    let k: usize = num(row, Some(k))?;
    let cells = (0..k)
        .map(|_| {
            let (row, rest) = lines.next("cell")?;
            let mut parts = rest.splitn(3, ' ');
            let s = num(row, parts.next())?;
            let prob = num(row, parts.next())?;
            let x = parts.next().unwrap_or_default().to_string();
            Ok(MarginCell { x, s, prob })
        })
        .collect::<Result<Vec<_>>>()?;
    let (row, n) = lines.next("variables")?;
    let n: usize = num(row, Some(n))?;
    let mut variables = Vec::with_capacity(n);
    let mut objective = Vec::with_capacity(n);
    for _ in 0..n {
        let (row, rest) = lines.next("var")?;
        let mut parts = rest.split(' ');
        variables.push(LpVariable {
            cell: num(row, parts.next())?,
            i1: num(row, parts.next())?,
            i0: num(row, parts.next())?,
        });
        objective.push(num(row, parts.next())?);
    }
    let eq_rows = read_rows(&mut lines, "eq")?;
    let ineq_rows = read_rows(&mut lines, "ge")?;
    let (row, k) = lines.next("skipped")?;
    let k: usize = num(row, Some(k))?;
    let skipped = (0..k)
        .map(|_| lines.next("note").map(|(_, s)| s.to_string()))
        .collect::<Result<Vec<_>>>()?;
    lines.next("end")?;
    Ok(LpProblem {
        grids: [grid0, grid1],
        cells,
        variables,
        objective,
        eq_rows,
        ineq_rows,
        var_upper,
        direction,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds_lp::{build_lp, ConstraintOptions};
    use crate::identify::JointMargins;
    use crate::params::{CellWeight, PopulationWeights, Population, PsiTable};

    #[test]
    fn dump_round_trips() {
        let g = OutcomeGrid::new(vec![-0.5, 0.1, 2.0]).unwrap();
        let m = JointMargins {
            grids: [g.clone(), g.clone()],
            cells: vec![
                MarginCell {
                    x: "low income".into(),
                    s: 0,
                    prob: 0.4,
                },
                MarginCell {
                    x: "low income".into(),
                    s: 1,
                    prob: 0.6,
                },
            ],
            pmf: [
                vec![vec![0.1, 0.3, 0.0], vec![0.2, 0.2, 0.2]],
                vec![vec![0.2, 0.1, 0.1], vec![0.0, 0.3, 0.3]],
            ],
        };
        let w = PopulationWeights {
            population: Population::All,
            cells: m
                .cells
                .iter()
                .map(|c| CellWeight {
                    x: c.x.clone(),
                    s: c.s,
                    weight: c.prob,
                })
                .collect(),
            normalizer: 1.0,
        };
        let v = g
            .points()
            .iter()
            .map(|a| g.points().iter().map(|b| (a - b) / 3.0).collect())
            .collect();
        let psi = PsiTable::new(g.clone(), g.clone(), v).unwrap();
        let opts = ConstraintOptions { msi: true, grm: true };
        let p = build_lp(&m, &psi, &w, opts, Sense::Max).unwrap();
        let text = write_lp(&p);
        assert_eq!(read_lp(&text).unwrap(), p);
        assert!(read_lp(&text.replace("direction max", "direction up")).is_err());
        assert!(read_lp(&text[..text.len() - 4]).is_err());
    }
}
