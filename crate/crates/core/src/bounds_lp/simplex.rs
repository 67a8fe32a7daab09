//! Dense two-phase tableau simplex.
//!
//! Pricing is Dantzig's rule until a run of degenerate pivots, then Bland's
//! smallest-index rule until the objective strictly improves. Ratio-test ties
//! go to the row whose basic variable has the smallest index, so pivoting is
//! fully deterministic.
//!
//! Inequality rows are relaxed by tiny distinct amounts while pivoting, which
//! breaks the heavy degeneracy of homogeneous rows. At the optimum the true
//! right-hand side is restored through the basis inverse and any basic
//! variable that turns negative is repaired with dual simplex pivots.

use serde::{Deserialize, Serialize};

pub const PIVOT_TOL: f64 = 1e-11;
pub const PHASE1_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 50;
/// Base size of the right-hand-side relaxation of inequality rows.
const PERTURB: f64 = 1e-8;
/// Basic values below `-FEAS_TOL` after restoring the right-hand side are
/// repaired by dual simplex pivots.
const FEAS_TOL: f64 = 1e-13;
/// Primal slack granted by the ratio test.
const HARRIS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Eq,
    /// `a·x >= b`.
    Ge,
    /// `a·x <= b`.
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// `opt c·x` subject to `rows`, `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub n: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    pub value: f64,
    pub primal: Vec<f64>,
    /// One multiplier per row, in the sign convention of the original sense.
    pub duals: Vec<f64>,
    pub iterations: usize,
    /// Largest violation of any row or of `x >= 0`.
    pub residual: f64,
    /// `|c·x - b·y|`.
    pub duality_gap: f64,
    /// Largest violation of dual feasibility.
    pub dual_infeasibility: f64,
}

struct Tableau {
    /// `m` rows of `cols + 1` entries; the last entry is the right-hand side.
    a: Vec<Vec<f64>>,
    /// Reduced costs with the negated objective value in the last entry.
    cost: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
    /// Columns that may enter the basis.
    allowed: Vec<bool>,
    iterations: usize,
    cap: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= piv;
        }
        let prow = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let candidates = (0..self.cols).filter(|&j| self.allowed[j] && self.cost[j] < -COST_TOL);
        if bland {
            candidates.into_iter().next()
        } else {
            candidates.min_by(|&a, &b| self.cost[a].total_cmp(&self.cost[b]).then(a.cmp(&b)))
        }
    }

    /// Harris two-pass ratio test: the first pass finds the step allowed
    /// when every basic value may dip to `-HARRIS_TOL`, the second picks the
    /// largest pivot among rows blocking within that step.
    fn leaving(&self, c: usize) -> Option<usize> {
        let rhs = self.cols;
        let bound = self
            .a
            .iter()
            .filter(|row| row[c] > PIVOT_TOL)
            .map(|row| (row[rhs].max(0.0) + HARRIS_TOL) / row[c])
            .fold(f64::INFINITY, f64::min);
        if !bound.is_finite() {
            return None;
        }
        let mut best: Option<usize> = None;
        for (i, row) in self.a.iter().enumerate() {
            if row[c] <= PIVOT_TOL || row[rhs].max(0.0) / row[c] > bound {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    row[c] > self.a[b][c] || (row[c] == self.a[b][c] && self.basis[i] < self.basis[b])
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    /// Dual simplex pivots until every basic value is nonnegative. Requires
    /// nonnegative reduced costs on allowed columns.
    fn dual_repair(&mut self) -> Outcome {
        let rhs = self.cols;
        loop {
            let leave = (0..self.a.len())
                .filter(|&i| self.a[i][rhs] < -FEAS_TOL)
                .min_by(|&x, &y| {
                    self.a[x][rhs]
                        .total_cmp(&self.a[y][rhs])
                        .then(self.basis[x].cmp(&self.basis[y]))
                });
            let Some(r) = leave else {
                return Outcome::Optimal;
            };
            if self.iterations >= self.cap {
                return Outcome::IterationLimit;
            }
            let row = &self.a[r];
            let enter = (0..self.cols)
                .filter(|&j| self.allowed[j] && row[j] < -PIVOT_TOL)
                .map(|j| (j, self.cost[j].max(0.0) / -row[j]))
                .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            let Some((c, _)) = enter else {
                // no column can raise this row: the restored problem is infeasible
                return Outcome::Unbounded;
            };
            self.pivot(r, c);
            self.iterations += 1;
        }
    }

    /// Replaces the right-hand side with `B⁻¹ b` for the original `b`, read
    /// off the columns that held the initial identity.
    fn restore_rhs(&mut self, ident: &[usize], b: &[f64], c_full: Option<&[f64]>) {
        let rhs = self.cols;
        for row in self.a.iter_mut() {
            row[rhs] = ident.iter().zip(b).map(|(&k, &bi)| row[k] * bi).sum();
        }
        if let Some(c) = c_full {
            self.cost[rhs] = -self
                .a
                .iter()
                .zip(&self.basis)
                .map(|(row, &k)| c[k] * row[rhs])
                .sum::<f64>();
        }
    }

    fn run(&mut self) -> Outcome {
        let mut bland = false;
        let mut streak = 0;
        loop {
            let Some(c) = self.entering(bland) else {
                return Outcome::Optimal;
            };
            let Some(r) = self.leaving(c) else {
                return Outcome::Unbounded;
            };
            if self.iterations >= self.cap {
                return Outcome::IterationLimit;
            }
            let before = self.cost[self.cols];
            self.pivot(r, c);
            self.iterations += 1;
            if (self.cost[self.cols] - before).abs() > 1e-12 * (1.0 + before.abs()) {
                streak = 0;
                bland = false;
            } else {
                streak += 1;
                if streak >= DEGENERATE_STREAK {
                    bland = true;
                }
            }
        }
    }
}

pub fn solve(lp: &StandardLp) -> Solution {
    let n = lp.n;
    let m = lp.rows.len();
    let sign = match lp.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };

    // Normalize each row to a nonnegative right-hand side. Homogeneous `>=`
    // rows become `<=` rows so their slack can start in the basis.
    // Rows are also scaled to a largest coefficient of 1; `flip` carries both.
    let mut flip = vec![1.0; m];
    let mut kinds = Vec::with_capacity(m);
    for (i, row) in lp.rows.iter().enumerate() {
        let mut kind = row.kind;
        let big = row.coeffs.iter().fold(0.0f64, |b, &(_, v)| b.max(v.abs()));
        if big > 0.0 {
            flip[i] = 1.0 / big;
        }
        if row.rhs < 0.0 || (row.rhs == 0.0 && kind == RowKind::Ge) {
            flip[i] = -flip[i];
            kind = match kind {
                RowKind::Ge => RowKind::Le,
                RowKind::Le => RowKind::Ge,
                RowKind::Eq => RowKind::Eq,
            };
        }
        kinds.push(kind);
    }

    // Columns: structural, then one slack/surplus per inequality, then one
    // artificial per Eq/Ge row. `ident[i]` is the column with +1 in row i.
    let n_slack = kinds.iter().filter(|k| **k != RowKind::Eq).count();
    let n_art = kinds.iter().filter(|k| **k != RowKind::Le).count();
    let cols = n + n_slack + n_art;
    let mut a = vec![vec![0.0; cols + 1]; m];
    let mut ident = vec![0; m];
    let mut is_art = vec![false; cols];
    let mut basis = vec![0; m];
    let (mut next_slack, mut next_art) = (n, n + n_slack);
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, v) in &row.coeffs {
            a[i][j] += flip[i] * v;
        }
        a[i][cols] = flip[i] * row.rhs;
        match kinds[i] {
            RowKind::Le => {
                // distinct relaxations in [PERTURB, 2 PERTURB)
                a[i][cols] += PERTURB * (1.0 + ((i * 7919) % 1009) as f64 / 1009.0);
                a[i][next_slack] = 1.0;
                ident[i] = next_slack;
                basis[i] = next_slack;
                next_slack += 1;
            }
            RowKind::Ge => {
                a[i][next_slack] = -1.0;
                next_slack += 1;
                a[i][next_art] = 1.0;
                ident[i] = next_art;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
            RowKind::Eq => {
                a[i][next_art] = 1.0;
                ident[i] = next_art;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
        }
    }

    // Phase 1: minimize the sum of artificials.
    let mut cost = vec![0.0; cols + 1];
    for (i, row) in a.iter().enumerate() {
        if is_art[basis[i]] {
            for (j, v) in row.iter().enumerate() {
                if j == cols || !is_art[j] {
                    cost[j] -= v;
                }
            }
        }
    }
    let mut t = Tableau {
        a,
        cost,
        basis,
        cols,
        allowed: vec![true; cols],
        iterations: 0,
        cap: 50 * (m + cols),
    };
    let fail = |status: Status, t: &Tableau| Solution {
        status,
        value: f64::NAN,
        primal: vec![0.0; n],
        duals: vec![0.0; m],
        iterations: t.iterations,
        residual: f64::NAN,
        duality_gap: f64::NAN,
        dual_infeasibility: f64::NAN,
    };
    match t.run() {
        Outcome::IterationLimit => return fail(Status::IterationLimit, &t),
        Outcome::Unbounded => return fail(Status::Unbounded, &t),
        Outcome::Optimal => {}
    }
    if -t.cost[cols] > PHASE1_TOL {
        return fail(Status::Infeasible, &t);
    }

    // Drive artificials out of the basis where a structural or slack column can replace them.
    for r in 0..m {
        if !is_art[t.basis[r]] {
            continue;
        }
        let col = (0..cols)
            .filter(|&j| !is_art[j] && t.a[r][j].abs() > 1e-9)
            .max_by(|&x, &y| t.a[r][x].abs().total_cmp(&t.a[r][y].abs()).then(y.cmp(&x)));
        if let Some(c) = col {
            t.pivot(r, c);
        }
    }

    // Phase 2.
    t.allowed = is_art.iter().map(|a| !a).collect();
    let c_full: Vec<f64> = (0..cols)
        .map(|j| if j < n { sign * lp.objective[j] } else { 0.0 })
        .collect();
    let mut cost = vec![0.0; cols + 1];
    cost[..cols].copy_from_slice(&c_full);
    for (i, row) in t.a.iter().enumerate() {
        let cb = c_full[t.basis[i]];
        if cb != 0.0 {
            for (v, a) in cost.iter_mut().zip(row) {
                *v -= cb * a;
            }
        }
    }
    t.cost = cost;
    match t.run() {
        Outcome::IterationLimit => return fail(Status::IterationLimit, &t),
        Outcome::Unbounded => return fail(Status::Unbounded, &t),
        Outcome::Optimal => {}
    }

    // Back to the true right-hand side; one more primal pass mops up reduced
    // costs that the repair pivots left slightly negative.
    let b: Vec<f64> = lp.rows.iter().zip(&flip).map(|(r, f)| f * r.rhs).collect();
    t.restore_rhs(&ident, &b, Some(&c_full));
    for _ in 0..4 {
        match t.dual_repair() {
            Outcome::IterationLimit => return fail(Status::IterationLimit, &t),
            Outcome::Unbounded => return fail(Status::Infeasible, &t),
            Outcome::Optimal => {}
        }
        if t.entering(false).is_none() {
            break;
        }
        match t.run() {
            Outcome::IterationLimit => return fail(Status::IterationLimit, &t),
            Outcome::Unbounded => return fail(Status::Unbounded, &t),
            Outcome::Optimal => {}
        }
    }

    let mut primal = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            primal[b] = t.a[i][cols].max(0.0);
        }
    }
    // Reduced cost of the identity column of row i is 0 - y_i.
    let duals: Vec<f64> = (0..m).map(|i| -t.cost[ident[i]] * flip[i] * sign).collect();
    certify(lp, primal, duals, t.iterations)
}

/// Recomputes feasibility and the duality certificate from the original data.
fn certify(lp: &StandardLp, primal: Vec<f64>, duals: Vec<f64>, iterations: usize) -> Solution {
    let value: f64 = lp.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
    let mut residual = primal.iter().fold(0.0f64, |m, &x| m.max(-x));
    let mut col_dot = vec![0.0; lp.n];
    let mut dual_obj = 0.0;
    let mut dual_infeasibility = 0.0f64;
    // For Min, Ge rows need y >= 0 and Le rows y <= 0; Max mirrors the signs.
    let orient = match lp.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    for (row, &y) in lp.rows.iter().zip(&duals) {
        let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * primal[j]).sum();
        let viol = match row.kind {
            RowKind::Eq => (lhs - row.rhs).abs(),
            RowKind::Ge => (row.rhs - lhs).max(0.0),
            RowKind::Le => (lhs - row.rhs).max(0.0),
        };
        residual = residual.max(viol);
        let sign_viol = match row.kind {
            RowKind::Eq => 0.0,
            RowKind::Ge => (-orient * y).max(0.0),
            RowKind::Le => (orient * y).max(0.0),
        };
        dual_infeasibility = dual_infeasibility.max(sign_viol);
        dual_obj += y * row.rhs;
        for &(j, v) in &row.coeffs {
            col_dot[j] += y * v;
        }
    }
    for (c, yd) in lp.objective.iter().zip(&col_dot) {
        let reduced = orient * (c - yd);
        dual_infeasibility = dual_infeasibility.max(-reduced);
    }
    Solution {
        status: Status::Optimal,
        value,
        primal,
        duals,
        iterations,
        residual,
        duality_gap: (value - dual_obj).abs(),
        dual_infeasibility,
    }
}
