//! Dense two-phase primal simplex with bounded variables.
//!
//! Variables may sit nonbasic at either bound; the ratio test allows bound
//! flips. Phase 1 drives artificial variables to zero; entering selection
//! is Dantzig's rule with a Bland's-rule fallback after a run of degenerate
//! pivots, which guarantees termination on cycling-prone instances.

use crate::error::MilpError;
use crate::milp::model::{MilpModel, Sense, VarType};
use crate::planning::Relation;

const INF: f64 = f64::INFINITY;
const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const DEGENERATE_STREAK_LIMIT: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective in the model's sense (meaningful when status is Optimal).
    pub objective: f64,
    /// Values of the structural variables.
    pub values: Vec<f64>,
    /// Basis column indices (structural and slack columns).
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

struct Tableau {
    m: usize,
    n_cols: usize,
    /// m x n_cols, row-major: B^{-1} A.
    tab: Vec<f64>,
    /// B^{-1} b.
    beta: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<ColStatus>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Values of nonbasic columns.
    xval: Vec<f64>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.tab[r * self.n_cols + c]
    }

    fn basic_values(&self) -> Vec<f64> {
        let mut xb = self.beta.clone();
        for j in 0..self.n_cols {
            if self.status[j] == ColStatus::Basic {
                continue;
            }
            let v = self.xval[j];
            if v == 0.0 {
                continue;
            }
            for r in 0..self.m {
                let a = self.at(r, j);
                if a != 0.0 {
                    xb[r] -= a * v;
                }
            }
        }
        xb
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let n = self.n_cols;
        let piv = self.tab[row * n + col];
        let inv = 1.0 / piv;
        for c in 0..n {
            self.tab[row * n + c] *= inv;
        }
        self.beta[row] *= inv;
        // clean the pivot column
        self.tab[row * n + col] = 1.0;
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let factor = self.tab[r * n + col];
            if factor == 0.0 {
                continue;
            }
            let (head, tail) = self.tab.split_at_mut(r.max(row) * n);
            let (row_r, row_p) = if r < row {
                (&mut head[r * n..r * n + n], &tail[..n])
            } else {
                (&mut tail[..n], &head[row * n..row * n + n])
            };
            for c in 0..n {
                row_r[c] -= factor * row_p[c];
            }
            row_r[col] = 0.0;
            self.beta[r] -= factor * self.beta[row];
        }
    }
}

enum CoreOutcome {
    Optimal,
    Unbounded,
}

/// Runs the simplex core for a given cost vector (maximization) until no
/// improving column remains.
fn simplex_core(t: &mut Tableau, cost: &[f64]) -> Result<CoreOutcome, MilpError> {
    let iter_limit = 20_000 + 60 * (t.m + t.n_cols);
    let mut bland = false;
    let mut streak = 0usize;
    for _iter in 0..iter_limit {
        let xb = t.basic_values();
        // reduced costs d_j = c_j - y^T tab[:,j]
        let mut d = cost.to_vec();
        for r in 0..t.m {
            let y = cost[t.basis[r]];
            if y == 0.0 {
                continue;
            }
            let row = &t.tab[r * t.n_cols..(r + 1) * t.n_cols];
            for (dj, &a) in d.iter_mut().zip(row.iter()) {
                *dj -= y * a;
            }
        }

        // entering column
        let mut enter: Option<(usize, f64, f64)> = None; // (col, |d|, dir)
        for j in 0..t.n_cols {
            if t.lower[j] == t.upper[j] && t.status[j] != ColStatus::Basic {
                continue; // fixed column can never improve
            }
            let dir = match t.status[j] {
                ColStatus::Basic => continue,
                ColStatus::AtLower => {
                    if d[j] > COST_TOL {
                        1.0
                    } else {
                        continue;
                    }
                }
                ColStatus::AtUpper => {
                    if d[j] < -COST_TOL {
                        -1.0
                    } else {
                        continue;
                    }
                }
                ColStatus::Free => {
                    if d[j] > COST_TOL {
                        1.0
                    } else if d[j] < -COST_TOL {
                        -1.0
                    } else {
                        continue;
                    }
                }
            };
            if bland {
                enter = Some((j, d[j].abs(), dir));
                break;
            }
            match enter {
                Some((_, best, _)) if d[j].abs() <= best => {}
                _ => enter = Some((j, d[j].abs(), dir)),
            }
        }
        let Some((e, _, dir)) = enter else {
            return Ok(CoreOutcome::Optimal);
        };

        // ratio test
        let own_range = if t.lower[e].is_finite() && t.upper[e].is_finite() {
            t.upper[e] - t.lower[e]
        } else {
            INF
        };
        let mut t_best = own_range;
        let mut leaving: Option<(usize, bool)> = None; // (row, hits_lower)
        let mut leave_alpha = 0.0f64;
        for r in 0..t.m {
            let alpha = t.at(r, e);
            if alpha.abs() <= PIVOT_TOL {
                continue;
            }
            let rate = -dir * alpha; // d x_B(r) / d t
            let b = t.basis[r];
            let (limit, hits_lower) = if rate < 0.0 {
                if t.lower[b].is_finite() {
                    (((xb[r] - t.lower[b]) / -rate).max(0.0), true)
                } else {
                    continue;
                }
            } else if t.upper[b].is_finite() {
                (((t.upper[b] - xb[r]) / rate).max(0.0), false)
            } else {
                continue;
            };
            let replace = if limit < t_best - 1e-12 {
                true
            } else if limit <= t_best + 1e-12 {
                match leaving {
                    None => true,
                    Some((cur, _)) => {
                        if bland {
                            t.basis[r] < t.basis[cur]
                        } else {
                            alpha.abs() > leave_alpha.abs()
                        }
                    }
                }
            } else {
                false
            };
            if replace {
                t_best = t_best.min(limit);
                leaving = Some((r, hits_lower));
                leave_alpha = alpha;
            }
        }

        if !t_best.is_finite() {
            return Ok(CoreOutcome::Unbounded);
        }
        if t_best <= 1e-10 {
            streak += 1;
            if streak > DEGENERATE_STREAK_LIMIT {
                bland = true;
            }
        } else {
            streak = 0;
            bland = false;
        }

        match leaving {
            // bound flip when the entering column's own range is the binding limit
            Some((r, hits_lower)) if t_best < own_range - 1e-12 || own_range.is_infinite() => {
                let b = t.basis[r];
                t.status[b] = if hits_lower { ColStatus::AtLower } else { ColStatus::AtUpper };
                t.xval[b] = if hits_lower { t.lower[b] } else { t.upper[b] };
                t.status[e] = ColStatus::Basic;
                t.basis[r] = e;
                t.pivot(r, e);
            }
            _ => {
                // flip the entering variable to its other bound
                t.status[e] = match t.status[e] {
                    ColStatus::AtLower => ColStatus::AtUpper,
                    ColStatus::AtUpper => ColStatus::AtLower,
                    other => other,
                };
                t.xval[e] = match t.status[e] {
                    ColStatus::AtLower => t.lower[e],
                    ColStatus::AtUpper => t.upper[e],
                    _ => t.xval[e],
                };
            }
        }
    }
    Err(MilpError::Malformed("simplex iteration limit exceeded".into()))
}

/// Solves the LP relaxation of a model, optionally overriding variable
/// bounds (used by branch and bound). Binaries are relaxed to their bound
/// interval intersected with [0,1].
pub fn solve_lp(model: &MilpModel, bounds_override: Option<&[(f64, f64)]>) -> Result<LpSolution, MilpError> {
    let n = model.vars.len();
    let m = model.constraints.len();

    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for (i, v) in model.vars.iter().enumerate() {
        let (mut lo, mut hi) = match bounds_override {
            Some(b) => b[i],
            None => (v.lower, v.upper),
        };
        if v.kind == VarType::Binary {
            lo = lo.max(0.0);
            hi = hi.min(1.0);
        }
        if lo > hi {
            return Ok(LpSolution { status: LpStatus::Infeasible, objective: 0.0, values: vec![], basis: vec![] });
        }
        lower.push(lo);
        upper.push(hi);
    }

    // dense objective, flipped to maximization
    let flip = if model.sense == Sense::Minimize { -1.0 } else { 1.0 };
    let mut obj = vec![0.0; n];
    for &(v, c) in &model.objective {
        obj[v] += flip * c;
    }

    // columns: structural | slack per row | artificials (appended as needed)
    let mut n_cols = n + m;
    let mut col_lower = lower.clone();
    let mut col_upper = upper.clone();
    for c in &model.constraints {
        match c.relation {
            Relation::Le => {
                col_lower.push(0.0);
                col_upper.push(INF);
            }
            Relation::Ge => {
                col_lower.push(-INF);
                col_upper.push(0.0);
            }
            Relation::Eq => {
                col_lower.push(0.0);
                col_upper.push(0.0);
            }
        }
    }

    // initial nonbasic placement
    let mut status = Vec::with_capacity(n_cols);
    let mut xval = Vec::with_capacity(n_cols);
    for j in 0..n_cols {
        if col_lower[j].is_finite() {
            status.push(ColStatus::AtLower);
            xval.push(col_lower[j]);
        } else if col_upper[j].is_finite() {
            status.push(ColStatus::AtUpper);
            xval.push(col_upper[j]);
        } else {
            status.push(ColStatus::Free);
            xval.push(0.0);
        }
    }

    // residuals with all columns at their initial values
    let mut residual = vec![0.0; m];
    for (i, c) in model.constraints.iter().enumerate() {
        let mut r = c.rhs;
        for &(v, coeff) in &c.terms {
            r -= coeff * xval[v];
        }
        residual[i] = r; // slack starts at 0
    }

    // decide basis per row: slack if the residual fits its range, else artificial
    let mut basis = vec![usize::MAX; m];
    let mut artificial_rows = Vec::new();
    for i in 0..m {
        let s = n + i;
        if residual[i] >= col_lower[s] - FEAS_TOL && residual[i] <= col_upper[s] + FEAS_TOL {
            basis[i] = s;
        } else {
            artificial_rows.push(i);
        }
    }
    let n_art = artificial_rows.len();
    let art_base = n_cols;
    n_cols += n_art;
    for _ in 0..n_art {
        col_lower.push(0.0);
        col_upper.push(INF);
        status.push(ColStatus::AtLower);
        xval.push(0.0);
    }

    // assemble dense tableau rows
    let mut tab = vec![0.0; m * n_cols];
    let mut beta = vec![0.0; m];
    let mut art_sign = vec![1.0; n_art];
    for (i, c) in model.constraints.iter().enumerate() {
        for &(v, coeff) in &c.terms {
            tab[i * n_cols + v] += coeff;
        }
        tab[i * n_cols + n + i] = 1.0; // slack
        beta[i] = c.rhs;
    }
    for (k, &i) in artificial_rows.iter().enumerate() {
        let sign = if residual[i] >= 0.0 { 1.0 } else { -1.0 };
        art_sign[k] = sign;
        tab[i * n_cols + art_base + k] = sign;
        basis[i] = art_base + k;
    }
    for i in 0..m {
        status[basis[i]] = ColStatus::Basic;
    }

    let mut t = Tableau { m, n_cols, tab, beta, basis, status, lower: col_lower, upper: col_upper, xval };

    // the artificial columns are not identity columns when sign = -1; fix by
    // scaling those rows so the basis matrix is the identity
    for (k, &i) in artificial_rows.iter().enumerate() {
        if art_sign[k] < 0.0 {
            for c in 0..t.n_cols {
                t.tab[i * t.n_cols + c] = -t.tab[i * t.n_cols + c];
            }
            t.beta[i] = -t.beta[i];
        }
    }

    // phase 1
    if n_art > 0 {
        let mut cost1 = vec![0.0; t.n_cols];
        for k in 0..n_art {
            cost1[art_base + k] = -1.0;
        }
        match simplex_core(&mut t, &cost1)? {
            CoreOutcome::Unbounded => {
                return Err(MilpError::Malformed("phase-1 objective unbounded".into()));
            }
            CoreOutcome::Optimal => {}
        }
        let xb = t.basic_values();
        let mut infeas = 0.0;
        for r in 0..t.m {
            if t.basis[r] >= art_base {
                infeas += xb[r].abs();
            }
        }
        for j in art_base..t.n_cols {
            if t.status[j] != ColStatus::Basic {
                infeas += t.xval[j].abs();
            }
        }
        if infeas > FEAS_TOL * 10.0 {
            return Ok(LpSolution { status: LpStatus::Infeasible, objective: 0.0, values: vec![], basis: vec![] });
        }
        // freeze artificials at zero
        for j in art_base..t.n_cols {
            t.upper[j] = 0.0;
            if t.status[j] != ColStatus::Basic {
                t.status[j] = ColStatus::AtLower;
                t.xval[j] = 0.0;
            }
        }
    }

    // phase 2
    let mut cost2 = vec![0.0; t.n_cols];
    cost2[..n].copy_from_slice(&obj);
    let outcome = simplex_core(&mut t, &cost2)?;

    let xb = t.basic_values();
    let mut values = vec![0.0; n];
    for j in 0..n {
        values[j] = match t.status[j] {
            ColStatus::Basic => 0.0,
            _ => t.xval[j],
        };
    }
    for r in 0..t.m {
        let b = t.basis[r];
        if b < n {
            values[b] = xb[r];
        }
    }
    // snap tiny infeasibilities into the box
    for j in 0..n {
        values[j] = values[j].clamp(lower[j] - FEAS_TOL, upper[j] + FEAS_TOL);
        values[j] = values[j].clamp(lower[j].min(upper[j]), upper[j].max(lower[j]));
    }

    match outcome {
        CoreOutcome::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective: flip * INF,
            values,
            basis: t.basis.clone(),
        }),
        CoreOutcome::Optimal => {
            let objective = model.objective_value(&values);
            Ok(LpSolution { status: LpStatus::Optimal, objective, values, basis: t.basis.clone() })
        }
    }
}
