use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-8;
const DEGENERATE_SWITCH: usize = 50;
const MAX_PIVOTS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min objectiveᵀx` subject to `rows` and `lower ≤ x ≤ upper` (infinite bounds allowed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// `n` free variables, zero objective, no rows.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n],
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.rows.push(Constraint { coeffs, sense, rhs });
    }

    /// Adds a row from sparse `(variable, coefficient)` pairs.
    pub fn add_sparse_row(&mut self, entries: &[(usize, f64)], sense: Sense, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(k, c) in entries {
            coeffs[k] += c;
        }
        self.add_row(coeffs, sense, rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch(
                "variable bounds do not match the objective".into(),
            ));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row {r} has {} coefficients for {n} variables",
                    row.coeffs.len()
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("row {r}")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("objective".into()));
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("variable bounds".into()));
        }
        Ok(())
    }

    /// Plain-text dump: objective, one line per row, then variable bounds.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt_row = |coeffs: &[f64]| {
            coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(k, c)| format!("{c:+} x{k}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "minimize {}", fmt_row(&self.objective));
        let _ = writeln!(out, "subject to");
        for (r, row) in self.rows.iter().enumerate() {
            let sense = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, "  r{r}: {} {sense} {}", fmt_row(&row.coeffs), row.rhs);
        }
        let _ = writeln!(out, "bounds");
        for k in 0..self.num_vars() {
            let _ = writeln!(out, "  {} <= x{k} <= {}", self.lower[k], self.upper[k]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// `+∞` when infeasible, `−∞` when unbounded.
    pub value: f64,
    /// Empty unless optimal.
    pub x: Vec<f64>,
}

/// How an original variable maps onto non-negative standard-form columns.
#[derive(Clone, Copy)]
enum Map {
    /// `x = shift + y`
    Shift(usize, f64),
    /// `x = shift − y`
    Mirror(usize, f64),
    /// `x = y⁺ − y⁻`
    Free(usize, usize),
}

struct Tableau {
    /// `m × (n + 1)`; the last column is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize, cost: &mut [f64]) {
        let w = self.n + 1;
        let p = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[row].clone();
        for (r, other) in self.a.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = other[col];
            if f != 0.0 {
                for k in 0..w {
                    other[k] -= f * pivot_row[k];
                }
                other[col] = 0.0;
            }
        }
        let f = cost[col];
        if f != 0.0 {
            for k in 0..w {
                cost[k] -= f * pivot_row[k];
            }
            cost[col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Minimizes with reduced-cost row `cost` (last entry is −objective).
    /// Columns with `allowed[c] == false` never enter. Returns false on unboundedness.
    fn optimize(&mut self, cost: &mut [f64], allowed: &[bool]) -> Result<bool> {
        let mut degenerate = 0usize;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Solver("simplex pivot limit exceeded".into()));
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = -COST_TOL;
            for c in 0..self.n {
                if !allowed[c] || cost[c] >= -COST_TOL {
                    continue;
                }
                if bland {
                    enter = Some(c);
                    break;
                }
                if cost[c] < best {
                    best = cost[c];
                    enter = Some(c);
                }
            }
            let Some(col) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (r, row) in self.a.iter().enumerate() {
                let coef = row[col];
                if coef > PIVOT_TOL {
                    let ratio = row[self.n].max(0.0) / coef;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(row, col, cost);
        }
    }
}

/// Two-phase dense tableau simplex. Dantzig pricing, switching to Bland's
/// rule after a run of degenerate pivots.
pub fn simplex_solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let nv = lp.num_vars();
    for k in 0..nv {
        if lp.lower[k] > lp.upper[k] {
            return Ok(infeasible());
        }
    }

    // Column layout of the standard form.
    let mut maps = Vec::with_capacity(nv);
    let mut ncols = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for k in 0..nv {
        let (lo, up) = (lp.lower[k], lp.upper[k]);
        if lo.is_finite() {
            maps.push(Map::Shift(ncols, lo));
            if up.is_finite() {
                upper_rows.push((ncols, up - lo));
            }
            ncols += 1;
        } else if up.is_finite() {
            maps.push(Map::Mirror(ncols, up));
            ncols += 1;
        } else {
            maps.push(Map::Free(ncols, ncols + 1));
            ncols += 2;
        }
    }

    // Rows over structural columns, as (coeffs, sense, rhs).
    let mut rows: Vec<(Vec<f64>, Sense, f64)> =
        Vec::with_capacity(lp.rows.len() + upper_rows.len());
    for row in &lp.rows {
        let mut coeffs = vec![0.0; ncols];
        let mut rhs = row.rhs;
        for (k, &c) in row.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            match maps[k] {
                Map::Shift(col, s) => {
                    coeffs[col] += c;
                    rhs -= c * s;
                }
                Map::Mirror(col, s) => {
                    coeffs[col] -= c;
                    rhs -= c * s;
                }
                Map::Free(p, q) => {
                    coeffs[p] += c;
                    coeffs[q] -= c;
                }
            }
        }
        rows.push((coeffs, row.sense, rhs));
    }
    for &(col, width) in &upper_rows {
        let mut coeffs = vec![0.0; ncols];
        coeffs[col] = 1.0;
        rows.push((coeffs, Sense::Le, width));
    }
    let mut cost_struct = vec![0.0; ncols];
    for (k, &c) in lp.objective.iter().enumerate() {
        match maps[k] {
            Map::Shift(col, _) => cost_struct[col] += c,
            Map::Mirror(col, _) => cost_struct[col] -= c,
            Map::Free(p, q) => {
                cost_struct[p] += c;
                cost_struct[q] -= c;
            }
        }
    }

    // Normalize to rhs ≥ 0, then add slack / surplus / artificial columns.
    for (coeffs, sense, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            for v in coeffs.iter_mut() {
                *v = -*v;
            }
            *rhs = -*rhs;
            *sense = match *sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }
    let m = rows.len();
    let num_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let num_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let n = ncols + num_slack + num_art;
    let art_start = ncols + num_slack;
    let mut a = vec![vec![0.0; n + 1]; m];
    let mut basis = vec![0usize; m];
    let mut next_slack = ncols;
    let mut next_art = art_start;
    for (r, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        a[r][..ncols].copy_from_slice(coeffs);
        a[r][n] = *rhs;
        match sense {
            Sense::Le => {
                a[r][next_slack] = 1.0;
                basis[r] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                a[r][next_slack] = -1.0;
                next_slack += 1;
                a[r][next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                a[r][next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            }
        }
    }
    let mut tab = Tableau {
        a,
        basis,
        n,
        pivots: 0,
    };
    let scale = 1.0 + rows.iter().map(|r| r.2).fold(0.0, f64::max);

    // Phase 1.
    if num_art > 0 {
        let mut cost = vec![0.0; n + 1];
        cost[art_start..n].fill(1.0);
        for (r, &b) in tab.basis.iter().enumerate() {
            if b >= art_start {
                for (ck, ak) in cost.iter_mut().zip(&tab.a[r]) {
                    *ck -= ak;
                }
            }
        }
        let allowed = vec![true; n];
        tab.optimize(&mut cost, &allowed)?;
        let infeasibility = -cost[n];
        if infeasibility > FEAS_TOL * scale {
            return Ok(infeasible());
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.a.len() {
            if tab.basis[r] >= art_start {
                let col = (0..art_start)
                    .filter(|&c| tab.a[r][c].abs() > 1e-9)
                    .max_by(|&x, &y| tab.a[r][x].abs().total_cmp(&tab.a[r][y].abs()));
                match col {
                    Some(c) => {
                        let mut dummy = vec![0.0; n + 1];
                        tab.pivot(r, c, &mut dummy);
                        r += 1;
                    }
                    None => {
                        tab.a.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2.
    let mut cost = vec![0.0; n + 1];
    cost[..ncols].copy_from_slice(&cost_struct);
    for (r, &b) in tab.basis.iter().enumerate() {
        let cb = cost[b];
        if cb != 0.0 {
            for (ck, ak) in cost.iter_mut().zip(&tab.a[r]) {
                *ck -= cb * ak;
            }
        }
    }
    let allowed: Vec<bool> = (0..n).map(|c| c < art_start).collect();
    if !tab.optimize(&mut cost, &allowed)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            value: f64::NEG_INFINITY,
            x: Vec::new(),
        });
    }

    let mut y = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.a[r][n].max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let v = match *m {
                Map::Shift(col, s) => s + y[col],
                Map::Mirror(col, s) => s - y[col],
                Map::Free(p, q) => y[p] - y[q],
            };
            v.clamp(lp.lower[k], lp.upper[k])
        })
        .collect();
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        value,
        x,
    })
}

fn infeasible() -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        value: f64::INFINITY,
        x: Vec::new(),
    }
}
