//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Variables are implicitly nonnegative. Problems here are tiny (a handful
//! of variables and constraints), so reduced costs are recomputed from the
//! tableau on every iteration.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimplexOutcome {
    Optimal {
        x: Vec<f64>,
        objective: f64,
        /// `(entering column, leaving row)` for every pivot performed.
        trace: Vec<(usize, usize)>,
    },
    /// Farkas certificate: one multiplier per constraint, in the original
    /// orientation. `y·A ≤ 0` on every column, `y·rhs > 0`, `y_i ≤ 0` on
    /// `Le` rows and `y_i ≥ 0` on `Ge` rows.
    Infeasible {
        certificate: Vec<f64>,
        infeasibility: f64,
    },
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    trace: Vec<(usize, usize)>,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in &mut self.rows[row] {
            *v /= p;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
        self.trace.push((col, row));
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut red = cost.to_vec();
        for (r, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                for (j, v) in red.iter_mut().enumerate() {
                    *v -= cb * r[j];
                }
            }
        }
        red
    }

    fn value(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &b)| cost[b] * self.rhs(i))
            .sum()
    }

    /// Minimises `cost` over the current basis using only `allowed`
    /// columns to enter. Returns `false` when unbounded.
    fn minimise(&mut self, cost: &[f64], allowed: &[bool]) -> Result<bool> {
        loop {
            if self.trace.len() > MAX_PIVOTS {
                return Err(self.numerical("pivot limit exceeded"));
            }
            let red = self.reduced_costs(cost);
            let Some(enter) = (0..self.cols).find(|&j| allowed[j] && red[j] < -FEAS_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((l, best)) => {
                            if ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[l])
                            {
                                Some((i, ratio))
                            } else {
                                Some((l, best))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(false),
                Some((row, _)) => self.pivot(row, enter),
            }
        }
    }

    fn numerical(&self, reason: &str) -> Error {
        Error::Numerical {
            reason: reason.to_string(),
            trace: self.trace.clone(),
        }
    }
}

pub fn simplex_solve(lp: &LinearProgram) -> Result<SimplexOutcome> {
    let n = lp.objective.len();
    if n == 0 {
        return Err(Error::config("linear program has no variables"));
    }
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return Err(Error::dim("constraint row", n, c.coeffs.len()));
        }
    }
    if lp
        .constraints
        .iter()
        .flat_map(|c| c.coeffs.iter().chain(std::iter::once(&c.rhs)))
        .chain(&lp.objective)
        .any(|v| !v.is_finite())
    {
        return Err(Error::config("linear program has non-finite data"));
    }

    // Normalise to nonnegative right-hand sides.
    let mut signs = Vec::with_capacity(lp.constraints.len());
    let mut rows: Vec<Constraint> = Vec::with_capacity(lp.constraints.len());
    for c in &lp.constraints {
        if c.rhs < 0.0 {
            let relation = match c.relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            rows.push(Constraint::new(
                c.coeffs.iter().map(|v| -v).collect(),
                relation,
                -c.rhs,
            ));
            signs.push(-1.0);
        } else {
            rows.push(c.clone());
            signs.push(1.0);
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|c| c.relation != Relation::Eq).count();
    let n_art = rows.iter().filter(|c| c.relation != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let art_start = n + n_slack;

    let mut table = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut slack = n;
    let mut art = art_start;
    // column that started as the identity for each row
    let mut unit_col = vec![0; m];
    for (i, c) in rows.iter().enumerate() {
        table[i][..n].copy_from_slice(&c.coeffs);
        table[i][cols] = c.rhs;
        match c.relation {
            Relation::Le => {
                table[i][slack] = 1.0;
                basis[i] = slack;
                unit_col[i] = slack;
                slack += 1;
            }
            Relation::Ge => {
                table[i][slack] = -1.0;
                slack += 1;
                table[i][art] = 1.0;
                basis[i] = art;
                unit_col[i] = art;
                art += 1;
            }
            Relation::Eq => {
                table[i][art] = 1.0;
                basis[i] = art;
                unit_col[i] = art;
                art += 1;
            }
        }
    }
    let mut t = Tableau {
        rows: table,
        basis,
        cols,
        trace: Vec::new(),
    };

    // Phase 1
    if n_art > 0 {
        let mut cost1 = vec![0.0; cols];
        cost1[art_start..].iter_mut().for_each(|v| *v = 1.0);
        let all = vec![true; cols];
        if !t.minimise(&cost1, &all)? {
            return Err(t.numerical("phase one reported unbounded"));
        }
        let infeasibility = t.value(&cost1);
        if infeasibility > FEAS_TOL {
            // Duals y = c_B B^{-1}; B^{-1} sits in the initial unit columns.
            let y: Vec<f64> = (0..m)
                .map(|k| {
                    let col = unit_col[k];
                    let bcol: f64 = t
                        .basis
                        .iter()
                        .enumerate()
                        .map(|(i, &b)| cost1[b] * t.rows[i][col])
                        .sum();
                    // reduced cost of the unit column is c_col - y_k
                    signs[k] * bcol
                })
                .collect();
            return Ok(SimplexOutcome::Infeasible {
                certificate: y,
                infeasibility,
            });
        }
        // Drive artificial variables out of the basis where possible.
        for i in 0..m {
            if t.basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| t.rows[i][j].abs() > PIVOT_TOL) {
                    t.pivot(i, j);
                }
            }
        }
    }

    // Phase 2
    let mut cost2 = vec![0.0; cols];
    for (j, &c) in lp.objective.iter().enumerate() {
        cost2[j] = match lp.sense {
            Sense::Minimize => c,
            Sense::Maximize => -c,
        };
    }
    let allowed: Vec<bool> = (0..cols).map(|j| j < art_start).collect();
    if !t.minimise(&cost2, &allowed)? {
        return Ok(SimplexOutcome::Unbounded);
    }

    let mut x = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        let v = t.rhs(i);
        if v < -FEAS_TOL {
            return Err(t.numerical("basic variable went negative"));
        }
        if b < n {
            x[b] = v.max(0.0);
        } else if b >= art_start && v.abs() > FEAS_TOL {
            return Err(t.numerical("artificial variable left at a nonzero level"));
        }
    }
    for c in &lp.constraints {
        let lhs: f64 = c.coeffs.iter().zip(&x).map(|(a, v)| a * v).sum();
        let scale = 1.0 + c.rhs.abs() + c.coeffs.iter().map(|v| v.abs()).sum::<f64>();
        let slack = match c.relation {
            Relation::Le => (lhs - c.rhs).max(0.0),
            Relation::Ge => (c.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - c.rhs).abs(),
        };
        if slack > 1e-9 * scale {
            return Err(t.numerical("solution violates a constraint beyond tolerance"));
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(SimplexOutcome::Optimal {
        x,
        objective,
        trace: t.trace,
    })
}
