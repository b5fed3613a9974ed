//! Turning a data budget into a bias vector.
//!
//! Given per-expert costs `d` and validation performances `p`, the bias that
//! maximises expected performance at average cost `d_t` solves
//!
//! ```text
//! maximise  b·p   subject to  b·d = d_t,  Σ b = 1,  0 ≤ b ≤ 1
//! ```
//!
//! and the dual direction minimises `b·d` subject to `b·p = p_t`. Both are
//! solved with the simplex in [`simplex`]; [`brute_force_solve`] is a grid
//! oracle for small `N`.

mod brute;
pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::bias::BiasVector;
use crate::error::{Error, Result};
use simplex::{simplex_solve, Constraint, LinearProgram, Relation, Sense, SimplexOutcome};

pub use brute::{brute_force_solve, BRUTE_FORCE_MAX_EXPERTS};

/// Tolerance on the budget equality, in units of the largest coefficient.
pub const EQUALITY_TOL: f64 = 1e-8;
const SUPPORT_TOL: f64 = 1e-9;

/// Per-expert data cost in bytes per input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("cost vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::config("costs must be finite and positive"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<f64>> for CostVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CostVector> for Vec<f64> {
    fn from(c: CostVector) -> Self {
        c.0
    }
}

/// Per-expert validation performance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PerfVector(Vec<f64>);

impl PerfVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("performance vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("performances must be finite"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PerfVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PerfVector> for Vec<f64> {
    fn from(p: PerfVector) -> Self {
        p.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

/// Which side of the problem is fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// Average cost `d_t`; maximise performance.
    Cost(f64),
    /// Expected performance `p_t`; minimise cost.
    Perf(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub b: Option<BiasVector>,
    pub objective: Option<f64>,
    pub status: LpStatus,
    /// Achievable range of the constrained quantity, reported when the
    /// target lies outside it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_interval: Option<[f64; 2]>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub(crate) fn infeasible(lo: f64, hi: f64) -> Self {
        Self {
            b: None,
            objective: None,
            status: LpStatus::Infeasible,
            feasible_interval: Some([lo, hi]),
        }
    }

    pub(crate) fn optimal(b: BiasVector, objective: f64) -> Self {
        Self {
            b: Some(b),
            objective: Some(objective),
            status: LpStatus::Optimal,
            feasible_interval: None,
        }
    }
}

/// Expected per-input cost `b·d`.
pub fn average_cost(b: &BiasVector, d: &CostVector) -> Result<f64> {
    if b.len() != d.len() {
        return Err(Error::dim("average_cost", d.len(), b.len()));
    }
    Ok(dot(b.values(), d.values()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bias maximising `b·p` at average cost `d_t`.
pub fn solve_for_cost(d: &CostVector, p: &PerfVector, d_t: f64) -> Result<LpSolution> {
    check_lengths(d, p)?;
    if !d_t.is_finite() {
        return Err(Error::config("cost target must be finite"));
    }
    solve(d.values(), p.values(), Sense::Maximize, d_t)
}

/// Bias minimising `b·d` at expected performance `p_t`.
pub fn solve_for_perf(d: &CostVector, p: &PerfVector, p_t: f64) -> Result<LpSolution> {
    check_lengths(d, p)?;
    if !p_t.is_finite() {
        return Err(Error::config("performance target must be finite"));
    }
    solve(p.values(), d.values(), Sense::Minimize, p_t)
}

fn check_lengths(d: &CostVector, p: &PerfVector) -> Result<()> {
    if d.len() != p.len() {
        return Err(Error::dim("cost/performance vectors", d.len(), p.len()));
    }
    Ok(())
}

fn scale_of(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn base_constraints(c: &[f64], target: f64) -> Vec<Constraint> {
    let n = c.len();
    let mut rows = vec![
        Constraint::new(vec![1.0; n], Relation::Eq, 1.0),
        Constraint::new(c.to_vec(), Relation::Le, target + EQUALITY_TOL),
        Constraint::new(c.to_vec(), Relation::Ge, target - EQUALITY_TOL),
    ];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        rows.push(Constraint::new(e, Relation::Le, 1.0));
    }
    rows
}

/// Optimises `obj·b` (in `sense`) subject to `c·b = target` on the simplex.
/// Both vectors are rescaled to unit max-magnitude so tolerances are
/// relative. Among optimal vertices the lexicographically smallest `b` is
/// returned.
fn solve(c_raw: &[f64], obj_raw: &[f64], sense: Sense, target_raw: f64) -> Result<LpSolution> {
    let n = c_raw.len();
    let lo = c_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cs = scale_of(c_raw);
    let os = scale_of(obj_raw);
    let c: Vec<f64> = c_raw.iter().map(|v| v / cs).collect();
    let obj: Vec<f64> = obj_raw.iter().map(|v| v / os).collect();
    let target = target_raw / cs;

    let mut constraints = base_constraints(&c, target);
    let first = simplex_solve(&LinearProgram {
        sense,
        objective: obj.clone(),
        constraints: constraints.clone(),
    })?;
    let (x0, z) = match first {
        SimplexOutcome::Optimal { x, objective, .. } => (x, objective),
        SimplexOutcome::Infeasible { .. } => return Ok(LpSolution::infeasible(lo, hi)),
        SimplexOutcome::Unbounded => {
            return Err(Error::Numerical {
                reason: "bounded problem reported unbounded".into(),
                trace: Vec::new(),
            })
        }
    };

    // Restrict to the optimal face, then walk coordinates lexicographically.
    let face = match sense {
        Sense::Maximize => Constraint::new(obj.clone(), Relation::Ge, z - 1e-9),
        Sense::Minimize => Constraint::new(obj.clone(), Relation::Le, z + 1e-9),
    };
    constraints.push(face);
    let mut x = x0.clone();
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        match simplex_solve(&LinearProgram {
            sense: Sense::Minimize,
            objective: e.clone(),
            constraints: constraints.clone(),
        }) {
            Ok(SimplexOutcome::Optimal {
                x: xk, objective, ..
            }) => {
                x = xk;
                constraints.push(Constraint::new(e, Relation::Le, objective + 1e-9));
            }
            // Round-off collapsed the face; the last vertex is still optimal.
            _ => break,
        }
    }

    let b = polish(&x, &c, target).or_else(|| polish(&x0, &c, target));
    let b = match b {
        Some(b) => b,
        None => renormalise(&x0),
    };
    let b = BiasVector::new(b)?;
    let objective = dot(b.values(), obj_raw);
    Ok(LpSolution::optimal(b, objective))
}

/// Recomputes a vertex exactly from its support: one expert, or the unique
/// mixture of two that meets the target.
fn polish(x: &[f64], c: &[f64], target: f64) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&k| x[k] > SUPPORT_TOL).collect();
    let mut b = vec![0.0; x.len()];
    match support.as_slice() {
        [i] if (c[*i] - target).abs() <= EQUALITY_TOL => {
            b[*i] = 1.0;
            Some(b)
        }
        [i, j] if (c[*i] - c[*j]).abs() > 1e-12 => {
            let bj = (target - c[*i]) / (c[*j] - c[*i]);
            if !(-1e-12..=1.0 + 1e-12).contains(&bj) {
                return None;
            }
            let bj = bj.clamp(0.0, 1.0);
            b[*i] = 1.0 - bj;
            b[*j] = bj;
            Some(b)
        }
        _ => None,
    }
}

fn renormalise(x: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = x
        .iter()
        .map(|v| if *v > SUPPORT_TOL { *v } else { 0.0 })
        .collect();
    let s: f64 = clipped.iter().sum();
    clipped.into_iter().map(|v| v / s).collect()
}
