use super::{dot, CostVector, LpSolution, PerfVector, Target};
use crate::bias::BiasVector;
use crate::error::{Error, Result};

pub const BRUTE_FORCE_MAX_EXPERTS: usize = 5;

/// Exhaustive oracle over a simplex grid.
///
/// The experts with the smallest and largest constrained coefficient form a
/// pivot pair. Every other coordinate walks the grid `{0, step, 2·step, ..}`,
/// and the pair absorbs the remaining mass so the equality holds exactly.
/// Any vertex of the true problem is reachable up to rounding its (at most
/// two) grid coordinates down, so the best value found is within
/// `2·step·(max p − min p)` of the optimum.
pub fn brute_force_solve(
    d: &CostVector,
    p: &PerfVector,
    target: Target,
    grid_step: f64,
) -> Result<LpSolution> {
    let n = d.len();
    if p.len() != n {
        return Err(Error::dim("cost/performance vectors", n, p.len()));
    }
    if n > BRUTE_FORCE_MAX_EXPERTS {
        return Err(Error::TooManyExperts {
            max: BRUTE_FORCE_MAX_EXPERTS,
            got: n,
        });
    }
    if !(grid_step > 0.0 && grid_step <= 0.01) {
        return Err(Error::config("grid_step must lie in (0, 0.01]"));
    }
    let (c, obj, t, maximise) = match target {
        Target::Cost(t) => (d.values(), p.values(), t, true),
        Target::Perf(t) => (p.values(), d.values(), t, false),
    };
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * hi.abs().max(1.0);
    if t < lo - tol || t > hi + tol {
        return Ok(LpSolution::infeasible(lo, hi));
    }
    if n == 1 {
        return Ok(LpSolution::optimal(BiasVector::new(vec![1.0])?, obj[0]));
    }

    let i_lo = (0..n).fold(0, |a, k| if c[k] < c[a] { k } else { a });
    let i_hi = (0..n).fold(if i_lo == 0 { 1 } else { 0 }, |a, k| {
        if k != i_lo && c[k] > c[a] {
            k
        } else {
            a
        }
    });
    let free: Vec<usize> = (0..n).filter(|&k| k != i_lo && k != i_hi).collect();
    let steps = (1.0 / grid_step).round() as usize;

    let better = |a: f64, b: f64| if maximise { a > b } else { a < b };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut units = vec![0usize; free.len()];
    loop {
        let used: usize = units.iter().sum();
        if used <= steps {
            let mut b = vec![0.0; n];
            for (&k, &u) in free.iter().zip(&units) {
                b[k] = u as f64 / steps as f64;
            }
            let rest = 1.0 - used as f64 / steps as f64;
            let residual = t - dot(&b, c);
            let gap = c[i_hi] - c[i_lo];
            let pair = if gap > 1e-12 {
                let w_hi = (residual - c[i_lo] * rest) / gap;
                let w_lo = rest - w_hi;
                if w_hi >= -1e-12 && w_lo >= -1e-12 {
                    Some((w_lo.max(0.0), w_hi.max(0.0)))
                } else {
                    None
                }
            } else if (residual - c[i_lo] * rest).abs() <= tol {
                // Pair is interchangeable on the constraint; give the mass to
                // whichever scores better.
                if better(obj[i_hi], obj[i_lo]) {
                    Some((0.0, rest))
                } else {
                    Some((rest, 0.0))
                }
            } else {
                None
            };
            if let Some((w_lo, w_hi)) = pair {
                b[i_lo] = w_lo;
                b[i_hi] = w_hi;
                let value = dot(&b, obj);
                if best.as_ref().is_none_or(|(_, v)| better(value, *v)) {
                    best = Some((b, value));
                }
            }
        }
        // odometer over the free coordinates
        let mut k = 0;
        loop {
            if k == units.len() {
                return finish(best, lo, hi);
            }
            units[k] += 1;
            if units.iter().sum::<usize>() <= steps {
                break;
            }
            units[k] = 0;
            k += 1;
        }
    }
}

fn finish(best: Option<(Vec<f64>, f64)>, lo: f64, hi: f64) -> Result<LpSolution> {
    match best {
        Some((b, v)) => {
            let s: f64 = b.iter().sum();
            let b = b.into_iter().map(|x| x / s).collect();
            Ok(LpSolution::optimal(BiasVector::new(b)?, v))
        }
        None => Ok(LpSolution::infeasible(lo, hi)),
    }
}
