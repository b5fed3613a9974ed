//! Bias vectors, the soft bias regularization loss and batchwise bias
//! enforcement.

use std::cmp::Ordering;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::{GateBatch, GateMode, UtilityVector};

const SIMPLEX_TOL: f64 = 1e-9;

/// Target frequency of use for each expert. Components lie in `[0, 1]` and
/// sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BiasVector(Vec<f64>);

impl BiasVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidBias("empty bias vector".into()));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < -SIMPLEX_TOL || **v > 1.0 + SIMPLEX_TOL)
        {
            return Err(Error::InvalidBias(format!("component {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidBias(format!(
                "components sum to {sum}, not 1"
            )));
        }
        Ok(Self(
            values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        ))
    }

    pub fn one_hot(experts: usize, index: usize) -> Result<Self> {
        if index >= experts {
            return Err(Error::InvalidBias(format!(
                "one-hot index {index} out of range for {experts} experts"
            )));
        }
        let mut v = vec![0.0; experts];
        v[index] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(experts: usize) -> Result<Self> {
        if experts == 0 {
            return Err(Error::InvalidBias("empty bias vector".into()));
        }
        Ok(Self(vec![1.0 / experts as f64; experts]))
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

    /// Experts with a nonzero target frequency.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&n| self.0[n] > 0.0).collect()
    }

    /// Per-expert counts for a batch of `m` rows: `m * b_n` rounded by largest
    /// remainder, ties to the lower expert index. Counts always sum to `m`.
    pub fn counts(&self, m: usize) -> Vec<usize> {
        let scaled: Vec<f64> = self.0.iter().map(|&b| b * m as f64).collect();
        // snap values that are integral up to rounding noise
        let mut counts: Vec<usize> = scaled
            .iter()
            .map(|&s| {
                let r = s.round();
                if (s - r).abs() < 1e-9 {
                    r as usize
                } else {
                    s.floor() as usize
                }
            })
            .collect();
        let assigned: usize = counts.iter().sum();
        if assigned > m {
            // only reachable through snapping; trim from the smallest remainders
            let mut order: Vec<usize> = (0..counts.len()).filter(|&n| counts[n] > 0).collect();
            order.sort_by(|&a, &b| {
                remainder(scaled[a], counts[a])
                    .total_cmp(&remainder(scaled[b], counts[b]))
                    .then(b.cmp(&a))
            });
            for &n in order.iter().take(assigned - m) {
                counts[n] -= 1;
            }
            return counts;
        }
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            remainder(scaled[b], counts[b])
                .total_cmp(&remainder(scaled[a], counts[a]))
                .then(a.cmp(&b))
        });
        for &n in order.iter().cycle().take(m - assigned) {
            counts[n] += 1;
        }
        counts
    }
}

fn remainder(scaled: f64, count: usize) -> f64 {
    scaled - count as f64
}

impl TryFrom<Vec<f64>> for BiasVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BiasVector> for Vec<f64> {
    fn from(b: BiasVector) -> Self {
        b.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasLossConfig {
    pub w_bias: f64,
    /// Floor applied to the log argument.
    pub epsilon: f64,
}

impl Default for BiasLossConfig {
    fn default() -> Self {
        Self {
            w_bias: 1.0,
            epsilon: 1e-7,
        }
    }
}

impl BiasLossConfig {
    pub fn with_weight(w_bias: f64) -> Self {
        Self {
            w_bias,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_bias >= 0.0 && self.w_bias.is_finite()) {
            return Err(Error::config("w_bias must be a nonnegative number"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("epsilon must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `-w_bias * log(max(eps, 1 - ||u - b||_2 / sqrt 2))` and its gradient with
/// respect to `u`.
pub fn bias_loss(
    u: &UtilityVector,
    b: &BiasVector,
    cfg: &BiasLossConfig,
) -> Result<(f64, Vec<f64>)> {
    if u.len() != b.len() {
        return Err(Error::dim("utility vs bias", b.len(), u.len()));
    }
    let diff: Vec<f64> = u
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x - y)
        .collect();
    let dist = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let arg = 1.0 - dist / SQRT_2;
    if arg <= cfg.epsilon {
        return Ok((-cfg.w_bias * cfg.epsilon.ln(), vec![0.0; diff.len()]));
    }
    let loss = -cfg.w_bias * arg.ln();
    if dist == 0.0 {
        return Ok((loss, vec![0.0; diff.len()]));
    }
    let scale = cfg.w_bias / (arg * SQRT_2 * dist);
    Ok((loss, diff.into_iter().map(|d| scale * d).collect()))
}

/// Outcome of batchwise enforcement: the masked gates and the expert chosen
/// for every row.
#[derive(Clone, Debug, PartialEq)]
pub struct Enforcement {
    pub masked: GateBatch,
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Batchwise bias enforcement. Expert by expert, the `K_n` still-unclaimed
/// rows with the largest gate values for expert `n` are claimed by it; every
/// other gate entry of a claimed row is zeroed.
pub fn enforce_bias(gates: &GateBatch, b: &BiasVector) -> Result<Enforcement> {
    let m = gates.len();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if b.len() != gates.experts() {
        return Err(Error::dim("bias vs gate width", gates.experts(), b.len()));
    }
    let counts = b.counts(m);
    let mut assignment = vec![usize::MAX; m];
    for (n, &k) in counts.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let mut free: Vec<usize> = (0..m).filter(|&i| assignment[i] == usize::MAX).collect();
        free.sort_by(|&i, &j| {
            gates
                .get(j, n)
                .partial_cmp(&gates.get(i, n))
                .unwrap_or(Ordering::Equal)
                .then(i.cmp(&j))
        });
        for &i in free.iter().take(k) {
            assignment[i] = n;
        }
    }
    debug_assert!(assignment.iter().all(|&a| a != usize::MAX));
    let rows = gates
        .rows()
        .iter()
        .zip(&assignment)
        .map(|(row, &a)| {
            let mut r = vec![0.0; row.len()];
            r[a] = row[a];
            r
        })
        .collect();
    Ok(Enforcement {
        masked: GateBatch::from_rows(rows, GateMode::Sparse)?,
        assignment,
        counts,
    })
}
