//! Gate computation: dense softmax gates, top-1 sparse gates and per-batch
//! expert utility.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, DenseNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Soft,
    Sparse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateVector {
    values: Vec<f64>,
    mode: GateMode,
}

impl GateVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest entry (lowest index on ties).
    pub fn top(&self) -> usize {
        argmax(&self.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Normalised exponential over all `N` logits.
pub fn soft_gate(logits: &[f64]) -> Result<GateVector> {
    if logits.len() < 2 {
        return Err(Error::config(format!(
            "gating needs at least 2 experts, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("gate logits must be finite"));
    }
    Ok(GateVector {
        values: softmax(logits),
        mode: GateMode::Soft,
    })
}

/// Top-1 gate: the soft gate masked to its argmax entry.
pub fn sparse_gate(logits: &[f64]) -> Result<GateVector> {
    let soft = soft_gate(logits)?;
    let top = argmax(logits);
    let mut values = vec![0.0; logits.len()];
    values[top] = soft.values[top];
    Ok(GateVector {
        values,
        mode: GateMode::Sparse,
    })
}

/// `M` gate vectors sharing `N` and mode.
#[derive(Clone, Debug, PartialEq)]
pub struct GateBatch {
    rows: Vec<Vec<f64>>,
    experts: usize,
    mode: GateMode,
}

impl GateBatch {
    pub fn new(rows: Vec<GateVector>) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBatch)?;
        let (experts, mode) = (first.len(), first.mode);
        if let Some(bad) = rows.iter().find(|r| r.len() != experts) {
            return Err(Error::dim("gate batch row", experts, bad.len()));
        }
        if rows.iter().any(|r| r.mode != mode) {
            return Err(Error::config("gate batch mixes soft and sparse rows"));
        }
        Ok(Self {
            rows: rows.into_iter().map(GateVector::into_values).collect(),
            experts,
            mode,
        })
    }

    /// Builds a batch from raw values without checking normalisation. Used for
    /// hand-constructed and masked batches.
    pub fn from_rows(rows: Vec<Vec<f64>>, mode: GateMode) -> Result<Self> {
        let experts = rows.first().ok_or(Error::EmptyBatch)?.len();
        if experts == 0 {
            return Err(Error::config("gate rows must be nonempty"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != experts) {
            return Err(Error::dim("gate batch row", experts, bad.len()));
        }
        Ok(Self {
            rows,
            experts,
            mode,
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn get(&self, row: usize, expert: usize) -> f64 {
        self.rows[row][expert]
    }

    /// Per-expert fraction of rows whose gate is nonzero for that expert.
    pub fn selection_frequency(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.experts];
        for row in &self.rows {
            for (c, &v) in counts.iter_mut().zip(row) {
                if v != 0.0 {
                    *c += 1;
                }
            }
        }
        let m = self.rows.len() as f64;
        counts.into_iter().map(|c| c as f64 / m).collect()
    }

    /// Debug dump: one line per row, `id,g_1,..,g_N`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.experts).map(|n| format!("g_{n}")).collect();
        writeln!(out, "id,{}", header.join(","))?;
        for (i, row) in self.rows.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// Expert utility vector `u`, a point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityVector(Vec<f64>);

impl UtilityVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps raw values; callers are responsible for simplex membership.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Column means of a batch of soft gates.
pub fn utility(batch: &GateBatch) -> Result<UtilityVector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let m = batch.len() as f64;
    let mut u = vec![0.0; batch.experts];
    for row in &batch.rows {
        for (acc, &v) in u.iter_mut().zip(row) {
            *acc += v;
        }
    }
    u.iter_mut().for_each(|v| *v /= m);
    Ok(UtilityVector(u))
}

/// Raw gating model output `f(x; W_g)`.
pub fn gate_logits(gating: &DenseNet, x: &[f64]) -> Result<Vec<f64>> {
    let logits = gating.forward(x)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            step: 0,
            reason: "non-finite gate logits".into(),
        });
    }
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn soft_gate_examples() {
        let g = soft_gate(&[0.0, 0.0, 0.0]).unwrap();
        assert!(close(g.values(), &[1.0 / 3.0; 3], 1e-15));

        let g = soft_gate(&[std::f64::consts::LN_2, 0.0]).unwrap();
        assert!(close(g.values(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));

        let g = soft_gate(&[1000.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|v| v.is_finite()));
        assert!((g.values()[0] - 1.0).abs() < 1e-15 && g.values()[1] < 1e-300);
    }

    #[test]
    fn soft_gate_needs_two_experts() {
        assert!(matches!(soft_gate(&[1.0]), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sparse_gate_examples() {
        let g = sparse_gate(&[std::f64::consts::LN_2, 0.0]).unwrap();
        assert!(close(g.values(), &[2.0 / 3.0, 0.0], 1e-15));

        let g = sparse_gate(&[0.0, 0.0]).unwrap();
        assert_eq!(g.values(), &[0.5, 0.0]);

        // e^3 / (e + e^2 + e^3)
        let expected = 1.0 / (1.0 + (-1.0f64).exp() + (-2.0f64).exp());
        let g = sparse_gate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(&g.values()[..2], &[0.0, 0.0]);
        assert!((g.values()[2] - expected).abs() < 1e-15);
        assert!((g.values()[2] - 0.6652).abs() < 1e-4);
    }

    #[test]
    fn utility_examples() {
        let one = GateBatch::from_rows(vec![vec![0.7, 0.3]], GateMode::Soft).unwrap();
        assert!(close(utility(&one).unwrap().values(), &[0.7, 0.3], 1e-15));

        let two =
            GateBatch::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], GateMode::Soft).unwrap();
        assert!(close(utility(&two).unwrap().values(), &[0.5, 0.5], 1e-15));

        let four = GateBatch::from_rows(
            vec![
                vec![0.6, 0.4],
                vec![0.5, 0.5],
                vec![0.4, 0.6],
                vec![0.5, 0.5],
            ],
            GateMode::Soft,
        )
        .unwrap();
        assert!(close(utility(&four).unwrap().values(), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(GateBatch::new(vec![]), Err(Error::EmptyBatch)));
        assert!(matches!(
            GateBatch::from_rows(vec![], GateMode::Soft),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn batch_rejects_mixed_modes() {
        let rows = vec![
            soft_gate(&[0.0, 1.0]).unwrap(),
            sparse_gate(&[0.0, 1.0]).unwrap(),
        ];
        assert!(GateBatch::new(rows).is_err());
    }

    #[test]
    fn gate_logits_examples() {
        let zero = DenseNet::zeros(3, 4).unwrap();
        assert_eq!(gate_logits(&zero, &[1.0, -2.0, 5.0]).unwrap(), vec![0.0; 4]);

        let id = DenseNet::new(vec![Dense::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        assert_eq!(gate_logits(&id, &[0.25, -3.0]).unwrap(), vec![0.25, -3.0]);

        let net = DenseNet::seeded(&[2, 5, 3], Activation::Relu, 9).unwrap();
        assert_eq!(
            gate_logits(&net, &[0.3, 0.1]).unwrap(),
            gate_logits(&net, &[0.3, 0.1]).unwrap()
        );
        assert!(gate_logits(&net, &[0.3]).is_err());
    }

    #[test]
    fn csv_dump_has_one_line_per_row() {
        let b =
            GateBatch::from_rows(vec![vec![0.25, 0.75], vec![1.0, 0.0]], GateMode::Soft).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,g_1,g_2\n0,0.25,0.75\n1,1,0\n");
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, 2..8)
    }

    proptest! {
        #[test]
        fn soft_gate_is_a_distribution(logits in logits_strategy(), shift in -100.0f64..100.0) {
            let g = soft_gate(&logits).unwrap();
            prop_assert!((g.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(g.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let h = soft_gate(&shifted).unwrap();
            prop_assert_eq!(g.top(), h.top());
            prop_assert!(close(g.values(), h.values(), 1e-9));
        }

        #[test]
        fn sparse_gate_has_single_nonzero_at_soft_max(logits in logits_strategy()) {
            let s = sparse_gate(&logits).unwrap();
            let soft = soft_gate(&logits).unwrap();
            let nonzero: Vec<usize> = (0..s.len()).filter(|&i| s.values()[i] != 0.0).collect();
            prop_assert_eq!(nonzero, vec![soft.top()]);
            prop_assert_eq!(s.values()[soft.top()], soft.values()[soft.top()]);
        }

        #[test]
        fn utility_lies_in_simplex(rows in proptest::collection::vec(logits_strategy().prop_map(|mut v| { v.resize(4, 0.0); v }), 1..40)) {
            let soft = GateBatch::new(rows.iter().map(|l| soft_gate(l).unwrap()).collect()).unwrap();
            let u = utility(&soft).unwrap();
            prop_assert!(u.values().iter().all(|&v| v >= 0.0));
            prop_assert!((u.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);

            let sparse = GateBatch::new(rows.iter().map(|l| sparse_gate(l).unwrap()).collect()).unwrap();
            let freq = sparse.selection_frequency();
            prop_assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (n, f) in freq.iter().enumerate() {
                let count = rows.iter().filter(|l| argmax(l) == n).count();
                prop_assert_eq!(*f, count as f64 / rows.len() as f64);
            }
        }
    }
}
