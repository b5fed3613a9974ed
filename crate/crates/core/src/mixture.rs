//! Mixture forward pass and gating-network training.
//!
//! Experts are frozen; only the gating network is trained. Every input is
//! served by exactly one expert, and the selected expert's class logits are
//! scaled by its gate value. Experts whose bias component is zero take no
//! part in routing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::{bias_loss, enforce_bias, BiasLossConfig, BiasVector};
use crate::error::{Error, Result};
use crate::gating::{soft_gate, GateBatch, GateMode, UtilityVector};
use crate::nn::{
    argmax, softmax_cross_entropy, Activation, BatchSampler, DenseNet, Gradients, Trace,
    TrainConfig,
};
use crate::seed::derive_seed;
use crate::synth::{Dataset, Expert, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMethod {
    SoftRegularization,
    BiasEnforcement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Each input goes to its highest gate.
    PerInputArgmax,
    /// Each batch is partitioned by batchwise bias enforcement.
    BatchEnforced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub experts: Vec<Expert>,
    pub gating: DenseNet,
    pub bias: BiasVector,
    pub method: BiasMethod,
}

impl MixtureModel {
    pub fn new(
        experts: Vec<Expert>,
        gating: DenseNet,
        bias: BiasVector,
        method: BiasMethod,
    ) -> Result<Self> {
        let n = experts.len();
        if n == 0 {
            return Err(Error::config("mixture needs at least one expert"));
        }
        if gating.output_dim() != n {
            return Err(Error::dim("gating outputs", n, gating.output_dim()));
        }
        if bias.len() != n {
            return Err(Error::dim("bias length", n, bias.len()));
        }
        let shape = experts[0].source_shape;
        if experts.iter().any(|e| e.source_shape != shape) {
            return Err(Error::config("experts must share one input shape"));
        }
        if gating.input_dim() != shape.len() {
            return Err(Error::dim("gating inputs", shape.len(), gating.input_dim()));
        }
        Ok(Self {
            experts,
            gating,
            bias,
            method,
        })
    }

    /// Mixture with a freshly initialised relu gating network; `hidden` lists
    /// the hidden widths. The output layer starts at zero, so initial gates
    /// are uniform over the active experts.
    pub fn init(
        experts: Vec<Expert>,
        hidden: &[usize],
        bias: BiasVector,
        method: BiasMethod,
        seed: u64,
    ) -> Result<Self> {
        let input = experts
            .first()
            .ok_or_else(|| Error::config("mixture needs at least one expert"))?
            .source_shape
            .len();
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(experts.len());
        let mut gating = DenseNet::seeded(&dims, Activation::Relu, seed)?;
        gating.zero_output_layer();
        Self::new(experts, gating, bias, method)
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.experts.iter().map(|e| e.cost_bytes as f64).collect()
    }

    /// Experts allowed to receive inputs.
    pub fn active(&self) -> Vec<usize> {
        self.bias.support()
    }

    /// Soft gate over the active experts; inactive entries are zero.
    pub fn soft_gates(&self, x: &[f64]) -> Result<Vec<f64>> {
        let logits = crate::gating::gate_logits(&self.gating, x)?;
        active_soft_gate(&logits, &self.active())
    }
}

/// Softmax restricted to `active`; a single active expert gets gate 1.
pub fn active_soft_gate(logits: &[f64], active: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.len()];
    match active {
        [] => return Err(Error::InvalidBias("no expert has nonzero bias".into())),
        [only] => out[*only] = 1.0,
        _ => {
            let sub: Vec<f64> = active.iter().map(|&n| logits[n]).collect();
            let g = soft_gate(&sub)?;
            for (&n, &v) in active.iter().zip(g.values()) {
                out[n] = v;
            }
        }
    }
    Ok(out)
}

/// Result of routing a batch through the mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutput {
    /// `G_{i,a(i)} * E_{a(i)}(P_{a(i)}(x_i))` per input.
    pub outputs: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sparse gate rows after routing.
    pub gates: GateBatch,
    /// Mean bytes per input under the assignment.
    pub realized_cost: f64,
}

impl MixtureOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.outputs.iter().map(|y| argmax(y)).collect()
    }
}

fn route(
    model: &MixtureModel,
    soft: &[Vec<f64>],
    routing: Routing,
) -> Result<(Vec<usize>, GateBatch)> {
    let active = model.active();
    match routing {
        Routing::PerInputArgmax => {
            let mut rows = Vec::with_capacity(soft.len());
            let mut assignment = Vec::with_capacity(soft.len());
            for g in soft {
                let a = top_active(g, &active);
                let mut r = vec![0.0; g.len()];
                r[a] = g[a];
                rows.push(r);
                assignment.push(a);
            }
            Ok((assignment, GateBatch::from_rows(rows, GateMode::Sparse)?))
        }
        Routing::BatchEnforced => {
            let batch = GateBatch::from_rows(soft.to_vec(), GateMode::Soft)?;
            let e = enforce_bias(&batch, &model.bias)?;
            Ok((e.assignment, e.masked))
        }
    }
}

fn top_active(gates: &[f64], active: &[usize]) -> usize {
    let mut best = active[0];
    for &n in &active[1..] {
        if gates[n] > gates[best] {
            best = n;
        }
    }
    best
}

/// Routes `inputs` as one batch and evaluates only the selected expert for
/// each input.
pub fn mixture_forward(
    model: &MixtureModel,
    inputs: &[Vec<f64>],
    routing: Routing,
) -> Result<MixtureOutput> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let soft = inputs
        .iter()
        .map(|x| model.soft_gates(x))
        .collect::<Result<Vec<_>>>()?;
    let (assignment, gates) = route(model, &soft, routing)?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for (i, (x, &a)) in inputs.iter().zip(&assignment).enumerate() {
        let g = gates.get(i, a);
        outputs.push(
            model.experts[a]
                .predict(x)?
                .into_iter()
                .map(|v| g * v)
                .collect(),
        );
    }
    let costs = model.costs();
    let realized_cost = assignment.iter().map(|&a| costs[a]).sum::<f64>() / inputs.len() as f64;
    Ok(MixtureOutput {
        outputs,
        assignment,
        gates,
        realized_cost,
    })
}

/// Test-time summary of a mixture on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureEval {
    pub accuracy: f64,
    pub realized_cost: f64,
    pub selection_frequency: Vec<f64>,
    /// Mean gate value applied to the selected expert's output.
    pub mean_selected_gate: f64,
}

const EVAL_ORDER_STREAM: u64 = 0xe7a1;

/// Evaluates on `split` in batches of `batch_size` through
/// [`mixture_forward`]. Split indices are class-ordered, so they are first
/// shuffled (deterministically, from the dataset seed) to give batches the
/// input mix batchwise enforcement expects.
pub fn evaluate(
    model: &MixtureModel,
    dataset: &Dataset,
    split: Split,
    routing: Routing,
    batch_size: usize,
) -> Result<MixtureEval> {
    let mut idx = dataset.indices(split).to_vec();
    if idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        dataset.seed,
        EVAL_ORDER_STREAM,
    )));
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let n = model.len();
    let (mut correct, mut cost, mut gate_sum) = (0usize, 0.0, 0.0);
    let mut counts = vec![0usize; n];
    for chunk in idx.chunks(batch_size) {
        let inputs: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&i| dataset.examples[i].x.clone())
            .collect();
        let out = mixture_forward(model, &inputs, routing)?;
        for (k, (&i, pred)) in chunk.iter().zip(out.predictions()).enumerate() {
            if pred == dataset.examples[i].y {
                correct += 1;
            }
            let a = out.assignment[k];
            counts[a] += 1;
            gate_sum += out.gates.get(k, a);
        }
        cost += out.realized_cost * chunk.len() as f64;
    }
    let m = idx.len() as f64;
    Ok(MixtureEval {
        accuracy: correct as f64 / m,
        realized_cost: cost / m,
        selection_frequency: counts.into_iter().map(|c| c as f64 / m).collect(),
        mean_selected_gate: gate_sum / m,
    })
}

/// Mean soft-gate utility over a split.
pub fn split_utility(
    model: &MixtureModel,
    dataset: &Dataset,
    split: Split,
) -> Result<UtilityVector> {
    let rows = dataset
        .indices(split)
        .iter()
        .map(|&i| model.soft_gates(&dataset.examples[i].x))
        .collect::<Result<Vec<_>>>()?;
    crate::gating::utility(&GateBatch::from_rows(rows, GateMode::Soft)?)
}

/// One training input with its precomputed (frozen) expert logits.
#[derive(Clone, Copy, Debug)]
pub struct MixtureSample<'a> {
    pub input: &'a [f64],
    /// Class logits of every expert; entries for inactive experts are unused.
    pub expert_logits: &'a [Vec<f64>],
    pub label: usize,
}

/// Loss terms, routing and gating gradient for one batch.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    pub task_loss: f64,
    pub bias_loss: f64,
    pub utility: Vec<f64>,
    pub assignment: Vec<usize>,
    pub gradients: Gradients,
}

impl BatchObjective {
    pub fn total(&self) -> f64 {
        self.task_loss + self.bias_loss
    }
}

/// Mean task loss of the routed mixture plus, for soft regularization, the
/// bias loss on the batch utility. The gradient flows into the gating
/// network through the retained gate values; routing itself is treated as
/// constant.
pub fn batch_objective(
    gating: &DenseNet,
    batch: &[MixtureSample<'_>],
    bias: &BiasVector,
    method: BiasMethod,
    loss_cfg: &BiasLossConfig,
) -> Result<BatchObjective> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = bias.len();
    if gating.output_dim() != n {
        return Err(Error::dim("gating outputs", n, gating.output_dim()));
    }
    let active = bias.support();
    let m = batch.len() as f64;

    let mut traces: Vec<Trace> = Vec::with_capacity(batch.len());
    let mut soft: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
    for s in batch {
        let t = gating.forward_trace(s.input)?;
        soft.push(active_soft_gate(t.output(), &active)?);
        traces.push(t);
    }

    let assignment: Vec<usize> = match method {
        BiasMethod::SoftRegularization => soft.iter().map(|g| top_active(g, &active)).collect(),
        BiasMethod::BiasEnforcement => {
            enforce_bias(&GateBatch::from_rows(soft.clone(), GateMode::Soft)?, bias)?.assignment
        }
    };

    // d(total)/d(gate) per row
    let mut dgate = vec![vec![0.0; n]; batch.len()];
    let mut task_loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let a = assignment[i];
        let z = &s.expert_logits[a];
        let g = soft[i][a];
        let scaled: Vec<f64> = z.iter().map(|v| g * v).collect();
        let (loss, dy) = softmax_cross_entropy(&scaled, s.label)?;
        task_loss += loss / m;
        dgate[i][a] = dy.iter().zip(z).map(|(d, v)| d * v).sum::<f64>() / m;
    }

    let mut utility = vec![0.0; n];
    for g in &soft {
        for (u, v) in utility.iter_mut().zip(g) {
            *u += v / m;
        }
    }

    let mut b_loss = 0.0;
    if method == BiasMethod::SoftRegularization {
        let (l, du) = bias_loss(&UtilityVector::from_values(utility.clone()), bias, loss_cfg)?;
        b_loss = l;
        for row in &mut dgate {
            for (d, g) in row.iter_mut().zip(&du) {
                *d += g / m;
            }
        }
    }

    let mut gradients = Gradients::zeros_like(gating);
    if active.len() > 1 {
        for (i, t) in traces.iter().enumerate() {
            let g = &soft[i];
            let dot: f64 = active.iter().map(|&k| g[k] * dgate[i][k]).sum();
            let mut dlogits = vec![0.0; n];
            for &k in &active {
                dlogits[k] = g[k] * (dgate[i][k] - dot);
            }
            let (pg, _) = gating.backward_trace(t, &dlogits)?;
            gradients.add_scaled(&pg, 1.0);
        }
    }

    Ok(BatchObjective {
        task_loss,
        bias_loss: b_loss,
        utility,
        assignment,
        gradients,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub task_loss: f64,
    pub bias_loss: f64,
    pub utility: Vec<f64>,
    pub realized_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    /// CSV with columns `step,task_loss,bias_loss,u_1..u_N,realized_cost`.
    pub fn write_csv<W: Write>(&self, mut out: W, experts: usize) -> Result<()> {
        let us: Vec<String> = (1..=experts).map(|n| format!("u_{n}")).collect();
        writeln!(
            out,
            "step,task_loss,bias_loss,{},realized_cost",
            us.join(",")
        )?;
        for r in &self.rows {
            let u: Vec<String> = r.utility.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.step,
                r.task_loss,
                r.bias_loss,
                u.join(","),
                r.realized_cost
            )?;
        }
        Ok(())
    }

    /// Mean task loss over consecutive windows of `window` steps.
    pub fn windowed_task_loss(&self, window: usize) -> Vec<f64> {
        self.rows
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().map(|r| r.task_loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainedMixture {
    pub model: MixtureModel,
    pub log: TrainingLog,
}

/// Frozen expert logits for a set of examples: `[example][expert][class]`.
pub fn expert_logits(
    experts: &[Expert],
    dataset: &Dataset,
    indices: &[usize],
    active: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    indices
        .iter()
        .map(|&i| {
            let x = &dataset.examples[i].x;
            (0..experts.len())
                .map(|n| {
                    if active.contains(&n) {
                        experts[n].predict(x)
                    } else {
                        Ok(Vec::new())
                    }
                })
                .collect()
        })
        .collect()
}

/// Trains the gating network of `model` on the train split. Expert weights
/// are never touched. A mixture with a single active expert has nothing to
/// learn and is returned as is.
pub fn train_mixture(
    mut model: MixtureModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &BiasLossConfig,
) -> Result<TrainedMixture> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let idx = dataset.indices(Split::Train);
    if idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let active = model.active();
    if active.len() < 2 {
        return Ok(TrainedMixture {
            model,
            log: TrainingLog::default(),
        });
    }
    let cache = expert_logits(&model.experts, dataset, idx, &active)?;
    let costs = model.costs();
    let mut sampler = BatchSampler::new(idx.len(), cfg.batch_size, cfg.seed);
    let mut log = TrainingLog {
        rows: Vec::with_capacity(cfg.steps),
    };
    for step in 0..cfg.steps {
        let picks = sampler.next_batch();
        let batch: Vec<MixtureSample<'_>> = picks
            .iter()
            .map(|&k| MixtureSample {
                input: &dataset.examples[idx[k]].x,
                expert_logits: &cache[k],
                label: dataset.examples[idx[k]].y,
            })
            .collect();
        let obj = batch_objective(&model.gating, &batch, &model.bias, model.method, loss_cfg)
            .map_err(|e| e.at_step(step))?;
        if !obj.total().is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "non-finite mixture loss".into(),
            });
        }
        model
            .gating
            .sgd_step(&obj.gradients, cfg.learning_rate)
            .map_err(|e| e.at_step(step))?;
        let realized_cost =
            obj.assignment.iter().map(|&a| costs[a]).sum::<f64>() / batch.len() as f64;
        log.rows.push(LogRow {
            step,
            task_loss: obj.task_loss,
            bias_loss: obj.bias_loss,
            utility: obj.utility,
            realized_cost,
        });
    }
    Ok(TrainedMixture { model, log })
}

/// On-disk mixture: the gating checkpoint plus references to expert files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureCheckpoint {
    pub gating: DenseNet,
    pub experts: Vec<PathBuf>,
    pub bias: BiasVector,
    pub method: BiasMethod,
}

impl MixtureCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Loads the referenced experts (relative paths resolve against `base`).
    pub fn into_model(self, base: &Path) -> Result<MixtureModel> {
        let experts = self
            .experts
            .iter()
            .map(|p| Expert::load(&base.join(p)))
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(experts, self.gating, self.bias, self.method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::synth::{InputShape, PreprocessSpec};

    /// Expert on 2 features that copies both features into 2 class logits.
    fn copy_expert(id: usize, cost_k: u64, scale: f64) -> Expert {
        let net = DenseNet::new(vec![Dense::new(
            vec![vec![scale, 0.0], vec![0.0, scale]],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let spec = PreprocessSpec::feature_mask(vec![0, 1]).with_bytes_per_value(cost_k);
        Expert {
            id,
            cost_bytes: spec.cost_bytes(),
            preprocess: spec,
            source_shape: InputShape::Features { dim: 2 },
            net,
            val_performance: 0.5,
        }
    }

    #[test]
    fn single_expert_mixture_routes_everything_to_it() {
        let e = copy_expert(0, 4, 1.0);
        let model = MixtureModel::new(
            vec![e.clone()],
            DenseNet::zeros(2, 1).unwrap(),
            BiasVector::one_hot(1, 0).unwrap(),
            BiasMethod::BiasEnforcement,
        )
        .unwrap();
        let xs = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        for routing in [Routing::PerInputArgmax, Routing::BatchEnforced] {
            let out = mixture_forward(&model, &xs, routing).unwrap();
            assert_eq!(out.assignment, vec![0, 0]);
            for (y, x) in out.outputs.iter().zip(&xs) {
                assert_eq!(y, &e.predict(x).unwrap());
            }
        }
    }

    #[test]
    fn enforced_cost_is_exact_for_integral_counts() {
        let experts = vec![copy_expert(0, 50, 1.0), copy_expert(1, 150, 1.0)];
        assert_eq!(experts[0].cost_bytes, 100);
        assert_eq!(experts[1].cost_bytes, 300);
        let model = MixtureModel::init(
            experts,
            &[4],
            BiasVector::new(vec![0.5, 0.5]).unwrap(),
            BiasMethod::BiasEnforcement,
            3,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.3, -(i as f64)]).collect();
        let out = mixture_forward(&model, &xs, Routing::BatchEnforced).unwrap();
        assert_eq!(out.realized_cost, 200.0);
    }

    #[test]
    fn argmax_routing_matches_row_argmax() {
        let experts = vec![
            copy_expert(0, 1, 1.0),
            copy_expert(1, 2, 1.0),
            copy_expert(2, 3, 1.0),
        ];
        // gate logits = log of the hand-traced gate rows
        let rows: [[f64; 3]; 4] = [
            [0.6, 0.3, 0.1],
            [0.2, 0.5, 0.3],
            [0.5, 0.2, 0.3],
            [0.1, 0.3, 0.6],
        ];
        let gating = DenseNet::new(vec![Dense::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![0.0; 3],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let model = MixtureModel::new(
            experts,
            gating,
            BiasVector::uniform(3).unwrap(),
            BiasMethod::SoftRegularization,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![(r[0] / r[2]).ln(), (r[1] / r[2]).ln()])
            .collect();
        let out = mixture_forward(&model, &xs, Routing::PerInputArgmax).unwrap();
        assert_eq!(out.assignment, vec![0, 1, 0, 2]);
        for (i, r) in rows.iter().enumerate() {
            assert!((out.gates.get(i, out.assignment[i]) - r[out.assignment[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_bias_experts_are_never_selected() {
        let experts = vec![
            copy_expert(0, 1, 1.0),
            copy_expert(1, 2, 1.0),
            copy_expert(2, 3, 1.0),
        ];
        let model = MixtureModel::init(
            experts,
            &[3],
            BiasVector::new(vec![0.5, 0.0, 0.5]).unwrap(),
            BiasMethod::SoftRegularization,
            1,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).sin() * 3.0, (i as f64).cos() * 3.0])
            .collect();
        for routing in [Routing::PerInputArgmax, Routing::BatchEnforced] {
            let out = mixture_forward(&model, &xs, routing).unwrap();
            assert!(out.assignment.iter().all(|&a| a != 1));
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = MixtureModel::init(
            vec![copy_expert(0, 1, 1.0), copy_expert(1, 2, 1.0)],
            &[],
            BiasVector::uniform(2).unwrap(),
            BiasMethod::BiasEnforcement,
            0,
        )
        .unwrap();
        assert!(matches!(
            mixture_forward(&model, &[], Routing::BatchEnforced),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let logits_a = vec![vec![2.0, -1.0, 0.5], vec![0.3, 0.2, -0.4]];
        let logits_b = vec![vec![-0.5, 1.5, 0.1], vec![1.2, -0.7, 0.9]];
        let inputs = [vec![0.4, -0.9, 0.2], vec![-0.3, 0.8, 1.1]];
        let batch = vec![
            MixtureSample {
                input: &inputs[0],
                expert_logits: &logits_a,
                label: 0,
            },
            MixtureSample {
                input: &inputs[1],
                expert_logits: &logits_b,
                label: 2,
            },
        ];
        let mut gating = DenseNet::seeded(&[3, 4, 2], Activation::Relu, 21).unwrap();
        let params: Vec<f64> = gating.flat_params().iter().map(|p| p * 1.7).collect();
        gating.set_flat_params(&params).unwrap();
        let bias = BiasVector::new(vec![0.3, 0.7]).unwrap();
        let cfg = BiasLossConfig::with_weight(2.0);
        for method in [BiasMethod::SoftRegularization, BiasMethod::BiasEnforcement] {
            let obj = batch_objective(&gating, &batch, &bias, method, &cfg).unwrap();
            let analytic = obj.gradients.flat();
            let h = 1e-5;
            for i in 0..params.len() {
                let mut net = gating.clone();
                let mut p = params.clone();
                p[i] += h;
                net.set_flat_params(&p).unwrap();
                let up = batch_objective(&net, &batch, &bias, method, &cfg).unwrap();
                p[i] -= 2.0 * h;
                net.set_flat_params(&p).unwrap();
                let dn = batch_objective(&net, &batch, &bias, method, &cfg).unwrap();
                assert_eq!(up.assignment, obj.assignment);
                let fd = (up.total() - dn.total()) / (2.0 * h);
                let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
                assert!(
                    err < 1e-4 || (fd - analytic[i]).abs() < 1e-9,
                    "{method:?} param {i}: {fd} vs {}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn log_csv_columns() {
        let log = TrainingLog {
            rows: vec![LogRow {
                step: 0,
                task_loss: 0.5,
                bias_loss: 0.25,
                utility: vec![0.4, 0.6],
                realized_cost: 6.0,
            }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf, 2).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,task_loss,bias_loss,u_1,u_2,realized_cost\n0,0.5,0.25,0.4,0.6,6\n"
        );
    }
}
