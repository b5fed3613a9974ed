use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    default_targets, interpolate_benchmark, random_selection_baseline, single_expert_baseline,
    utility_deviation, CurvePoint, ExpertPoint, Method, RateCurve,
};
use crate::bias::{BiasLossConfig, BiasVector};
use crate::error::{Error, Result};
use crate::mixture::{
    evaluate, train_mixture, BiasMethod, MixtureEval, MixtureModel, Routing, TrainedMixture,
};
use crate::nn::TrainConfig;
use crate::seed::derive_seed;
use crate::solver::{solve_for_cost, CostVector, PerfVector};
use crate::synth::{
    train_expert, Dataset, Expert, ExpertArch, FeatureTaskConfig, ImageTaskConfig, PreprocessSpec,
    Split, TaskConfig,
};

const DATA_STREAM: u64 = 0xda7a;
const EXPERT_STREAM: u64 = 0xe4;
const GATE_STREAM: u64 = 0x6a7e;
const RANDOM_STREAM: u64 = 0x4a4d;

/// Everything needed to go from a seed to trained experts and mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub task: TaskConfig,
    pub experts: Vec<PreprocessSpec>,
    pub expert_arch: ExpertArch,
    pub expert_train: TrainConfig,
    pub gate_hidden: Vec<usize>,
    pub gate_train: TrainConfig,
    /// Candidate weights for soft regularization; one is picked per target
    /// on the validation split.
    pub w_bias_grid: Vec<f64>,
    pub eval_batch: usize,
    pub random_trials: usize,
}

impl Pipeline {
    /// Two experts on the 2-D task: `f1` alone (4 B) and `(f1, f2)` (8 B).
    pub fn feature_default() -> Self {
        Self {
            task: TaskConfig::Feature(FeatureTaskConfig::default()),
            experts: vec![
                PreprocessSpec::feature_mask(vec![0]),
                PreprocessSpec::feature_mask(vec![0, 1]),
            ],
            expert_arch: ExpertArch::default(),
            expert_train: TrainConfig {
                batch_size: 32,
                learning_rate: 0.05,
                steps: 2000,
                seed: 0,
            },
            gate_hidden: vec![16],
            gate_train: TrainConfig {
                batch_size: 128,
                learning_rate: 0.05,
                steps: 2000,
                seed: 0,
            },
            w_bias_grid: vec![0.1, 0.5, 1.0, 5.0],
            eval_batch: 128,
            random_trials: 20,
        }
    }

    /// Three experts on 16x16 images pooled to 4x4, 8x8 and 16x16.
    pub fn image_default() -> Self {
        Self {
            task: TaskConfig::Image(ImageTaskConfig::default()),
            experts: vec![
                PreprocessSpec::avg_pool(1, 4),
                PreprocessSpec::avg_pool(1, 8),
                PreprocessSpec::avg_pool(1, 16),
            ],
            expert_train: TrainConfig {
                batch_size: 32,
                learning_rate: 0.02,
                steps: 3000,
                seed: 0,
            },
            gate_hidden: vec![32],
            ..Self::feature_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experts.is_empty() {
            return Err(Error::config("pipeline needs at least one expert"));
        }
        let mut costs: Vec<u64> = Vec::with_capacity(self.experts.len());
        for s in &self.experts {
            s.validate()?;
            if costs.contains(&s.cost_bytes()) {
                return Err(Error::config("experts must have distinct costs"));
            }
            costs.push(s.cost_bytes());
        }
        self.expert_train.validate()?;
        self.gate_train.validate()?;
        if self.w_bias_grid.is_empty() {
            return Err(Error::config("w_bias_grid must not be empty"));
        }
        for &w in &self.w_bias_grid {
            BiasLossConfig::with_weight(w).validate()?;
        }
        if self.eval_batch == 0 {
            return Err(Error::config("eval_batch must be at least 1"));
        }
        if self.random_trials == 0 {
            return Err(Error::config("random_trials must be at least 1"));
        }
        Ok(())
    }
}

/// Dataset and trained experts for one seed.
pub fn prepare_seed(pipeline: &Pipeline, seed: u64) -> Result<(Dataset, Vec<Expert>)> {
    pipeline.validate()?;
    let dataset = pipeline.generate(seed)?;
    let experts = pipeline.train_experts(&dataset, seed)?;
    Ok((dataset, experts))
}

impl Pipeline {
    /// The dataset a run with `seed` uses.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.task.generate(derive_seed(seed, DATA_STREAM))
    }

    /// Trains one expert per spec, in parallel.
    pub fn train_experts(&self, dataset: &Dataset, seed: u64) -> Result<Vec<Expert>> {
        self.experts
            .par_iter()
            .enumerate()
            .map(|(id, spec)| {
                let cfg = TrainConfig {
                    seed: derive_seed(seed, EXPERT_STREAM + id as u64),
                    ..self.expert_train
                };
                train_expert(dataset, id, spec, &self.expert_arch, &cfg)
            })
            .collect()
    }

    /// Initialises and trains a gate over `experts` for bias `b`.
    pub fn train_gate(
        &self,
        dataset: &Dataset,
        experts: &[Expert],
        b: &BiasVector,
        method: BiasMethod,
        w_bias: f64,
        seed: u64,
    ) -> Result<TrainedMixture> {
        let model = MixtureModel::init(
            experts.to_vec(),
            &self.gate_hidden,
            b.clone(),
            method,
            derive_seed(seed, GATE_STREAM + 1),
        )?;
        let cfg = TrainConfig {
            seed: derive_seed(seed, GATE_STREAM),
            ..self.gate_train
        };
        train_mixture(model, dataset, &cfg, &BiasLossConfig::with_weight(w_bias))
    }

    /// Test-split evaluation with the routing each method deploys with.
    pub fn evaluate(&self, model: &MixtureModel, dataset: &Dataset) -> Result<MixtureEval> {
        let routing = match model.method {
            BiasMethod::BiasEnforcement => Routing::BatchEnforced,
            BiasMethod::SoftRegularization => Routing::PerInputArgmax,
        };
        evaluate(model, dataset, Split::Test, routing, self.eval_batch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// The default grid clipped to the feasible interval.
    Auto,
    List(Vec<f64>),
}

/// One (method, d_t, seed) measurement on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub seed: u64,
    pub d_t: f64,
    pub realized_cost: f64,
    pub performance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<BiasVector>,
    /// Spread over random-selection trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub performance_sd: Option<f64>,
    /// Soft regularization weight picked on the validation split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_bias: Option<f64>,
    /// `||u − b||₁` with `u` from soft gates over the test split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility_deviation: Option<f64>,
    /// Enforcement model evaluated with per-input argmax routing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax_performance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax_cost: Option<f64>,
}

impl CellResult {
    fn new(method: Method, seed: u64, d_t: f64, realized_cost: f64, performance: f64) -> Self {
        Self {
            method,
            seed,
            d_t,
            realized_cost,
            performance,
            b: None,
            performance_sd: None,
            w_bias: None,
            utility_deviation: None,
            argmax_performance: None,
            argmax_cost: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub d_t: f64,
    pub feasible_interval: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub costs: Vec<f64>,
    /// Validation accuracies `p` fed to the solver.
    pub val_performance: Vec<f64>,
    pub experts: Vec<ExpertPoint>,
    pub cells: Vec<CellResult>,
    pub skipped: Vec<SkippedTarget>,
    pub curves: BTreeMap<Method, RateCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean over the seeds whose curve spans `[d_min, d_max]`.
    pub rho_mean: Option<f64>,
    pub rho_sd: Option<f64>,
    pub rho_per_seed: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub targets: Targets,
    pub per_seed: Vec<SeedReport>,
    pub summary: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn cells(&self) -> impl Iterator<Item = &CellResult> {
        self.per_seed.iter().flat_map(|s| s.cells.iter())
    }
}

/// Runs every (method, target, seed) cell. Cells run on the current rayon
/// pool; results come back in a fixed order regardless of scheduling.
pub fn sweep(
    pipeline: &Pipeline,
    targets: &Targets,
    methods: &[Method],
    seeds: &[u64],
) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::config("sweep needs at least one method"));
    }
    if seeds.is_empty() {
        return Err(Error::config("sweep needs at least one seed"));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let (dataset, experts) = prepare_seed(pipeline, seed)?;
            sweep_seed(pipeline, &dataset, experts, targets, &methods, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = methods
        .iter()
        .map(|&m| {
            let rho_per_seed: Vec<Option<f64>> = per_seed
                .iter()
                .map(|s| s.curves.get(&m).and_then(|c| c.rho))
                .collect();
            let vals: Vec<f64> = rho_per_seed.iter().flatten().copied().collect();
            let (rho_mean, rho_sd) = mean_sd(&vals);
            MethodSummary {
                method: m,
                rho_mean,
                rho_sd,
                rho_per_seed,
            }
        })
        .collect();
    Ok(EvalReport {
        seeds: seeds.to_vec(),
        methods,
        targets: targets.clone(),
        per_seed,
        summary,
    })
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

/// Sweep over targets for one seed with experts already trained.
pub(crate) fn sweep_seed(
    pipeline: &Pipeline,
    dataset: &Dataset,
    experts: Vec<Expert>,
    targets: &Targets,
    methods: &[Method],
    seed: u64,
) -> Result<SeedReport> {
    let costs: Vec<f64> = experts.iter().map(|e| e.cost_bytes as f64).collect();
    let val: Vec<f64> = experts.iter().map(|e| e.val_performance).collect();
    let d = CostVector::new(costs.clone())?;
    let p = PerfVector::new(val.clone())?;
    let points = single_expert_baseline(&experts, dataset)?;

    let wanted = match targets {
        Targets::Auto => default_targets(&d),
        Targets::List(t) => t.clone(),
    };
    let mut skipped = Vec::new();
    let mut solved = Vec::new();
    for &d_t in &wanted {
        let sol = solve_for_cost(&d, &p, d_t)?;
        match (sol.b, sol.feasible_interval) {
            (Some(b), _) => solved.push((d_t, b)),
            (None, Some(interval)) => skipped.push(SkippedTarget {
                d_t,
                feasible_interval: interval,
            }),
            (None, None) => return Err(Error::config("solver returned no bias vector")),
        }
    }

    let jobs: Vec<(Method, f64, &BiasVector)> = solved
        .iter()
        .flat_map(|(d_t, b)| methods.iter().map(move |&m| (m, *d_t, b)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(m, d_t, b)| run_cell(pipeline, dataset, &experts, &points, m, d_t, b, seed))
        .collect::<Result<Vec<_>>>()?;

    let (d_min, d_max) = (d.min(), d.max());
    let mut curves = BTreeMap::new();
    if d_max > d_min {
        for &m in methods {
            let pts = cells
                .iter()
                .filter(|c| c.method == m)
                .map(|c| CurvePoint {
                    d_t: c.d_t,
                    realized_cost: c.realized_cost,
                    performance: c.performance,
                    method: m,
                })
                .collect();
            curves.insert(m, RateCurve::new(pts, d_min, d_max)?);
        }
    }
    Ok(SeedReport {
        seed,
        costs,
        val_performance: val,
        experts: points,
        cells,
        skipped,
        curves,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    pipeline: &Pipeline,
    dataset: &Dataset,
    experts: &[Expert],
    points: &[ExpertPoint],
    method: Method,
    d_t: f64,
    b: &BiasVector,
    seed: u64,
) -> Result<CellResult> {
    let batch = pipeline.eval_batch;
    let mut cell = match method {
        Method::BiasEnforcement => {
            let model = pipeline
                .train_gate(dataset, experts, b, BiasMethod::BiasEnforcement, 0.0, seed)?
                .model;
            let ev = pipeline.evaluate(&model, dataset)?;
            let am = evaluate(&model, dataset, Split::Test, Routing::PerInputArgmax, batch)?;
            let mut c = CellResult::new(method, seed, d_t, ev.realized_cost, ev.accuracy);
            c.argmax_performance = Some(am.accuracy);
            c.argmax_cost = Some(am.realized_cost);
            c
        }
        Method::SoftRegularization => {
            let trained = pipeline
                .w_bias_grid
                .par_iter()
                .map(|&w| {
                    let model = pipeline
                        .train_gate(dataset, experts, b, BiasMethod::SoftRegularization, w, seed)?
                        .model;
                    let val =
                        evaluate(&model, dataset, Split::Val, Routing::PerInputArgmax, batch)?;
                    Ok((w, model, val.accuracy))
                })
                .collect::<Result<Vec<_>>>()?;
            let pick = pick_soft(&trained);
            let (w, model, _) = &trained[pick];
            let ev = pipeline.evaluate(model, dataset)?;
            let mut c = CellResult::new(method, seed, d_t, ev.realized_cost, ev.accuracy);
            c.w_bias = Some(*w);
            c.utility_deviation = Some(utility_deviation(model, dataset)?);
            c
        }
        Method::RandomSelection => {
            let r = random_selection_baseline(
                experts,
                dataset,
                b,
                derive_seed(seed, RANDOM_STREAM),
                pipeline.random_trials,
            )?;
            let mut c = CellResult::new(method, seed, d_t, r.realized_cost, r.mean);
            c.performance_sd = Some(r.sd);
            c
        }
        Method::SingleExpert => {
            CellResult::new(method, seed, d_t, d_t, interpolate_benchmark(points, d_t)?)
        }
    };
    cell.b = Some(b.clone());
    Ok(cell)
}

/// Highest validation accuracy; the smaller weight wins ties.
fn pick_soft<M>(trained: &[(f64, M, f64)]) -> usize {
    (0..trained.len())
        .fold(None::<usize>, |best, k| match best {
            Some(j) if trained[j].2 >= trained[k].2 => Some(j),
            _ => Some(k),
        })
        .unwrap_or(0)
}

pub const RESULTS_HEADER: &str = "method,d_t_bytes,realized_cost_bytes,performance,seed";

/// One row per cell, in report order.
pub fn write_results_csv<W: Write>(report: &EvalReport, mut out: W) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for c in report.cells() {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.method, c.d_t, c.realized_cost, c.performance, c.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Pipeline {
        let mut p = Pipeline::feature_default();
        p.task = TaskConfig::Feature(FeatureTaskConfig {
            n_per_class: 60,
            ..FeatureTaskConfig::default()
        });
        p.expert_train.steps = 200;
        p.gate_train.steps = 50;
        p.w_bias_grid = vec![1.0];
        p.random_trials = 3;
        p
    }

    #[test]
    fn soft_pick_takes_best_validation_accuracy() {
        let t = [(0.1, (), 0.8), (1.0, (), 0.9), (5.0, (), 0.9)];
        assert_eq!(pick_soft(&t), 1);
        assert_eq!(pick_soft(&t[2..]), 0);
    }

    #[test]
    fn sweep_covers_every_cell_and_skips_infeasible() {
        let targets = Targets::List(vec![4.0, 6.0, 8.0, 9.0]);
        let r = sweep(&tiny(), &targets, &Method::ALL, &[1]).unwrap();
        let s = &r.per_seed[0];
        assert_eq!(s.cells.len(), 4 * 3);
        assert_eq!(s.skipped.len(), 1);
        assert_eq!(s.skipped[0].feasible_interval, [4.0, 8.0]);
        for c in &s.cells {
            assert!(c.realized_cost >= 4.0 - 1e-9 && c.realized_cost <= 8.0 + 1e-9);
        }
        for m in Method::ALL {
            assert!(r.summary_for(m).unwrap().rho_mean.is_some());
        }
        let mut buf = Vec::new();
        write_results_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.starts_with(RESULTS_HEADER));
    }

    #[test]
    fn endpoints_match_standalone_experts() {
        let r = sweep(&tiny(), &Targets::List(vec![4.0, 8.0]), &Method::ALL, &[2]).unwrap();
        let s = &r.per_seed[0];
        for c in &s.cells {
            let e = if c.d_t == 4.0 {
                &s.experts[0]
            } else {
                &s.experts[1]
            };
            assert_eq!(c.performance, e.performance, "{:?}", c.method);
            assert_eq!(c.realized_cost, e.cost);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let targets = Targets::List(vec![6.0]);
        let m = [Method::BiasEnforcement, Method::RandomSelection];
        let a = sweep(&tiny(), &targets, &m, &[3]).unwrap();
        let b = sweep(&tiny(), &targets, &m, &[3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn auto_targets_span_the_cost_range() {
        let r = sweep(&tiny(), &Targets::Auto, &[Method::SingleExpert], &[0]).unwrap();
        let d: Vec<f64> = r.cells().map(|c| c.d_t).collect();
        assert_eq!(d, vec![4.0, 6.0, 8.0]);
    }

    #[test]
    fn rejects_duplicate_costs() {
        let mut p = tiny();
        p.experts = vec![
            PreprocessSpec::feature_mask(vec![0]),
            PreprocessSpec::feature_mask(vec![1]),
        ];
        assert!(p.validate().is_err());
    }
}
