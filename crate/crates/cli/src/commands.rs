use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bmoe::bias::BiasVector;
use bmoe::eval::{sweep as run_sweep, utility_deviation, write_results_csv, Method, Targets};
use bmoe::mixture::{evaluate, MixtureCheckpoint, MixtureEval, Routing};
use bmoe::nn::TrainConfig;
use bmoe::solver::{solve_for_cost, solve_for_perf, CostVector, LpSolution, PerfVector};
use bmoe::synth::{
    Dataset, Expert, ExpertArch, InputShape, PreprocessSpec, Split, TaskConfig, DATA_FILE,
    META_FILE,
};
use serde::{Deserialize, Serialize};

use crate::config::{describe, parse_expert, parse_targets, RunConfig};
use crate::error::CliError;
use crate::manifest::{sha256_hex, Manifest};
use crate::{Common, GenDataArgs, SolveBiasArgs, SweepArgs, TrainExpertsArgs, TrainMixtureArgs};

pub const REPORT_FILE: &str = "p.json";
pub const CHECKPOINT_FILE: &str = "mixture.json";
pub const LOG_FILE: &str = "training_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SWEEP_REPORT_FILE: &str = "report.json";

const DEFAULT_SWEEP_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// One line of the expert report written by train-experts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpertEntry {
    pub id: usize,
    pub file: String,
    pub spec: String,
    pub preprocess: PreprocessSpec,
    pub cost_bytes: u64,
    pub val_perf: f64,
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(t) = common.task {
        cfg.task = Some(t);
    }
    if let Some(o) = &common.output {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| CliError::usage("--output is required (or output_dir in the config)"))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn single_seed(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    flag.or_else(|| cfg.seeds.as_ref().and_then(|s| s.first().copied()))
        .unwrap_or(0)
}

fn channels(shape: &InputShape) -> usize {
    match shape {
        InputShape::Image { channels, .. } => *channels,
        InputShape::Features { .. } => 1,
    }
}

/// Adopts the dataset's generator config unless the config names another.
fn bind_dataset(cfg: &mut RunConfig, dataset: &Dataset) {
    if cfg.task_config.is_none() {
        cfg.task_config = Some(dataset.config.clone());
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn parse_array(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    serde_json::from_str(s).map_err(|e| CliError::usage(format!("--{flag}: {e}")))
}

fn read_report(path: &Path) -> Result<Vec<ExpertEntry>, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn infeasible(sol: &LpSolution, target: f64) -> CliError {
    match sol.feasible_interval {
        Some([lo, hi]) => CliError::Infeasible(format!(
            "target {target} outside the feasible interval [{lo}, {hi}]"
        )),
        None => CliError::Infeasible(format!("target {target} has no solution")),
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.n_per_class {
        cfg.set_n_per_class(n)?;
    }
    let seed = single_seed(a.seed, &cfg);
    let pipeline = cfg.pipeline()?;
    let dataset = pipeline.generate(seed)?;
    let out = output_dir(&cfg)?;
    dataset.save(&out)?;

    #[derive(Serialize)]
    struct Record<'a> {
        task: &'a TaskConfig,
        seed: u64,
        dataset_seed: u64,
    }
    let record = Record {
        task: &pipeline.task,
        seed,
        dataset_seed: dataset.seed,
    };
    Manifest::new("gen-data", &record, vec![seed])?
        .write(&out, &[DATA_FILE.into(), META_FILE.into()])?;
    println!(
        "{} examples ({} classes) written to {}",
        dataset.examples.len(),
        dataset.classes,
        out.display()
    );
    Ok(())
}

pub fn train_experts(a: TrainExpertsArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    let seed = single_seed(a.seed, &cfg);
    let dataset = Dataset::load(&a.data)?;
    bind_dataset(&mut cfg, &dataset);
    if let Some(list) = &a.experts {
        let c = channels(&dataset.shape);
        cfg.experts = Some(
            list.iter()
                .map(|s| parse_expert(s, c))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let pipeline = cfg.pipeline()?;
    pipeline.validate()?;
    let out = output_dir(&cfg)?;
    let experts = pipeline.train_experts(&dataset, seed)?;

    let mut entries = Vec::with_capacity(experts.len());
    let mut files = Vec::with_capacity(experts.len() + 1);
    for e in &experts {
        let file = format!("expert_{}.json", e.id);
        e.save(&out.join(&file))?;
        entries.push(ExpertEntry {
            id: e.id,
            file: file.clone(),
            spec: describe(&e.preprocess),
            preprocess: e.preprocess.clone(),
            cost_bytes: e.cost_bytes,
            val_perf: e.val_performance,
        });
        files.push(file);
    }
    write_json(&out.join(REPORT_FILE), &entries)?;
    files.push(REPORT_FILE.into());

    #[derive(Serialize)]
    struct Record<'a> {
        experts: &'a [PreprocessSpec],
        expert_arch: &'a ExpertArch,
        train: &'a TrainConfig,
        seed: u64,
        data_sha256: String,
    }
    let record = Record {
        experts: &pipeline.experts,
        expert_arch: &pipeline.expert_arch,
        train: &pipeline.expert_train,
        seed,
        data_sha256: sha256_hex(&std::fs::read(a.data.join(DATA_FILE))?),
    };
    Manifest::new("train-experts", &record, vec![seed])?.write(&out, &files)?;
    println!("{}", serde_json::to_string_pretty(&entries)?);
    Ok(())
}

pub fn solve_bias(a: SolveBiasArgs) -> Result<(), CliError> {
    let (d, p) = match (&a.report, &a.d, &a.p) {
        (Some(r), _, _) => {
            let entries = read_report(r)?;
            (
                entries.iter().map(|e| e.cost_bytes as f64).collect(),
                entries.iter().map(|e| e.val_perf).collect(),
            )
        }
        (None, Some(d), Some(p)) => (parse_array("d", d)?, parse_array("p", p)?),
        _ => return Err(CliError::usage("give --report, or both --d and --p")),
    };
    let (d, p) = (CostVector::new(d)?, PerfVector::new(p)?);
    let (sol, target) = match (a.cost, a.perf) {
        (Some(c), None) => (solve_for_cost(&d, &p, c)?, c),
        (None, Some(t)) => (solve_for_perf(&d, &p, t)?, t),
        _ => return Err(CliError::usage("give exactly one of --cost and --perf")),
    };
    let json = serde_json::to_string_pretty(&sol)?;
    println!("{json}");
    if let Some(o) = &a.output {
        std::fs::write(o, json + "\n")?;
    }
    if sol.is_optimal() {
        Ok(())
    } else {
        Err(infeasible(&sol, target))
    }
}

pub fn train_mixture(a: TrainMixtureArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    let seed = single_seed(a.seed, &cfg);
    let method = a.method.bias_method().ok_or_else(|| {
        CliError::usage("--method: train-mixture trains enforcement or soft mixtures")
    })?;
    let dataset = Dataset::load(&a.data)?;
    bind_dataset(&mut cfg, &dataset);
    let pipeline = cfg.pipeline()?;
    pipeline.gate_train.validate()?;

    let entries = read_report(&a.experts_dir.join(REPORT_FILE))?;
    let paths: Vec<PathBuf> = entries
        .iter()
        .map(|e| std::fs::canonicalize(a.experts_dir.join(&e.file)))
        .collect::<Result<_, _>>()?;
    let experts = paths
        .iter()
        .map(|p| Expert::load(p))
        .collect::<Result<Vec<_>, _>>()?;

    let b = match (&a.b, a.cost) {
        (Some(b), None) => BiasVector::new(parse_array("b", b)?)?,
        (None, Some(c)) => {
            let d = CostVector::new(experts.iter().map(|e| e.cost_bytes as f64).collect())?;
            let p = PerfVector::new(experts.iter().map(|e| e.val_performance).collect())?;
            let sol = solve_for_cost(&d, &p, c)?;
            match sol.b.clone() {
                Some(b) => b,
                None => return Err(infeasible(&sol, c)),
            }
        }
        _ => return Err(CliError::usage("give exactly one of --b and --cost")),
    };
    let w_bias = match a.method {
        Method::SoftRegularization => a.w_bias,
        _ => 0.0,
    };
    let out = output_dir(&cfg)?;
    let trained = pipeline.train_gate(&dataset, &experts, &b, method, w_bias, seed)?;
    let model = trained.model;

    MixtureCheckpoint {
        gating: model.gating.clone(),
        experts: paths,
        bias: model.bias.clone(),
        method,
    }
    .save(&out.join(CHECKPOINT_FILE))?;
    let mut log = BufWriter::new(File::create(out.join(LOG_FILE))?);
    trained.log.write_csv(&mut log, model.len())?;
    drop(log);

    #[derive(Serialize)]
    struct Metrics {
        method: Method,
        b: BiasVector,
        #[serde(skip_serializing_if = "Option::is_none")]
        w_bias: Option<f64>,
        test: MixtureEval,
        per_input_argmax: MixtureEval,
        utility_deviation: f64,
    }
    let metrics = Metrics {
        method: a.method,
        b: b.clone(),
        w_bias: (a.method == Method::SoftRegularization).then_some(w_bias),
        test: pipeline.evaluate(&model, &dataset)?,
        per_input_argmax: evaluate(
            &model,
            &dataset,
            Split::Test,
            Routing::PerInputArgmax,
            pipeline.eval_batch,
        )?,
        utility_deviation: utility_deviation(&model, &dataset)?,
    };
    write_json(&out.join(METRICS_FILE), &metrics)?;

    #[derive(Serialize)]
    struct Record<'a> {
        method: Method,
        b: &'a BiasVector,
        w_bias: f64,
        gate_hidden: &'a [usize],
        gate_train: &'a TrainConfig,
        eval_batch: usize,
        seed: u64,
        experts_sha256: Vec<String>,
    }
    let record = Record {
        method: a.method,
        b: &b,
        w_bias,
        gate_hidden: &pipeline.gate_hidden,
        gate_train: &pipeline.gate_train,
        eval_batch: pipeline.eval_batch,
        seed,
        experts_sha256: entries
            .iter()
            .map(|e| Ok(sha256_hex(&std::fs::read(a.experts_dir.join(&e.file))?)))
            .collect::<Result<_, CliError>>()?,
    };
    Manifest::new("train-mixture", &record, vec![seed])?.write(
        &out,
        &[CHECKPOINT_FILE.into(), LOG_FILE.into(), METRICS_FILE.into()],
    )?;
    println!(
        "test accuracy {:.4} at {:.2} B/input",
        metrics.test.accuracy, metrics.test.realized_cost
    );
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(list) = &a.experts {
        // generated images are grayscale
        let c = 1;
        cfg.experts = Some(
            list.iter()
                .map(|s| parse_expert(s, c))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let pipeline = cfg.pipeline()?;
    pipeline.validate()?;
    let methods = a
        .method
        .clone()
        .or_else(|| cfg.methods.clone())
        .unwrap_or_else(|| Method::ALL.to_vec());
    if methods.is_empty() {
        return Err(CliError::usage("methods must not be empty"));
    }
    let targets = match (&a.targets, &cfg.targets) {
        (Some(t), _) => parse_targets(t)?,
        (None, Some(t)) => t.resolve()?,
        (None, None) => Targets::Auto,
    };
    let seeds = a
        .seed
        .clone()
        .or_else(|| cfg.seeds.clone())
        .unwrap_or_else(|| DEFAULT_SWEEP_SEEDS.to_vec());
    if seeds.is_empty() {
        return Err(CliError::usage("seeds must not be empty"));
    }
    let out = output_dir(&cfg)?;
    let report = run_sweep(&pipeline, &targets, &methods, &seeds)?;

    for s in &report.per_seed {
        for k in &s.skipped {
            eprintln!(
                "seed {}: skipping infeasible d_t = {} B (feasible interval [{}, {}])",
                s.seed, k.d_t, k.feasible_interval[0], k.feasible_interval[1]
            );
        }
    }
    let mut csv = BufWriter::new(File::create(out.join(RESULTS_FILE))?);
    write_results_csv(&report, &mut csv)?;
    drop(csv);
    write_json(&out.join(SWEEP_REPORT_FILE), &report)?;

    #[derive(Serialize)]
    struct Record<'a> {
        pipeline: &'a bmoe::eval::Pipeline,
        methods: &'a [Method],
        targets: &'a Targets,
        seeds: &'a [u64],
    }
    let record = Record {
        pipeline: &pipeline,
        methods: &report.methods,
        targets: &targets,
        seeds: &seeds,
    };
    Manifest::new("sweep", &record, seeds.clone())?
        .write(&out, &[RESULTS_FILE.into(), SWEEP_REPORT_FILE.into()])?;
    for s in &report.summary {
        match (s.rho_mean, s.rho_sd) {
            (Some(m), Some(sd)) => println!("rho {:<20} {m:.4} +- {sd:.4}", s.method.name()),
            _ => println!(
                "rho {:<20} n/a (targets do not span [d_min, d_max])",
                s.method.name()
            ),
        }
    }
    Ok(())
}
