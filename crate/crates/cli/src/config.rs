use std::path::{Path, PathBuf};

use bmoe::eval::{Method, Pipeline, Targets};
use bmoe::nn::TrainConfig;
use bmoe::synth::{ExpertArch, PreprocessKind, PreprocessSpec, TaskConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Feature,
    Image,
}

/// `"auto"` or an explicit list of byte targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Keyword(String),
    List(Vec<f64>),
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<Targets, CliError> {
        match self {
            TargetSpec::Keyword(k) if k == "auto" => Ok(Targets::Auto),
            TargetSpec::Keyword(k) => parse_targets(k),
            TargetSpec::List(v) => Ok(Targets::List(v.clone())),
        }
    }
}

pub fn parse_targets(s: &str) -> Result<Targets, CliError> {
    if s.trim() == "auto" {
        return Ok(Targets::Auto);
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("targets: cannot parse '{t}'")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Targets::List)
}

/// Run configuration of record. Every field is optional; unset fields fall
/// back to the task preset, and command-line flags override the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    /// Full generator configuration, tagged with `"task"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_config: Option<TaskConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experts: Option<Vec<PreprocessSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expert_arch: Option<ExpertArch>,
    /// Expert training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate_train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_bias_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    fn task_kind(&self) -> Result<TaskKind, CliError> {
        let from_config = self.task_config.as_ref().map(|c| match c {
            TaskConfig::Feature(_) => TaskKind::Feature,
            TaskConfig::Image(_) => TaskKind::Image,
        });
        match (self.task, from_config) {
            (Some(a), Some(b)) if a != b => Err(CliError::usage(
                "task: --task disagrees with task_config in the config file",
            )),
            (Some(a), _) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => Ok(TaskKind::Feature),
        }
    }

    /// Preset for the task with every set field applied.
    pub fn pipeline(&self) -> Result<Pipeline, CliError> {
        let kind = self.task_kind()?;
        let mut p = match kind {
            TaskKind::Feature => Pipeline::feature_default(),
            TaskKind::Image => Pipeline::image_default(),
        };
        if let Some(t) = &self.task_config {
            p.task = t.clone();
        }
        if let Some(e) = &self.experts {
            p.experts = e.clone();
        }
        if let Some(a) = &self.expert_arch {
            p.expert_arch = a.clone();
        }
        if let Some(t) = self.train {
            p.expert_train = t;
        }
        if let Some(t) = self.gate_train {
            p.gate_train = t;
        }
        if let Some(h) = &self.gate_hidden {
            p.gate_hidden = h.clone();
        }
        if let Some(w) = &self.w_bias_grid {
            p.w_bias_grid = w.clone();
        }
        if let Some(b) = self.eval_batch {
            p.eval_batch = b;
        }
        if let Some(r) = self.random_trials {
            p.random_trials = r;
        }
        Ok(p)
    }

    pub fn set_n_per_class(&mut self, n: usize) -> Result<(), CliError> {
        let mut task = self.pipeline()?.task;
        match &mut task {
            TaskConfig::Feature(c) => c.n_per_class = n,
            TaskConfig::Image(c) => c.n_per_class = n,
        }
        self.task_config = Some(task);
        Ok(())
    }
}

/// Parses `mask:0+1` and `pool:8` (channels taken from `channels`).
pub fn parse_expert(s: &str, channels: usize) -> Result<PreprocessSpec, CliError> {
    let bad = || {
        CliError::usage(format!(
            "experts: cannot parse '{s}' (expected mask:I+J.. or pool:R)"
        ))
    };
    let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
    match kind {
        "mask" => {
            let indices = arg
                .split('+')
                .map(|i| i.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(PreprocessSpec::feature_mask(indices))
        }
        "pool" => {
            let r = arg.trim().parse::<usize>().map_err(|_| bad())?;
            Ok(PreprocessSpec::avg_pool(channels, r))
        }
        _ => Err(bad()),
    }
}

pub fn describe(spec: &PreprocessSpec) -> String {
    match &spec.kind {
        PreprocessKind::FeatureMask { indices } => format!(
            "mask:{}",
            indices
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join("+")
        ),
        PreprocessKind::AvgPoolSubsample { resolution, .. } => format!("pool:{resolution}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_syntax() {
        assert_eq!(
            parse_expert("mask:0+1", 1).unwrap(),
            PreprocessSpec::feature_mask(vec![0, 1])
        );
        assert_eq!(
            parse_expert("pool:4", 3).unwrap(),
            PreprocessSpec::avg_pool(3, 4)
        );
        assert!(parse_expert("crop:4", 1).is_err());
        assert!(parse_expert("mask:a", 1).is_err());
        assert_eq!(
            describe(&PreprocessSpec::feature_mask(vec![0, 1])),
            "mask:0+1"
        );
    }

    #[test]
    fn targets_syntax() {
        assert_eq!(parse_targets("auto").unwrap(), Targets::Auto);
        assert_eq!(
            parse_targets("4, 6").unwrap(),
            Targets::List(vec![4.0, 6.0])
        );
        let t: TargetSpec = serde_json::from_str("[4, 8]").unwrap();
        assert_eq!(t.resolve().unwrap(), Targets::List(vec![4.0, 8.0]));
        let t: TargetSpec = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(t.resolve().unwrap(), Targets::Auto);
    }

    #[test]
    fn config_overrides_preset() {
        let c: RunConfig = serde_json::from_str(
            r#"{"task": "image", "gate_hidden": [4], "methods": ["bias_enforcement"]}"#,
        )
        .unwrap();
        let p = c.pipeline().unwrap();
        assert_eq!(p.gate_hidden, vec![4]);
        assert_eq!(p.experts.len(), 3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"tsak": "image"}"#).is_err());
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let mut c = RunConfig {
            task: Some(TaskKind::Feature),
            ..Default::default()
        };
        c.task_config = Some(Pipeline::image_default().task);
        assert!(c.pipeline().is_err());
    }
}
