use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{preprocess, Dataset, InputShape, PreprocessSpec, Split};
use crate::error::{Error, Result};
use crate::nn::{argmax, train_classifier, Activation, DenseNet, TrainConfig};

/// Hidden widths of an expert's dense stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertArch {
    pub hidden: Vec<usize>,
}

impl Default for ExpertArch {
    fn default() -> Self {
        Self { hidden: vec![32] }
    }
}

/// A frozen predictor together with the preprocessing it consumes and the
/// resulting per-input data cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub id: usize,
    pub preprocess: PreprocessSpec,
    pub source_shape: InputShape,
    #[serde(flatten)]
    pub net: DenseNet,
    pub cost_bytes: u64,
    /// Accuracy on the validation split (`p_n`).
    #[serde(rename = "val_perf")]
    pub val_performance: f64,
}

/// On-disk form of an expert: the network checkpoint plus preprocessing,
/// cost and validation performance.
pub type ExpertFile = Expert;

impl Expert {
    /// Class logits for a raw (unpreprocessed) input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let reduced = preprocess(&self.preprocess, x, &self.source_shape)?;
        self.net.forward(&reduced)
    }

    pub fn accuracy(&self, dataset: &Dataset, split: Split) -> Result<f64> {
        let idx = dataset.indices(split);
        if idx.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut correct = 0usize;
        for &i in idx {
            let ex = &dataset.examples[i];
            if argmax(&self.predict(&ex.x)?) == ex.y {
                correct += 1;
            }
        }
        Ok(correct as f64 / idx.len() as f64)
    }

    /// Accuracy restricted to examples of the given classes.
    pub fn accuracy_on_classes(
        &self,
        dataset: &Dataset,
        split: Split,
        classes: &[usize],
    ) -> Result<f64> {
        let idx: Vec<usize> = dataset
            .indices(split)
            .iter()
            .copied()
            .filter(|&i| classes.contains(&dataset.examples[i].y))
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut correct = 0usize;
        for &i in &idx {
            let ex = &dataset.examples[i];
            if argmax(&self.predict(&ex.x)?) == ex.y {
                correct += 1;
            }
        }
        Ok(correct as f64 / idx.len() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.check_shape(&self.source_shape)?;
        if self.cost_bytes != self.preprocess.cost_bytes() {
            return Err(Error::config(format!(
                "expert {} declares {} bytes but its preprocessing costs {}",
                self.id,
                self.cost_bytes,
                self.preprocess.cost_bytes()
            )));
        }
        let retained = self.preprocess.retained_values() as usize;
        if self.net.input_dim() != retained {
            return Err(Error::dim("expert input", retained, self.net.input_dim()));
        }
        if !(0.0..=1.0).contains(&self.val_performance) {
            return Err(Error::config("val_perf must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let e: Expert = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        e.validate()?;
        Ok(e)
    }
}

/// Trains an expert on the preprocessed train split and records its
/// validation accuracy.
pub fn train_expert(
    dataset: &Dataset,
    id: usize,
    spec: &PreprocessSpec,
    arch: &ExpertArch,
    cfg: &TrainConfig,
) -> Result<Expert> {
    spec.check_shape(&dataset.shape)?;
    if dataset.splits.train.is_empty() || dataset.splits.val.is_empty() {
        return Err(Error::config("dataset needs train and val splits"));
    }
    let inputs = dataset
        .indices(Split::Train)
        .iter()
        .map(|&i| preprocess(spec, &dataset.examples[i].x, &dataset.shape))
        .collect::<Result<Vec<_>>>()?;
    let labels = dataset.labels(Split::Train);

    let mut dims = vec![spec.retained_values() as usize];
    dims.extend(&arch.hidden);
    dims.push(dataset.classes);
    let net = DenseNet::seeded(&dims, Activation::Relu, cfg.seed)?;
    let (net, _) = train_classifier(net, &inputs, &labels, cfg)?;

    let mut expert = Expert {
        id,
        preprocess: spec.clone(),
        source_shape: dataset.shape,
        net,
        cost_bytes: spec.cost_bytes(),
        val_performance: 0.0,
    };
    expert.val_performance = expert.accuracy(dataset, Split::Val)?;
    Ok(expert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_feature_task, FeatureTaskConfig};

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.05,
            steps: 300,
            seed,
        }
    }

    #[test]
    fn training_is_deterministic_and_in_range() {
        let d = gen_feature_task(&FeatureTaskConfig::default(), 1).unwrap();
        let spec = PreprocessSpec::feature_mask(vec![0, 1]);
        let a = train_expert(&d, 0, &spec, &ExpertArch::default(), &quick_cfg(5)).unwrap();
        let b = train_expert(&d, 0, &spec, &ExpertArch::default(), &quick_cfg(5)).unwrap();
        assert_eq!(a.val_performance, b.val_performance);
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.val_performance));
        assert_eq!(a.cost_bytes, 8);
    }

    #[test]
    fn expert_file_round_trip_and_validation() {
        let d = gen_feature_task(&FeatureTaskConfig::default(), 2).unwrap();
        let spec = PreprocessSpec::feature_mask(vec![0]);
        let e = train_expert(&d, 3, &spec, &ExpertArch::default(), &quick_cfg(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.json");
        e.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in [
            "\"layers\"",
            "\"input_dim\"",
            "\"preprocess\"",
            "\"cost_bytes\"",
            "\"val_perf\"",
        ] {
            assert!(text.contains(key), "{key}");
        }
        assert_eq!(Expert::load(&path).unwrap(), e);

        let tampered = text.replace("\"cost_bytes\":4", "\"cost_bytes\":5");
        std::fs::write(&path, tampered).unwrap();
        assert!(Expert::load(&path).is_err());
    }

    #[test]
    fn rejects_incompatible_spec() {
        let d = gen_feature_task(&FeatureTaskConfig::default(), 2).unwrap();
        let spec = PreprocessSpec::avg_pool(1, 4);
        assert!(train_expert(&d, 0, &spec, &ExpertArch::default(), &quick_cfg(1)).is_err());
    }
}
