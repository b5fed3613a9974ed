//! Synthetic tasks, preprocessing with byte-accurate costs, and expert
//! training.
//!
//! Two generators are provided. The feature task places Gaussian clusters in
//! the plane so that a planted pair of classes is separable by the first
//! feature alone while the rest need both. The image task plants coarse
//! (quadrant) classes that survive average pooling next to fine texture
//! classes that pooling erases.

mod expert;
mod feature;
mod image;
mod preprocess;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub use expert::{train_expert, Expert, ExpertArch, ExpertFile};
pub use feature::{gen_feature_task, FeatureTaskConfig};
pub use image::{gen_image_task, ImagePattern, ImageTaskConfig};
pub use preprocess::{preprocess, PreprocessKind, PreprocessSpec, DEFAULT_BYTES_PER_VALUE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Features {
        dim: usize,
    },
    /// Channel-major `channels x resolution x resolution`.
    Image {
        channels: usize,
        resolution: usize,
    },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Features { dim } => dim,
            InputShape::Image {
                channels,
                resolution,
            } => channels * resolution * resolution,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskConfig {
    Feature(FeatureTaskConfig),
    Image(ImageTaskConfig),
}

impl TaskConfig {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match self {
            TaskConfig::Feature(c) => gen_feature_task(c, seed),
            TaskConfig::Image(c) => gen_image_task(c, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub shape: InputShape,
    pub classes: usize,
    pub splits: Splits,
    pub config: TaskConfig,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: TaskConfig,
    seed: u64,
    shape: InputShape,
    classes: usize,
    splits: Splits,
}

pub const DATA_FILE: &str = "data.jsonl";
pub const META_FILE: &str = "data.meta.json";

impl Dataset {
    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn inputs(&self, split: Split) -> Vec<Vec<f64>> {
        self.indices(split)
            .iter()
            .map(|&i| self.examples[i].x.clone())
            .collect()
    }

    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.indices(split)
            .iter()
            .map(|&i| self.examples[i].y)
            .collect()
    }

    /// Writes `data.jsonl` (one example per line) and the `data.meta.json`
    /// sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(DATA_FILE))?);
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let meta = Sidecar {
            config: self.config.clone(),
            seed: self.seed,
            shape: self.shape,
            classes: self.classes,
            splits: self.splits.clone(),
        };
        let mut m = BufWriter::new(File::create(dir.join(META_FILE))?);
        serde_json::to_writer_pretty(&mut m, &meta)?;
        m.write_all(b"\n")?;
        m.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Sidecar =
            serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
        let mut examples = Vec::new();
        for line in BufReader::new(File::open(dir.join(DATA_FILE))?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example = serde_json::from_str(&line)?;
            if ex.x.len() != meta.shape.len() {
                return Err(Error::dim("dataset example", meta.shape.len(), ex.x.len()));
            }
            if ex.y >= meta.classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.y,
                    classes: meta.classes,
                });
            }
            examples.push(ex);
        }
        let n = examples.len();
        let all = meta
            .splits
            .train
            .iter()
            .chain(&meta.splits.val)
            .chain(&meta.splits.test);
        if let Some(&bad) = all.clone().find(|&&i| i >= n) {
            return Err(Error::config(format!("split index {bad} out of range")));
        }
        Ok(Self {
            examples,
            shape: meta.shape,
            classes: meta.classes,
            splits: meta.splits,
            config: meta.config,
            seed: meta.seed,
        })
    }
}

/// Stratified 80/10/10 split, shuffled per class.
pub(crate) fn stratified_split(labels: &[usize], classes: usize, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0005_9117));
    let mut splits = Splits::default();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (0.8 * n as f64).round() as usize;
        let n_val = (0.1 * n as f64).round() as usize;
        splits.train.extend_from_slice(&idx[..n_train]);
        splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}
