use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stratified_split, Dataset, Example, InputShape, TaskConfig};
use crate::error::{Error, Result};

/// Two-feature Gaussian cluster task.
///
/// The first `n_classes - 2` classes sit on a grid whose columns share a
/// value of `f1`, so telling classes within a column apart needs `f2`. The
/// last two classes are planted to the right: their means differ along `f1`
/// only and their `f2` spread is wide and identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTaskConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    /// Standard deviation of every cluster along `f1` (and along `f2` for
    /// grid classes).
    pub spread: f64,
    /// Distance between neighbouring cluster means.
    pub spacing: f64,
}

impl Default for FeatureTaskConfig {
    fn default() -> Self {
        Self {
            n_classes: 6,
            n_per_class: 300,
            spread: 0.5,
            spacing: 3.0,
        }
    }
}

pub const MIN_PER_CLASS: usize = 50;

impl FeatureTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < MIN_PER_CLASS {
            return Err(Error::config(format!(
                "n_per_class must be at least {MIN_PER_CLASS}, got {}",
                self.n_per_class
            )));
        }
        if self.n_classes < 4 || !self.n_classes.is_multiple_of(2) {
            return Err(Error::config(format!(
                "n_classes must be even and at least 4, got {}",
                self.n_classes
            )));
        }
        if !(self.spread > 0.0 && self.spacing > 0.0) {
            return Err(Error::config("spread and spacing must be positive"));
        }
        Ok(())
    }

    /// Classes separable by `f1` alone.
    pub fn planted_classes(&self) -> [usize; 2] {
        [self.n_classes - 2, self.n_classes - 1]
    }

    /// `(mean f1, mean f2, sd f2)` for class `c`.
    fn cluster(&self, c: usize) -> (f64, f64, f64) {
        let columns = (self.n_classes - 2) / 2;
        let s = self.spacing;
        let left = -(columns as f64) * s;
        if c < self.n_classes - 2 {
            let col = (c / 2) as f64;
            let row = if c.is_multiple_of(2) { -0.5 } else { 0.5 };
            (left + col * s, row * s, self.spread)
        } else {
            let k = (c - (self.n_classes - 2)) as f64;
            (
                left + (columns as f64 - 0.5) * s + s + k * s,
                0.0,
                3.0 * self.spread,
            )
        }
    }
}

pub fn gen_feature_task(config: &FeatureTaskConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(config.n_classes * config.n_per_class);
    for c in 0..config.n_classes {
        let (m1, m2, sd2) = config.cluster(c);
        let f1 = Normal::new(m1, config.spread).map_err(|e| Error::config(e.to_string()))?;
        let f2 = Normal::new(m2, sd2).map_err(|e| Error::config(e.to_string()))?;
        for _ in 0..config.n_per_class {
            examples.push(Example {
                x: vec![f1.sample(&mut rng), f2.sample(&mut rng)],
                y: c,
            });
        }
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.y).collect();
    Ok(Dataset {
        splits: stratified_split(&labels, config.n_classes, seed),
        examples,
        shape: InputShape::Features { dim: 2 },
        classes: config.n_classes,
        config: TaskConfig::Feature(config.clone()),
        seed,
    })
}
