use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stratified_split, Dataset, Example, InputShape, TaskConfig};
use crate::error::{Error, Result};

/// Class signal planted in a synthetic image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImagePattern {
    /// One bright quadrant. Survives pooling down to 2x2.
    Quadrant(usize),
    /// Sign-alternating checkerboard with the given period in pixels.
    Checker(usize),
    /// Rows alternate sign.
    HStripes(usize),
    /// Columns alternate sign.
    VStripes(usize),
    /// Product of row and column alternations with different periods.
    Plaid { row: usize, col: usize },
}

const PATTERNS: [ImagePattern; 12] = [
    ImagePattern::Quadrant(0),
    ImagePattern::Quadrant(3),
    ImagePattern::Checker(2),
    ImagePattern::HStripes(2),
    ImagePattern::VStripes(2),
    ImagePattern::Checker(4),
    ImagePattern::HStripes(4),
    ImagePattern::VStripes(4),
    ImagePattern::Plaid { row: 2, col: 4 },
    ImagePattern::Plaid { row: 4, col: 2 },
    ImagePattern::Quadrant(1),
    ImagePattern::Quadrant(2),
];

impl ImagePattern {
    pub fn is_low_frequency(self) -> bool {
        matches!(self, ImagePattern::Quadrant(_))
    }

    /// Noise-free value at `(row, col)` with the texture sign applied.
    fn value(self, row: usize, col: usize, resolution: usize, sign: f64) -> f64 {
        let alt = |k: usize, period: usize| {
            if (k / (period / 2)).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        };
        match self {
            ImagePattern::Quadrant(q) => {
                let half = resolution / 2;
                let (qr, qc) = (q / 2, q % 2);
                if row / half == qr && col / half == qc {
                    1.0
                } else {
                    0.0
                }
            }
            ImagePattern::Checker(p) => sign * alt(row, p) * alt(col, p),
            ImagePattern::HStripes(p) => sign * alt(row, p),
            ImagePattern::VStripes(p) => sign * alt(col, p),
            ImagePattern::Plaid { row: pr, col: pc } => sign * alt(row, pr) * alt(col, pc),
        }
    }
}

/// Single-channel `resolution x resolution` images. Classes take patterns
/// from a fixed table: two bright-quadrant classes, eight textures with
/// periods 2 and 4 (random sign per image), then two more quadrants. Average
/// pooling to 4x4 (from 16x16) erases every texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTaskConfig {
    pub resolution: usize,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub amplitude: f64,
    pub noise: f64,
}

impl Default for ImageTaskConfig {
    fn default() -> Self {
        Self {
            resolution: 16,
            n_classes: 10,
            n_per_class: 400,
            amplitude: 1.0,
            noise: 0.5,
        }
    }
}

impl ImageTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 4 {
            return Err(Error::config(format!(
                "resolution must be a power of two >= 4, got {}",
                self.resolution
            )));
        }
        if !(2..=PATTERNS.len()).contains(&self.n_classes) {
            return Err(Error::config(format!(
                "n_classes must lie in 2..={}, got {}",
                PATTERNS.len(),
                self.n_classes
            )));
        }
        if self.n_per_class < 10 {
            return Err(Error::config(format!(
                "n_per_class must be at least 10, got {}",
                self.n_per_class
            )));
        }
        if !(self.noise >= 0.0 && self.amplitude > 0.0) {
            return Err(Error::config("noise must be >= 0 and amplitude > 0"));
        }
        Ok(())
    }

    pub fn pattern(&self, class: usize) -> ImagePattern {
        PATTERNS[class]
    }

    pub fn low_frequency_classes(&self) -> Vec<usize> {
        (0..self.n_classes)
            .filter(|&c| PATTERNS[c].is_low_frequency())
            .collect()
    }

    pub fn high_frequency_classes(&self) -> Vec<usize> {
        (0..self.n_classes)
            .filter(|&c| !PATTERNS[c].is_low_frequency())
            .collect()
    }
}

pub fn gen_image_task(config: &ImageTaskConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let r = config.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::config(e.to_string()))?;
    let mut examples = Vec::with_capacity(config.n_classes * config.n_per_class);
    for c in 0..config.n_classes {
        let pattern = config.pattern(c);
        for _ in 0..config.n_per_class {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut x = Vec::with_capacity(r * r);
            for row in 0..r {
                for col in 0..r {
                    let v = config.amplitude * pattern.value(row, col, r, sign);
                    x.push(v + noise.sample(&mut rng));
                }
            }
            examples.push(Example { x, y: c });
        }
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.y).collect();
    Ok(Dataset {
        splits: stratified_split(&labels, config.n_classes, seed),
        examples,
        shape: InputShape::Image {
            channels: 1,
            resolution: r,
        },
        classes: config.n_classes,
        config: TaskConfig::Image(config.clone()),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{preprocess, PreprocessSpec};

    #[test]
    fn generation_is_deterministic() {
        let cfg = ImageTaskConfig {
            n_per_class: 12,
            ..Default::default()
        };
        assert_eq!(
            gen_image_task(&cfg, 1).unwrap(),
            gen_image_task(&cfg, 1).unwrap()
        );
    }

    #[test]
    fn rejects_non_power_of_two() {
        let cfg = ImageTaskConfig {
            resolution: 12,
            ..Default::default()
        };
        assert!(gen_image_task(&cfg, 0).is_err());
    }

    #[test]
    fn pooling_erases_textures_but_not_quadrants() {
        let cfg = ImageTaskConfig {
            noise: 0.0,
            n_per_class: 10,
            ..Default::default()
        };
        let d = gen_image_task(&cfg, 2).unwrap();
        let pool4 = PreprocessSpec::avg_pool(1, 4);
        for ex in &d.examples {
            let small = preprocess(&pool4, &ex.x, &d.shape).unwrap();
            let energy: f64 = small.iter().map(|v| v.abs()).sum();
            if cfg.pattern(ex.y).is_low_frequency() {
                assert!((energy - 4.0).abs() < 1e-12, "class {}", ex.y);
            } else {
                assert!(energy < 1e-12, "class {}", ex.y);
            }
        }
    }

    #[test]
    fn class_partition() {
        let cfg = ImageTaskConfig::default();
        assert_eq!(cfg.low_frequency_classes(), vec![0, 1]);
        assert_eq!(cfg.high_frequency_classes(), (2..10).collect::<Vec<_>>());
        let all = ImageTaskConfig {
            n_classes: 12,
            ..cfg
        };
        assert_eq!(all.low_frequency_classes(), vec![0, 1, 10, 11]);
    }
}
