use serde::{Deserialize, Serialize};

use super::InputShape;
use crate::error::{Error, Result};

/// Bytes used to store one retained value.
pub const DEFAULT_BYTES_PER_VALUE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreprocessKind {
    /// Keep only the listed feature coordinates.
    FeatureMask { indices: Vec<usize> },
    /// Block-average every channel down to `resolution x resolution`.
    AvgPoolSubsample { channels: usize, resolution: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    #[serde(flatten)]
    pub kind: PreprocessKind,
    #[serde(default = "default_k")]
    pub bytes_per_value: u64,
}

fn default_k() -> u64 {
    DEFAULT_BYTES_PER_VALUE
}

impl PreprocessSpec {
    pub fn feature_mask(indices: Vec<usize>) -> Self {
        Self {
            kind: PreprocessKind::FeatureMask { indices },
            bytes_per_value: DEFAULT_BYTES_PER_VALUE,
        }
    }

    pub fn avg_pool(channels: usize, resolution: usize) -> Self {
        Self {
            kind: PreprocessKind::AvgPoolSubsample {
                channels,
                resolution,
            },
            bytes_per_value: DEFAULT_BYTES_PER_VALUE,
        }
    }

    pub fn with_bytes_per_value(mut self, k: u64) -> Self {
        self.bytes_per_value = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bytes_per_value == 0 {
            return Err(Error::config("bytes_per_value must be positive"));
        }
        match &self.kind {
            PreprocessKind::FeatureMask { indices } => {
                if indices.is_empty() {
                    return Err(Error::config("feature mask must keep at least one feature"));
                }
                let mut sorted = indices.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != indices.len() {
                    return Err(Error::config("feature mask has repeated indices"));
                }
            }
            PreprocessKind::AvgPoolSubsample {
                channels,
                resolution,
            } => {
                if *channels == 0 || *resolution == 0 {
                    return Err(Error::config("channels and resolution must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Number of values that survive preprocessing.
    pub fn retained_values(&self) -> u64 {
        match &self.kind {
            PreprocessKind::FeatureMask { indices } => indices.len() as u64,
            PreprocessKind::AvgPoolSubsample {
                channels,
                resolution,
            } => (channels * resolution * resolution) as u64,
        }
    }

    /// Bytes sent per input: retained values times bytes per value.
    pub fn cost_bytes(&self) -> u64 {
        self.retained_values() * self.bytes_per_value
    }

    /// Checks that this spec can be applied to inputs of `shape`.
    pub fn check_shape(&self, shape: &InputShape) -> Result<()> {
        self.validate()?;
        match (&self.kind, shape) {
            (PreprocessKind::FeatureMask { indices }, InputShape::Features { dim }) => {
                if let Some(&bad) = indices.iter().find(|&&i| i >= *dim) {
                    return Err(Error::config(format!(
                        "feature index {bad} out of range for {dim} features"
                    )));
                }
                Ok(())
            }
            (
                PreprocessKind::AvgPoolSubsample {
                    channels,
                    resolution,
                },
                InputShape::Image {
                    channels: src_channels,
                    resolution: src,
                },
            ) => {
                if channels != src_channels {
                    return Err(Error::dim("pooling channels", *src_channels, *channels));
                }
                if *resolution > *src || src % resolution != 0 {
                    return Err(Error::config(format!(
                        "target resolution {resolution} does not divide source resolution {src}"
                    )));
                }
                Ok(())
            }
            _ => Err(Error::config(format!(
                "preprocessing {:?} does not apply to {shape:?}",
                self.kind
            ))),
        }
    }
}

/// Applies `spec` to one input of the given shape.
pub fn preprocess(spec: &PreprocessSpec, x: &[f64], shape: &InputShape) -> Result<Vec<f64>> {
    spec.check_shape(shape)?;
    if x.len() != shape.len() {
        return Err(Error::dim("preprocess input", shape.len(), x.len()));
    }
    match (&spec.kind, *shape) {
        (PreprocessKind::FeatureMask { indices }, _) => Ok(indices.iter().map(|&i| x[i]).collect()),
        (
            PreprocessKind::AvgPoolSubsample { resolution, .. },
            InputShape::Image {
                channels,
                resolution: src,
            },
        ) => {
            let r = *resolution;
            let block = src / r;
            let area = (block * block) as f64;
            let mut out = Vec::with_capacity(channels * r * r);
            for ch in x.chunks_exact(src * src) {
                for br in 0..r {
                    for bc in 0..r {
                        let mut acc = 0.0;
                        for i in br * block..(br + 1) * block {
                            acc += ch[i * src + bc * block..i * src + (bc + 1) * block]
                                .iter()
                                .sum::<f64>();
                        }
                        out.push(acc / area);
                    }
                }
            }
            Ok(out)
        }
        _ => unreachable!("shape compatibility checked above"),
    }
}
