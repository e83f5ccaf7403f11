use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    /// Encoder/decoder with a skip from encoder level `i` to decoder level `n - i`.
    UnetSkip,
    /// Global generator at half resolution, optionally refined by a local enhancer.
    CoarseToFine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: GeneratorFamily,
    pub base_channels: usize,
    /// Downsampling steps: encoder levels for `unet_skip`, global-network
    /// downsamplings for `coarse_to_fine`.
    pub depth: usize,
    /// Local enhancer present (`coarse_to_fine` only).
    #[serde(default)]
    pub has_local_enhancer: bool,
    /// Residual blocks per `coarse_to_fine` sub-network.
    #[serde(default = "default_residual_blocks")]
    pub residual_blocks: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
}

fn default_residual_blocks() -> usize {
    3
}

fn default_input_channels() -> usize {
    1
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::coarse_to_fine(32, 3, true)
    }
}

impl GeneratorSpec {
    pub fn unet(base_channels: usize, depth: usize) -> Self {
        GeneratorSpec {
            family: GeneratorFamily::UnetSkip,
            base_channels,
            depth,
            has_local_enhancer: false,
            residual_blocks: default_residual_blocks(),
            input_channels: 1,
        }
    }

    pub fn coarse_to_fine(base_channels: usize, depth: usize, has_local_enhancer: bool) -> Self {
        GeneratorSpec {
            family: GeneratorFamily::CoarseToFine,
            base_channels,
            depth,
            has_local_enhancer,
            residual_blocks: default_residual_blocks(),
            input_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be positive".into()));
        }
        match self.family {
            GeneratorFamily::UnetSkip => {
                if !(1..=10).contains(&self.depth) {
                    return Err(Error::InvalidSpec(format!("unet depth {} outside 1..=10", self.depth)));
                }
                if self.has_local_enhancer {
                    return Err(Error::InvalidSpec("local enhancer only exists for coarse_to_fine".into()));
                }
            }
            GeneratorFamily::CoarseToFine => {
                if !(1..=6).contains(&self.depth) {
                    return Err(Error::InvalidSpec(format!("global network depth {} outside 1..=6", self.depth)));
                }
            }
        }
        Ok(())
    }

    /// Input side lengths must be a multiple of this.
    pub fn size_multiple(&self) -> u32 {
        let levels = match self.family {
            GeneratorFamily::UnetSkip => self.depth,
            GeneratorFamily::CoarseToFine => self.depth + usize::from(self.has_local_enhancer),
        };
        1 << levels
    }

    pub fn check_input(&self, height: u32, width: u32) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::InvalidSpec(format!("input {height}x{width} is not a multiple of {m}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    /// Pyramid levels; level `k` sees the input downsampled by `2^k`.
    pub num_scales: usize,
    /// Requested patch receptive field in pixels. Rounded up to the next
    /// achievable value, see [`DiscriminatorSpec::strided_layers`].
    pub patch_receptive_field: usize,
    pub base_channels: usize,
    /// Feature channels plus image channels.
    #[serde(default = "default_pair_channels")]
    pub input_channels: usize,
}

fn default_pair_channels() -> usize {
    4
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec { num_scales: 3, patch_receptive_field: 70, base_channels: 32, input_channels: 4 }
    }
}

/// Receptive field of `n` stride-2 4x4 convs followed by two stride-1 4x4 convs.
pub fn receptive_field(strided: usize) -> usize {
    (0..strided).fold(7, |r, _| 2 * r + 2)
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales == 0 {
            return Err(Error::InvalidSpec("num_scales must be at least 1".into()));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be positive".into()));
        }
        if !(16..=receptive_field(6)).contains(&self.patch_receptive_field) {
            return Err(Error::InvalidSpec(format!(
                "patch receptive field {} outside 16..={}",
                self.patch_receptive_field,
                receptive_field(6)
            )));
        }
        Ok(())
    }

    /// Fewest strided layers whose receptive field covers the request.
    pub fn strided_layers(&self) -> usize {
        (1..=6).find(|&n| receptive_field(n) >= self.patch_receptive_field).unwrap_or(6)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLoss {
    CrossEntropy,
    LeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub adversarial_loss: AdversarialLoss,
    pub feature_matching_weight: f64,
    pub l1_weight: f64,
    pub seed: u64,
    /// Write (feature, output, target) PNG triplets every N steps.
    #[serde(default)]
    pub dump_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            adversarial_loss: AdversarialLoss::LeastSquares,
            feature_matching_weight: 10.0,
            l1_weight: 10.0,
            seed: 0,
            dump_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = self.learning_rate > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        let weights_ok = self.feature_matching_weight >= 0.0 && self.l1_weight >= 0.0;
        if self.steps == 0 || self.batch_size == 0 || !rates_ok || !weights_ok || self.dump_every == Some(0) {
            return Err(Error::InvalidSpec(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}
