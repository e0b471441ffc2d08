use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::autodiff::conv_output_len;
use crate::NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu6,
    HardSwish,
}

/// One inverted residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub expansion: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub se: bool,
    pub activation: Activation,
}

impl StageSpec {
    pub const fn new(
        expansion: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        se: bool,
        activation: Activation,
    ) -> Self {
        Self {
            expansion,
            out_channels,
            kernel,
            stride,
            se,
            activation,
        }
    }
}

/// Declarative architecture of the Siamese classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub branch_stages: Vec<StageSpec>,
    pub merge_stages: Vec<StageSpec>,
    pub head_hidden: Vec<usize>,
    pub dropout: f64,
    pub num_classes: usize,
    pub se_reduction: usize,
    pub shared_branch: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration for 64 x 64 inputs.
    pub fn desk() -> Self {
        use Activation::*;
        Self {
            input_size: 64,
            stem_channels: 8,
            stem_kernel: 3,
            stem_stride: 2,
            branch_stages: vec![
                StageSpec::new(1, 8, 3, 2, false, Relu6),
                StageSpec::new(4, 16, 3, 2, true, HardSwish),
                StageSpec::new(4, 24, 3, 2, true, HardSwish),
            ],
            merge_stages: vec![StageSpec::new(4, 32, 3, 1, true, HardSwish)],
            head_hidden: vec![64],
            dropout: 0.2,
            num_classes: NUM_CLASSES,
            se_reduction: 4,
            shared_branch: true,
            init_seed: 0,
        }
    }

    /// Reference configuration for 512 x 512 inputs built from the same
    /// block vocabulary (MobileNetV2/V3-style stage table).
    pub fn full_scale() -> Self {
        use Activation::*;
        Self {
            input_size: 512,
            stem_channels: 16,
            stem_kernel: 3,
            stem_stride: 2,
            branch_stages: vec![
                StageSpec::new(1, 16, 3, 2, true, Relu6),
                StageSpec::new(4, 24, 3, 2, false, Relu6),
                StageSpec::new(3, 24, 3, 1, false, Relu6),
                StageSpec::new(3, 40, 5, 2, true, HardSwish),
                StageSpec::new(3, 40, 5, 1, true, HardSwish),
                StageSpec::new(6, 80, 3, 2, false, HardSwish),
                StageSpec::new(3, 80, 3, 1, false, HardSwish),
                StageSpec::new(6, 112, 3, 1, true, HardSwish),
            ],
            merge_stages: vec![
                StageSpec::new(4, 160, 5, 2, true, HardSwish),
                StageSpec::new(6, 160, 5, 1, true, HardSwish),
                StageSpec::new(6, 160, 5, 1, true, HardSwish),
            ],
            head_hidden: vec![1024, 256],
            dropout: 0.2,
            num_classes: NUM_CLASSES,
            se_reduction: 4,
            shared_branch: true,
            init_seed: 0,
        }
    }

    /// Channels after concatenating both branches.
    pub fn merged_channels(&self) -> usize {
        2 * self.branch_stages.last().map_or(self.stem_channels, |s| s.out_channels)
    }

    /// Spatial side length after each branch (before merge stages).
    pub fn branch_output_size(&self) -> Option<usize> {
        let pad = self.stem_kernel / 2;
        let mut s = conv_output_len(self.input_size, self.stem_kernel, self.stem_stride, pad)?;
        for st in &self.branch_stages {
            s = conv_output_len(s, st.kernel, st.stride, st.kernel / 2)?;
        }
        Some(s)
    }

    /// Collects every violation rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut errs = Vec::new();
        if self.num_classes != NUM_CLASSES {
            errs.push(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        if self.input_size == 0 {
            errs.push("input_size must be positive".into());
        }
        if self.stem_channels == 0 || self.stem_kernel == 0 || self.stem_stride == 0 {
            errs.push("stem channels, kernel and stride must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.se_reduction == 0 {
            errs.push("se_reduction must be positive".into());
        }
        if self.head_hidden.contains(&0) {
            errs.push("head hidden sizes must be positive".into());
        }
        let mut in_ch = self.stem_channels;
        let stages = self
            .branch_stages
            .iter()
            .map(|s| ("branch", s))
            .chain(self.merge_stages.iter().map(|s| ("merge", s)));
        for (i, (group, st)) in stages.enumerate() {
            if group == "merge" && i == self.branch_stages.len() {
                in_ch = self.merged_channels();
            }
            let tag = format!("{group} stage {i}");
            if st.expansion == 0 || st.out_channels == 0 || st.stride == 0 {
                errs.push(format!("{tag}: expansion, out_channels and stride must be positive"));
            }
            if st.kernel == 0 || st.kernel % 2 == 0 {
                errs.push(format!("{tag}: kernel size must be odd, got {}", st.kernel));
            }
            let expanded = in_ch * st.expansion;
            if st.se && self.se_reduction > 0 && expanded % self.se_reduction != 0 {
                errs.push(format!(
                    "{tag}: {expanded} expanded channels not divisible by se_reduction {}",
                    self.se_reduction
                ));
            }
            in_ch = st.out_channels;
        }
        if errs.is_empty() {
            let mut size = self.branch_output_size();
            for st in &self.merge_stages {
                size = size.and_then(|s| conv_output_len(s, st.kernel, st.stride, st.kernel / 2));
            }
            if size.is_none() {
                errs.push(format!("input_size {} too small for the stage strides", self.input_size));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(errs))
        }
    }

    /// Stable 64-bit digest of the canonical JSON form.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to toml")
    }
}
