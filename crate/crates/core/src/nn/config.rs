use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the two modality streams are combined inside each fusion stage.
/// `Add` and `Concat` are the naive baselines the attention fusion is
/// ablated against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Igaf,
    Add,
    Concat,
}

/// Which feature the RGB stream forwards to the next stage: the shallow
/// (post-feature-extractor) tensor or the deep (post-wide-focus) one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipLocation {
    AfterFe,
    AfterWf,
}

/// Every architectural hyperparameter, including the ablation toggles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature width of every internal tensor.
    pub channels: usize,
    /// Number of stacked feature-extractor modules before each wide-focus block.
    pub n_fe: usize,
    /// Number of fusion stages.
    pub num_igaf: usize,
    /// Super-resolution factor between LR and HR depth.
    pub scale: usize,
    /// Dilation rate per wide-focus branch.
    pub wf_dilations: Vec<usize>,
    /// Channel-attention squeeze ratio.
    pub ca_reduction: usize,
    /// Dense layers per attention-weight MLP (1 or 2).
    pub saf_mlp_layers: usize,
    /// When false, attention fusion degrades to a plain sum of its inputs.
    pub saf_weighted: bool,
    /// When false, the wide-focus block is removed entirely.
    pub use_wf: bool,
    pub skip_location: SkipLocation,
    pub fusion_kind: FusionKind,
    pub leaky_slope: f32,
    pub dropout_p: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            n_fe: 2,
            num_igaf: 3,
            scale: 4,
            wf_dilations: vec![1, 2, 3],
            ca_reduction: 4,
            saf_mlp_layers: 2,
            saf_weighted: true,
            use_wf: true,
            skip_location: SkipLocation::AfterFe,
            fusion_kind: FusionKind::Igaf,
            leaky_slope: 0.1,
            dropout_p: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % self.ca_reduction != 0 {
            return Err(Error::config(format!(
                "channels ({}) must be positive and divisible by ca_reduction ({})",
                self.channels, self.ca_reduction
            )));
        }
        if self.num_igaf == 0 {
            return Err(Error::config("num_igaf must be >= 1"));
        }
        if self.n_fe == 0 {
            return Err(Error::config("n_fe must be >= 1"));
        }
        if self.wf_dilations.is_empty() || self.wf_dilations.iter().any(|&d| d == 0) {
            return Err(Error::config("wf_dilations must be non-empty and strictly positive"));
        }
        if !matches!(self.saf_mlp_layers, 1 | 2) {
            return Err(Error::config(format!(
                "saf_mlp_layers must be 1 or 2, got {}",
                self.saf_mlp_layers
            )));
        }
        if !matches!(self.scale, 4 | 8 | 16) {
            return Err(Error::config(format!("scale must be one of 4, 8, 16, got {}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::config(format!(
                "leaky_slope must be finite and non-negative, got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_reduction() {
        let cfg = ModelConfig { channels: 30, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_zero_dilation_and_bad_scale() {
        let cfg = ModelConfig { wf_dilations: vec![1, 0], ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { scale: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn serde_roundtrip_with_snake_case_enums() {
        let cfg = ModelConfig {
            fusion_kind: FusionKind::Concat,
            skip_location: SkipLocation::AfterWf,
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"concat\"") && json.contains("\"after_wf\""));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<ModelConfig>("{\"channles\": 8}");
        assert!(err.is_err());
    }
}
