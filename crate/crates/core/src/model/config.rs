use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters. Defaults reproduce the reference network:
/// 3 pre-norm encoder blocks of width 128 with 8 heads over 800-sample
/// windows of 6 channels, and a 7-layer dilated TCN head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub window_len: usize,
    pub n_channels: usize,
    /// Includes the background class 0.
    pub n_classes: usize,
    pub ffn_dim: usize,
    pub tcn_layers: usize,
    pub tcn_channels: usize,
    pub kernel_size: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 8,
            n_layers: 3,
            dropout: 0.1,
            window_len: 800,
            n_channels: 6,
            n_classes: 6,
            ffn_dim: 512,
            tcn_layers: 7,
            tcn_channels: 64,
            kernel_size: 3,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every block; used for
    /// whole-model gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            dropout: 0.0,
            window_len: 80,
            ffn_dim: 64,
            tcn_layers: 3,
            tcn_channels: 8,
            ..Self::default()
        }
    }

    /// Desk-scale configuration for synthetic experiments.
    pub fn small() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            dropout: 0.1,
            window_len: 200,
            ffn_dim: 32,
            tcn_layers: 5,
            tcn_channels: 16,
            ..Self::default()
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn dilations(&self) -> impl Iterator<Item = usize> {
        (0..self.tcn_layers).map(|l| 1usize << l)
    }

    /// Number of input samples that can influence one TCN output sample.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations().sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 {
            return fail("d_model and n_heads must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.window_len == 0 || self.n_channels == 0 || self.n_classes < 2 {
            return fail("window_len, n_channels must be positive and n_classes >= 2".into());
        }
        if self.ffn_dim == 0 || self.tcn_channels == 0 || self.tcn_layers == 0 {
            return fail("ffn_dim, tcn_channels and tcn_layers must be positive".into());
        }
        if self.tcn_layers > 16 {
            return fail(format!("tcn_layers {} is too deep", self.tcn_layers));
        }
        if !(self.ln_eps > 0.0) {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_hyperparameters() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.d_model, 128);
        assert_eq!(cfg.n_heads, 8);
        assert_eq!(cfg.n_layers, 3);
        assert_eq!(cfg.dropout, 0.1);
        assert_eq!(cfg.d_k(), 16);
        assert_eq!(cfg.d_k() * cfg.n_heads, cfg.d_model);
        assert_eq!(
            cfg.dilations().collect::<Vec<_>>(),
            [1, 2, 4, 8, 16, 32, 64]
        );
        assert_eq!(cfg.receptive_field(), 255);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn rejects_even_kernel() {
        let cfg = ModelConfig {
            kernel_size: 4,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
