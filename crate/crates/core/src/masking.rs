//! Patch masking of input windows for the reconstruction task.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::model::SignalWindow;
use crate::tensor::Tensor;

/// Default patch length in samples.
pub const PATCH_LEN: usize = 40;
/// Default fraction of masked patches.
pub const MASK_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("window length {len} is not divisible by patch length {patch_len}")]
    Indivisible { len: usize, patch_len: usize },
    #[error("mask ratio must lie in [0, 1], got {0}")]
    Ratio(f64),
    #[error("mask covers {mask} samples but the window has {window}")]
    Length { mask: usize, window: usize },
}

/// Number of masked patches for a ratio: `round(ratio · n_patches)`.
pub fn masked_patch_count(mask_ratio: f64, n_patches: usize) -> usize {
    ((mask_ratio * n_patches as f64).round() as usize).min(n_patches)
}

/// Which patches of a window are hidden from the reconstruction route.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    patch_len: usize,
    mask_ratio: f64,
    patch_mask: Vec<bool>,
}

impl MaskSpec {
    /// Draws exactly `round(mask_ratio · T / patch_len)` distinct patches
    /// uniformly at random.
    pub fn sample(
        len: usize,
        patch_len: usize,
        mask_ratio: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, MaskError> {
        if !(0.0..=1.0).contains(&mask_ratio) {
            return Err(MaskError::Ratio(mask_ratio));
        }
        if patch_len == 0 || len % patch_len != 0 {
            return Err(MaskError::Indivisible { len, patch_len });
        }
        let n_patches = len / patch_len;
        let n_masked = masked_patch_count(mask_ratio, n_patches);
        let mut patch_mask = vec![false; n_patches];
        for i in index::sample(rng, n_patches, n_masked) {
            patch_mask[i] = true;
        }
        Ok(Self {
            patch_len,
            mask_ratio,
            patch_mask,
        })
    }

    /// Mask with an explicit patch pattern.
    pub fn from_patches(patch_len: usize, patch_mask: Vec<bool>) -> Self {
        let ratio = if patch_mask.is_empty() {
            0.0
        } else {
            patch_mask.iter().filter(|m| **m).count() as f64 / patch_mask.len() as f64
        };
        Self {
            patch_len,
            mask_ratio: ratio,
            patch_mask,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn mask_ratio(&self) -> f64 {
        self.mask_ratio
    }

    pub fn patch_mask(&self) -> &[bool] {
        &self.patch_mask
    }

    pub fn n_patches(&self) -> usize {
        self.patch_mask.len()
    }

    pub fn n_masked(&self) -> usize {
        self.patch_mask.iter().filter(|m| **m).count()
    }

    pub fn window_len(&self) -> usize {
        self.patch_len * self.patch_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_masked() == 0
    }

    pub fn is_masked(&self, sample: usize) -> bool {
        self.patch_mask[sample / self.patch_len]
    }

    /// `T×N` indicator (1.0 = masked), identical across channels.
    pub fn sample_mask(&self, n_channels: usize) -> Tensor {
        let t = self.window_len();
        let data = (0..t)
            .flat_map(|s| {
                let v = if self.is_masked(s) { 1.0 } else { 0.0 };
                std::iter::repeat(v).take(n_channels)
            })
            .collect();
        Tensor::new(vec![t, n_channels], data).expect("mask shape")
    }

    /// Zero-fills masked samples of a `T×N` matrix.
    pub fn apply_to(&self, x: &Tensor) -> Result<Tensor, MaskError> {
        let t = x.rows();
        if t != self.window_len() {
            return Err(MaskError::Length {
                mask: self.window_len(),
                window: t,
            });
        }
        let n = x.cols();
        let mut out = x.clone();
        for (s, row) in out.data_mut().chunks_exact_mut(n).enumerate() {
            if self.is_masked(s) {
                row.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Copy of `w` with every masked sample replaced by 0.0.
pub fn apply_mask(w: &SignalWindow, spec: &MaskSpec) -> Result<SignalWindow, MaskError> {
    Ok(SignalWindow {
        samples: spec.apply_to(&w.samples)?,
        sample_rate: w.sample_rate,
    })
}
