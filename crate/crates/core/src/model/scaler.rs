use crate::tensor::Tensor;

/// Per-channel standardization applied to raw windows before the network.
///
/// Fitted on training data only, stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl InputScaler {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Returns `None` when `mean` and `std` disagree in length or a standard
    /// deviation is not strictly positive.
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Option<Self> {
        (mean.len() == std.len() && std.iter().all(|s| *s > 0.0 && s.is_finite()))
            .then_some(Self { mean, std })
    }

    /// Channel means and standard deviations over every row of `windows`.
    /// Channels with (near) zero spread keep unit scale.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a Tensor>, channels: usize) -> Self {
        let mut count = 0usize;
        let mut sum = vec![0.0; channels];
        let mut sum_sq = vec![0.0; channels];
        for w in windows {
            for row in w.data().chunks_exact(channels) {
                count += 1;
                for (c, &v) in row.iter().enumerate() {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
        }
        if count == 0 {
            return Self::identity(channels);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let c = self.channels();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}
