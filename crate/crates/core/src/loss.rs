//! Classification, masked reconstruction and combined objectives.

use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Lower clamp applied inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;
/// Default weight of the classification term.
pub const DEFAULT_ETA: f64 = 500.0;

/// Weight `η` of the classification loss in `η·L_CE + L_MSE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA }
    }
}

impl LossWeights {
    pub fn new(eta: f64) -> Option<Self> {
        (eta >= 0.0 && eta.is_finite()).then_some(Self { eta })
    }
}

/// One-hot `T×C` target; entries of `weights` (if any) scale each class row.
pub fn one_hot(labels: &[usize], n_classes: usize, weights: Option<&[f64]>) -> Tensor {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (t, &c) in labels.iter().enumerate() {
        data[t * n_classes + c] = weights.map_or(1.0, |w| w[c]);
    }
    Tensor::new(vec![labels.len(), n_classes], data).expect("target shape")
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `L_CE = 1/(T·C) · Σ_{t,c} −y_{t,c} · ln max(ŷ_{t,c}, ε)`.
pub fn cross_entropy(tape: &mut Tape, probs: Var, target: Var) -> Result<Var, TensorError> {
    check_same("cross_entropy", tape.value(probs), tape.value(target))?;
    let (t, c) = tape.value(probs).dims2("cross_entropy")?;
    let log_p = tape.log_clamped(probs, LOG_EPS);
    let weighted = tape.mul(target, log_p)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / (t * c) as f64))
}

/// `L_MSE = 1/(N·T) · Σ_{n,t} m_{t,n} (x_{t,n} − x̂_{t,n})²`; the
/// denominator counts every sample, not only masked ones.
pub fn masked_mse(tape: &mut Tape, x: Var, recon: Var, mask: Var) -> Result<Var, TensorError> {
    check_same("masked_mse", tape.value(x), tape.value(recon))?;
    check_same("masked_mse", tape.value(x), tape.value(mask))?;
    let count = tape.value(x).len();
    let diff = tape.sub(recon, x)?;
    let gated = tape.mul(diff, mask)?;
    let sq = tape.mul(gated, gated)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / count as f64))
}

/// `L = η·L_CE + L_MSE`.
pub fn combined_loss(
    tape: &mut Tape,
    ce: Var,
    mse: Var,
    weights: LossWeights,
) -> Result<Var, TensorError> {
    let scaled = tape.scale(ce, weights.eta);
    tape.add(scaled, mse)
}

/// Scalar form of [`combined_loss`].
pub fn combine(ce: f64, mse: f64, weights: LossWeights) -> f64 {
    weights.eta * ce + mse
}

/// Plain-value cross-entropy, for evaluation outside a tape.
pub fn cross_entropy_value(probs: &Tensor, target: &Tensor) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let (p, y) = (tape.constant(probs.clone()), tape.constant(target.clone()));
    let l = cross_entropy(&mut tape, p, y)?;
    Ok(tape.value(l).data()[0])
}

/// Plain-value masked MSE.
pub fn masked_mse_value(x: &Tensor, recon: &Tensor, mask: &Tensor) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let (a, b, m) = (
        tape.constant(x.clone()),
        tape.constant(recon.clone()),
        tape.constant(mask.clone()),
    );
    let l = masked_mse(&mut tape, a, b, m)?;
    Ok(tape.value(l).data()[0])
}
