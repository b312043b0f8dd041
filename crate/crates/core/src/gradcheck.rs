//! Central finite differences, used to validate backward rules.

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
///
/// `floor` keeps entries whose true gradient is zero (or lost in rounding
/// noise) from dominating the maximum.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Worst relative error of one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient of `η·L_CE + L_MSE` on one window with
/// central differences, for every element of every parameter.
///
/// Each element is probed at every step in `steps` and keeps its smallest
/// error: a ReLU kink inside one probe interval spoils that estimate but not
/// the smaller ones, while a wrong backward rule spoils all of them. The
/// model must have dropout disabled.
pub fn check_model_gradients(
    model: &crate::model::Model,
    x: &crate::Tensor,
    labels: &[usize],
    mask: &crate::masking::MaskSpec,
    weights: crate::loss::LossWeights,
    steps: &[f64],
    floor: f64,
) -> Result<Vec<ParamCheck>, crate::train::TrainError> {
    use crate::train::{batch_gradients, window_loss};

    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let analytic = batch_gradients(model, &[(x, labels, mask)], weights, None, &mut rng)?;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (id, name, value) in model.params().iter() {
        let a = analytic.grads[id.index()].data();
        let mut best = vec![f64::INFINITY; a.len()];
        for &h in steps {
            let numeric = central_difference(
                |v| {
                    probe.params_mut().get_mut(id).data_mut().copy_from_slice(v);
                    let (ce, mse) = window_loss(&probe, x, labels, mask).expect("forward");
                    crate::loss::combine(ce, mse, weights)
                },
                value.data(),
                h,
            );
            for ((b, &ai), &ni) in best.iter_mut().zip(a).zip(&numeric) {
                *b = b.min(relative_error(ai, ni, floor));
            }
        }
        probe
            .params_mut()
            .get_mut(id)
            .data_mut()
            .copy_from_slice(value.data());
        out.push(ParamCheck {
            name: name.to_string(),
            max_relative_error: best.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(out)
}
