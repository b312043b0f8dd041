//! Deterministic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repseg_core::synth::{
    generate_recording, windowize, LabeledWindow, SessionPlan, SubjectProfile,
};
use repseg_core::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

/// Windows of one synthetic standard session.
pub fn session_windows(window_len: usize) -> Vec<LabeledWindow> {
    let rec = generate_recording(&SubjectProfile::nominal("B"), &SessionPlan::standard(), 1)
        .expect("recording");
    windowize(&rec, window_len, window_len).expect("windows")
}

/// Labels with runs of 5 to 60 samples over `n_classes`.
pub fn run_labels(len: usize, n_classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let c = rng.gen_range(0..n_classes);
        let run = rng.gen_range(5..60);
        out.extend(std::iter::repeat(c).take(run));
    }
    out.truncate(len);
    out
}
