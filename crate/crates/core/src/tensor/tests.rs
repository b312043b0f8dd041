use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{central_difference, max_relative_error};

const H: f64 = 1e-5;

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Max relative error between tape gradients and finite differences of
/// `Σ out ⊙ R` for a fixed random projection `R`, over every input.
fn gradient_error(inputs: &[Tensor], build: &Build, seed: u64, floor: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        random(&mut rng, tape.value(out).shape())
    };
    let loss_of = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let r = tape.constant(probe.clone());
    let weighted = tape.mul(out, r).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = central_difference(
            |x| {
                let mut values = inputs.to_vec();
                values[i] = Tensor::new(inputs[i].shape().to_vec(), x.to_vec()).unwrap();
                loss_of(&values)
            },
            inputs[i].data(),
            H,
        );
        worst = worst.max(max_relative_error(analytic.data(), &numeric, floor));
    }
    worst
}

#[test]
fn matmul_identity_and_hand_cases() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap());
    let out = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);

    let row = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
    let col = tape.constant(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
    let dot = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(dot).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[4, 3]);
    let b = random(&mut rng, &[3, 2]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.param(a.clone()), tape.param(b.clone()));
    let out = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(out);
    tape.backward(loss).unwrap();
    let sum_of =
        |a: &Tensor, b: &Tensor| -> f64 { matmul_nn(a.data(), b.data(), 4, 3, 2).iter().sum() };
    let num_a = central_difference(
        |x| sum_of(&Tensor::new(vec![4, 3], x.to_vec()).unwrap(), &b),
        a.data(),
        H,
    );
    let num_b = central_difference(
        |x| sum_of(&a, &Tensor::new(vec![3, 2], x.to_vec()).unwrap()),
        b.data(),
        H,
    );
    assert!(max_relative_error(tape.grad(va).unwrap().data(), &num_a, 1e-8) < 1e-6);
    assert!(max_relative_error(tape.grad(vb).unwrap().data(), &num_b, 1e-8) < 1e-6);
}

#[test]
fn softmax_uniform_and_overflow_safe() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0, 0.0]]).unwrap());
    let y = tape.softmax_rows(x).unwrap();
    assert!(tape
        .value(y)
        .data()
        .iter()
        .all(|v| (v - 0.25).abs() < 1e-15));

    let x = tape.constant(Tensor::from_rows(&[[1000.0, 0.0]]).unwrap());
    let y = tape.softmax_rows(x).unwrap();
    let p = tape.value(y).data();
    assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut tape = Tape::new();
        let x = random(&mut rng, &[3, 5]).map(|v| v * 30.0);
        let x = tape.constant(x);
        let y = tape.softmax_rows(x).unwrap();
        for r in 0..3 {
            let row = tape.value(y).row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[[f64::NAN, 0.0]]).unwrap());
    assert!(matches!(
        tape.softmax_rows(x),
        Err(TensorError::NonFinite { .. })
    ));
}

#[test]
fn layer_norm_constant_and_two_point_rows() {
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(Tensor::from_rows(&[[5.0, 5.0], [1.0, 3.0]]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    let out = tape.value(y).data();
    assert_eq!(&out[..2], &[0.0, 0.0]);
    assert!((out[2] + 1.0).abs() < 1e-9 && (out[3] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [
        random(&mut rng, &[4, 6]),
        random(&mut rng, &[6]),
        random(&mut rng, &[6]),
    ];
    let build = |t: &mut Tape, v: &[Var]| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
    assert!(gradient_error(&inputs, &build, 9, 1e-8) < 1e-5);
}

#[test]
fn dilated_impulse_response() {
    let mut x = Tensor::zeros(&[17, 1]);
    x.data_mut()[8] = 1.0;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let k = tape.constant(Tensor::full(&[3, 1, 1], 1.0));
    let y = tape.conv1d(xv, k, 4).unwrap();
    let nonzero: Vec<usize> = (0..17)
        .filter(|&t| tape.value(y).data()[t] != 0.0)
        .collect();
    assert_eq!(nonzero, [4, 8, 12]);
}

#[test]
fn centered_identity_tap_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[10, 2]);
    let mut kernel = Tensor::zeros(&[3, 2, 2]);
    // tap 1 (centre), identity over channels
    kernel.data_mut()[4] = 1.0;
    kernel.data_mut()[4 + 3] = 1.0;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(kernel);
    let y = tape.conv1d(xv, kv, 1).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_rejects_even_kernel_and_zero_dilation() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[8, 1]));
    let even = tape.constant(Tensor::zeros(&[2, 1, 1]));
    assert_eq!(
        tape.conv1d(x, even, 1).unwrap_err(),
        TensorError::EvenKernel(2)
    );
    let odd = tape.constant(Tensor::zeros(&[3, 1, 1]));
    assert_eq!(
        tape.conv1d(x, odd, 0).unwrap_err(),
        TensorError::ZeroDilation
    );
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&mut rng, &[16, 2]), random(&mut rng, &[3, 2, 3])];
    let build = |t: &mut Tape, v: &[Var]| t.conv1d(v[0], v[1], 2).unwrap();
    assert!(gradient_error(&inputs, &build, 4, 1e-8) < 1e-5);
}

#[test]
fn conv_influence_is_limited_to_dilated_taps() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in 1..=5 {
        let kernel = random(&mut rng, &[3, 2, 2]);
        let base = random(&mut rng, &[40, 2]);
        let run = |x: &Tensor| conv1d_forward(x.data(), kernel.data(), 40, 2, 2, 3, d);
        let y0 = run(&base);
        let mut bumped = base.clone();
        bumped.data_mut()[20 * 2] += 1.0;
        let y1 = run(&bumped);
        for t in 0..40 {
            let changed = (0..2).any(|o| y0[t * 2 + o] != y1[t * 2 + o]);
            let offset = t as isize - 20;
            let allowed = offset == 0 || offset.abs() == d as isize;
            assert!(!changed || allowed, "d={d} t={t}");
        }
    }
}

#[test]
fn backward_trivial_cases() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|g| *g == 1.0));

    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn two_consumers_accumulate() {
    // loss = sum(3x) + sum(x ⊙ y), so dL/dx = 3 + y
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, -2.0]));
    let y = tape.constant(Tensor::vector(vec![4.0, 5.0]));
    let a = tape.scale(x, 3.0);
    let b = tape.mul(x, y).unwrap();
    let sa = tape.sum(a);
    let sb = tape.sum(b);
    let loss = tape.add(sa, sb).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[7.0, 8.0]);
    assert!(tape.grad(y).is_none());
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        tape.backward(x),
        Err(TensorError::NonScalarLoss(_))
    ));

    let c = tape.constant(Tensor::vector(vec![1.0]));
    let s = tape.sum(c);
    assert_eq!(tape.backward(s).unwrap_err(), TensorError::Detached);

    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(
        tape.backward(s).unwrap_err(),
        TensorError::AlreadyBackpropagated
    );
}

#[test]
fn tensor_rejects_inconsistent_data() {
    assert!(matches!(
        Tensor::new(vec![2, 2], vec![0.0; 3]),
        Err(TensorError::DataLength { .. })
    ));
}

/// Every differentiable op against central differences on small random
/// shapes, ten seeds each.
#[test]
fn every_op_passes_gradient_check_over_ten_seeds() {
    let ops: Vec<(&str, Vec<Vec<usize>>, Box<Build>)> = vec![
        (
            "matmul",
            vec![vec![3, 4], vec![4, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "transpose",
            vec![vec![3, 5]],
            Box::new(|t: &mut Tape, v: &[Var]| t.transpose(v[0]).unwrap()),
        ),
        (
            "add",
            vec![vec![3, 2], vec![3, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "sub",
            vec![vec![3, 2], vec![3, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            vec![vec![3, 2], vec![3, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]).unwrap()),
        ),
        (
            "add_row",
            vec![vec![4, 3], vec![3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.add_row(v[0], v[1]).unwrap()),
        ),
        (
            "scale",
            vec![vec![2, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.scale(v[0], -1.7)),
        ),
        (
            "relu",
            vec![vec![4, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.relu(v[0])),
        ),
        (
            "softmax",
            vec![vec![3, 5]],
            Box::new(|t: &mut Tape, v: &[Var]| t.softmax_rows(v[0]).unwrap()),
        ),
        (
            "log",
            vec![vec![3, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let sq = t.mul(v[0], v[0]).unwrap();
                let y = t.scale(sq, 1.0);
                t.log_clamped(y, 1e-12)
            }),
        ),
        (
            "sum",
            vec![vec![2, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.sum(v[0])),
        ),
        (
            "layer_norm",
            vec![vec![3, 5], vec![5], vec![5]],
            Box::new(|t: &mut Tape, v: &[Var]| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
        ),
        (
            "conv1d",
            vec![vec![12, 2], vec![3, 2, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.conv1d(v[0], v[1], 3).unwrap()),
        ),
        (
            "slice",
            vec![vec![3, 6]],
            Box::new(|t: &mut Tape, v: &[Var]| t.slice_cols(v[0], 2, 3).unwrap()),
        ),
        (
            "concat",
            vec![vec![3, 2], vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.concat_cols(&[v[0], v[1], v[0]]).unwrap()),
        ),
    ];
    for (name, shapes, build) in &ops {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
            let err = gradient_error(&inputs, build.as_ref(), seed, 1e-8);
            assert!(err < 1e-4, "{name} seed {seed}: relative error {err}");
        }
    }
}
