mod common;

use std::time::Instant;

use common::{random_tensor, rng};
use rand::Rng;
use unetdr::autodiff::gradcheck::{check_function, finite_difference_gradient, run_suite, GRADCHECK_TOLERANCE};
use unetdr::autodiff::Graph;
use unetdr::nn::{resize_trilinear, NormMode};
use unetdr::Tensor;

#[test]
fn full_suite_passes_quickly() {
    let start = Instant::now();
    let checks = run_suite(0).unwrap();
    assert!(start.elapsed().as_secs() < 120);
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    for needle in ["conv3d d=1", "conv3d d=4", "maxpool", "batchnorm3d train", "upsample", "concat", "dice_loss", "bce_loss"] {
        assert!(names.iter().any(|n| n.contains(needle)), "suite lacks {needle}: {names:?}");
    }
    for c in &checks {
        assert!(c.passed, "{} rel err {}", c.name, c.max_relative_error);
    }
}

#[test]
fn combined_loss_on_random_4_cubed_pair() {
    let mut r = rng(42);
    let logits = random_tensor(&[1, 1, 4, 4, 4], &mut r);
    let target = Tensor::new(vec![1, 1, 4, 4, 4], (0..64).map(|_| f64::from(r.random_bool(0.3) as u8)).collect()).unwrap();
    let check = check_function("dice+bce", &[logits], &|g, v| {
        let p = g.sigmoid(v[0])?;
        let d = g.dice_loss(p, &target)?;
        let b = g.bce_loss(p, &target)?;
        g.add(d, b)
    })
    .unwrap();
    assert!(check.max_relative_error < GRADCHECK_TOLERANCE, "{}", check.max_relative_error);
}

#[test]
fn scalar_derivative_examples() {
    let mut g = Graph::new();
    let x = g.parameter(Tensor::new(vec![1], vec![3.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &[6.0]);

    let mut g = Graph::new();
    let x = g.parameter(Tensor::new(vec![1], vec![0.0]).unwrap());
    let s = g.sigmoid(x).unwrap();
    let loss = g.sum(s).unwrap();
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &[0.25]);

    let fd = finite_difference_gradient(|t| Ok(t.data()[0] * t.data()[0]), &Tensor::new(vec![1], vec![3.0]).unwrap(), 1e-6).unwrap();
    assert!((fd.data()[0] - 6.0).abs() < 1e-6);
}

#[test]
fn maxpool_picks_block_maximum_and_halves() {
    let mut data = vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
    data[5] = 9.0;
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 2, 2, 2], data).unwrap());
    let y = g.max_pool3d(x).unwrap();
    assert_eq!(g.value(y).data(), &[9.0]);

    let x = g.constant(Tensor::full(vec![1, 2, 4, 6, 8], 1.5));
    let y = g.max_pool3d(x).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 2, 2, 3, 4]);
    assert!(g.value(y).data().iter().all(|&v| v == 1.5));
}

#[test]
fn batch_norm_examples() {
    let mut r = rng(3);
    let x = random_tensor(&[2, 3, 2, 2, 2], &mut r).map(|v| 5.0 + 4.0 * v);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let gamma = g.constant(Tensor::ones(vec![3]));
    let beta = g.constant(Tensor::zeros(vec![3]));
    let (y, _) = g
        .batch_norm3d(xv, gamma, beta, &[0.0; 3], &[1.0; 3], 1e-5, NormMode::Train)
        .unwrap();
    let y = g.value(y).clone();
    for c in 0..3 {
        let vals: Vec<f64> = (0..2).flat_map(|n| y.data()[(n * 3 + c) * 8..(n * 3 + c + 1) * 8].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / 16.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }

    // gamma 2, beta 3 on a standardized input
    let mut g = Graph::new();
    let xv = g.constant(y);
    let gamma = g.constant(Tensor::full(vec![3], 2.0));
    let beta = g.constant(Tensor::full(vec![3], 3.0));
    let (z, _) = g
        .batch_norm3d(xv, gamma, beta, &[0.0; 3], &[1.0; 3], 1e-5, NormMode::Train)
        .unwrap();
    let z = g.value(z);
    let mean = z.sum() / z.len() as f64;
    let std = (z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    assert!((mean - 3.0).abs() < 1e-12);
    assert!((std - 2.0).abs() < 1e-3);
}

#[test]
fn trilinear_one_dimensional_analogue() {
    // [0, 1] doubled with half-pixel centres: hand evaluation gives
    // samples at -0.25, 0.25, 0.75, 1.25 (clamped) of the ramp
    let out = resize_trilinear(&[0.0, 1.0], 1, [1, 1, 2], [1, 1, 4]);
    assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    let constant = resize_trilinear(&[2.5; 8], 1, [2, 2, 2], [4, 4, 4]);
    assert!(constant.iter().all(|&v| v == 2.5));
}

#[test]
fn upsample_gradient_preserves_total() {
    let mut r = rng(8);
    let mut g = Graph::new();
    let x = g.parameter(random_tensor(&[1, 2, 2, 3, 2], &mut r));
    let y = g.upsample_trilinear(x, 2).unwrap();
    let loss = g.sum(y).unwrap();
    let grads = g.backward(loss).unwrap();
    let total = grads.get(x).unwrap().sum();
    // d(sum y)/dx summed over inputs equals the number of outputs
    assert!((total - 192.0).abs() < 1e-9, "{total}");
}

#[test]
fn concat_shapes_and_order() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(vec![1, 4, 2, 2, 2], 1.0));
    let b = g.constant(Tensor::full(vec![1, 8, 2, 2, 2], 2.0));
    let c = g.concat_channels(a, b).unwrap();
    let v = g.value(c);
    assert_eq!(v.shape(), &[1, 12, 2, 2, 2]);
    assert!(v.data()[..32].iter().all(|&x| x == 1.0));
    assert!(v.data()[32..].iter().all(|&x| x == 2.0));
}
