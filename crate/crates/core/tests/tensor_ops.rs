//! Tensor-engine contracts: op semantics against hand values and naive
//! oracles, and gradient checks against central finite differences.

mod common;

use common::{assert_close, check_grad, naive_conv2d};
use hypersharp_core::tensor::{Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn matmul_identity_passthrough() {
    let eye = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(eye.matmul_batched(&b).unwrap().to_vec(), b.to_vec());
}

#[test]
fn matmul_hand_dot_product() {
    let a = Tensor::from_vec(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::from_vec(vec![1, 2, 1], vec![3.0, 4.0]).unwrap();
    let out = a.matmul_batched(&b).unwrap();
    assert_eq!(out.shape(), &[1, 1, 1]);
    assert!((out.item() - 11.0).abs() < 1e-12);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let a = Tensor::zeros(&[1, 2, 3]);
    let b = Tensor::zeros(&[1, 2, 3]);
    match a.matmul_batched(&b) {
        Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![1, 2, 3]);
            assert_eq!(rhs, vec![1, 2, 3]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::param(vec![2, 3, 2], rand_vec(&mut rng, 12)).unwrap();
    let b = Tensor::param(vec![2, 2, 4], rand_vec(&mut rng, 16)).unwrap();
    check_grad(&a, 1e-6, "matmul wrt a", || {
        a.matmul_batched(&b).unwrap().sum()
    });
    check_grad(&b, 1e-6, "matmul wrt b", || {
        a.matmul_batched(&b).unwrap().sum()
    });
}

#[test]
fn softmax_symmetry_and_stability() {
    let x = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
    assert_close(&x.softmax(0).unwrap().to_vec(), &[0.5, 0.5], 1e-15, "symmetric");
    let big = Tensor::from_vec(vec![3], vec![1000.0, 1000.0, 1000.0]).unwrap();
    let y = big.softmax(0).unwrap().to_vec();
    assert!(y.iter().all(|v| v.is_finite()));
    assert_close(&y, &[1.0 / 3.0; 3], 1e-12, "stabilized");
}

#[test]
fn softmax_direct_evaluation() {
    let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    // independent exp/sum evaluation
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    let expect: Vec<f64> = e.iter().map(|v| v / s).collect();
    assert_close(&x.softmax(0).unwrap().to_vec(), &expect, 1e-12, "softmax");
    assert!((expect[0] - 0.09003057).abs() < 1e-8);
    assert!((expect[1] - 0.24472847).abs() < 1e-8);
    assert!((expect[2] - 0.66524096).abs() < 1e-8);
}

#[test]
fn softmax_slices_sum_to_one_on_every_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_vec(vec![3, 4, 5], rand_vec(&mut rng, 60)).unwrap();
    for dim in 0..3 {
        let y = x.softmax(dim).unwrap();
        let data = y.to_vec();
        assert!(data.iter().all(|v| *v > 0.0 && *v < 1.0));
        // sum out the softmax axis by brute force
        let shape = [3usize, 4, 5];
        let strides = [20usize, 5, 1];
        let mut sums = std::collections::HashMap::new();
        for i in 0..60 {
            let idx = [i / 20, (i / 5) % 4, i % 5];
            let mut key = idx;
            key[dim] = 0;
            *sums.entry(key).or_insert(0.0) += data[i];
        }
        let _ = (shape, strides);
        for (_, s) in sums {
            assert!((s - 1.0).abs() < 1e-9, "axis {dim} slice sums to {s}");
        }
    }
}

#[test]
fn softmax_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::param(vec![2, 3], rand_vec(&mut rng, 6)).unwrap();
    let w = Tensor::from_vec(vec![2, 3], rand_vec(&mut rng, 6)).unwrap();
    check_grad(&x, 1e-6, "softmax dim 1", || {
        x.softmax(1).unwrap().mul(&w).unwrap().sum()
    });
    check_grad(&x, 1e-6, "softmax dim 0", || {
        x.softmax(0).unwrap().mul(&w).unwrap().sum()
    });
}

#[test]
fn conv2d_one_by_one_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_vec(vec![1, 3, 3], rand_vec(&mut rng, 9)).unwrap();
    let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let b = Tensor::zeros(&[1]);
    let y = x.conv2d(&w, &b, 1, 0).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn conv2d_ones_kernel_constant_interior() {
    let x = Tensor::full(&[1, 5, 5], 2.0);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let b = Tensor::zeros(&[1]);
    let y = x.conv2d(&w, &b, 1, 1).unwrap();
    let d = y.to_vec();
    // interior pixels see all nine taps
    for yy in 1..4 {
        for xx in 1..4 {
            assert!((d[yy * 5 + xx] - 18.0).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_bit_equal_to_naive_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (stride, padding, h, w) in [(1, 0, 4, 4), (1, 1, 4, 4), (2, 1, 5, 5)] {
        let (ci, co, k) = (2, 3, 3);
        let xd = rand_vec(&mut rng, ci * h * w);
        let wd = rand_vec(&mut rng, co * ci * k * k);
        let bd = rand_vec(&mut rng, co);
        let x = Tensor::from_vec(vec![ci, h, w], xd.clone()).unwrap();
        let wt = Tensor::from_vec(vec![co, ci, k, k], wd.clone()).unwrap();
        let bt = Tensor::from_vec(vec![co], bd.clone()).unwrap();
        let got = x.conv2d(&wt, &bt, stride, padding).unwrap().to_vec();
        let want = naive_conv2d(&xd, &wd, &bd, ci, h, w, co, k, stride, padding);
        assert_eq!(got, want, "stride {stride} padding {padding}");
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::param(vec![2, 4, 4], rand_vec(&mut rng, 32)).unwrap();
    let w = Tensor::param(vec![2, 2, 3, 3], rand_vec(&mut rng, 36)).unwrap();
    let b = Tensor::param(vec![2], rand_vec(&mut rng, 2)).unwrap();
    let target = Tensor::from_vec(vec![2, 4, 4], rand_vec(&mut rng, 32)).unwrap();
    let run = || {
        let y = x.conv2d(&w, &b, 1, 1).unwrap();
        y.mul(&target).unwrap().sum()
    };
    check_grad(&x, 1e-6, "conv2d wrt x", run);
    check_grad(&w, 1e-6, "conv2d wrt weight", run);
    check_grad(&b, 1e-6, "conv2d wrt bias", run);
}

#[test]
fn conv_transpose2d_shape_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::param(vec![2, 3, 3], rand_vec(&mut rng, 18)).unwrap();
    let w = Tensor::param(vec![2, 3, 4, 4], rand_vec(&mut rng, 96)).unwrap();
    let b = Tensor::param(vec![3], rand_vec(&mut rng, 3)).unwrap();
    let y = x.conv_transpose2d(&w, &b, 2, 1).unwrap();
    assert_eq!(y.shape(), &[3, 6, 6]);
    let target = Tensor::from_vec(vec![3, 6, 6], rand_vec(&mut rng, 108)).unwrap();
    let run = || {
        let y = x.conv_transpose2d(&w, &b, 2, 1).unwrap();
        y.mul(&target).unwrap().sum()
    };
    check_grad(&x, 1e-6, "tconv wrt x", run);
    check_grad(&w, 1e-6, "tconv wrt weight", run);
    check_grad(&b, 1e-6, "tconv wrt bias", run);
}

#[test]
fn batch_norm_constant_channel_training_mode() {
    let x = Tensor::from_vec(vec![1, 2, 2], vec![5.0; 4]).unwrap();
    let gamma = Tensor::from_vec(vec![1], vec![2.0]).unwrap();
    let beta = Tensor::from_vec(vec![1], vec![0.25]).unwrap();
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let y = x
        .batch_norm2d(&gamma, &beta, &mut rm, &mut rv, true, 1e-5, 0.1)
        .unwrap();
    // zero variance: output is beta exactly (0/sqrt(eps) scaled by gamma)
    assert_close(&y.to_vec(), &[0.25; 4], 1e-12, "constant channel");
    assert!((rm[0] - 0.5).abs() < 1e-12, "running mean momentum blend");
}

#[test]
fn batch_norm_two_sample_channel() {
    let x = Tensor::from_vec(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
    let gamma = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
    let beta = Tensor::zeros(&[1]);
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let y = x
        .batch_norm2d(&gamma, &beta, &mut rm, &mut rv, true, 1e-5, 0.1)
        .unwrap();
    // mean 2, biased std 1 -> [-1, 1] up to the eps correction
    assert_close(&y.to_vec(), &[-1.0, 1.0], 1e-4, "two-sample channel");
}

#[test]
fn batch_norm_eval_mode_identity_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_vec(vec![2, 2, 2], rand_vec(&mut rng, 8)).unwrap();
    let gamma = Tensor::full(&[2], 1.0);
    let beta = Tensor::zeros(&[2]);
    let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
    let y = x
        .batch_norm2d(&gamma, &beta, &mut rm, &mut rv, false, 1e-5, 0.1)
        .unwrap();
    assert_close(&y.to_vec(), &x.to_vec(), 1e-4, "eval identity");
}

#[test]
fn batch_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::param(vec![2, 3, 3], rand_vec(&mut rng, 18)).unwrap();
    let gamma = Tensor::param(vec![2], vec![1.2, 0.8]).unwrap();
    let beta = Tensor::param(vec![2], vec![0.1, -0.2]).unwrap();
    let target = Tensor::from_vec(vec![2, 3, 3], rand_vec(&mut rng, 18)).unwrap();
    let run = || {
        // fresh running stats each evaluation so the forward is pure
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let y = x
            .batch_norm2d(&gamma, &beta, &mut rm, &mut rv, true, 1e-5, 0.1)
            .unwrap();
        y.mul(&target).unwrap().sum()
    };
    check_grad(&x, 1e-6, "bn wrt x", run);
    check_grad(&gamma, 1e-6, "bn wrt gamma", run);
    check_grad(&beta, 1e-6, "bn wrt beta", run);
}

#[test]
fn linear_identity_and_hand_value() {
    let x = Tensor::from_vec(vec![2], vec![2.0, 3.0]).unwrap();
    let eye = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let zb = Tensor::zeros(&[2]);
    assert_eq!(x.linear(&eye, &zb).unwrap().to_vec(), vec![2.0, 3.0]);
    let w = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let b = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
    assert!((x.linear(&w, &b).unwrap().item() - 6.0).abs() < 1e-12);
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::param(vec![3, 4], rand_vec(&mut rng, 12)).unwrap();
    let w = Tensor::param(vec![2, 4], rand_vec(&mut rng, 8)).unwrap();
    let b = Tensor::param(vec![2], rand_vec(&mut rng, 2)).unwrap();
    let target = Tensor::from_vec(vec![3, 2], rand_vec(&mut rng, 6)).unwrap();
    let run = || {
        let y = x.linear(&w, &b).unwrap();
        y.mul(&target).unwrap().sum()
    };
    check_grad(&x, 1e-6, "linear wrt x", run);
    check_grad(&w, 1e-6, "linear wrt w", run);
    check_grad(&b, 1e-6, "linear wrt b", run);
}

#[test]
fn backward_basics() {
    let x = Tensor::param(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);

    let y = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    y.mul(&y).unwrap().sum().backward().unwrap();
    assert_eq!(y.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        x.scale(2.0).backward(),
        Err(TensorError::NonScalarLoss(_))
    ));
}

#[test]
fn backward_chain_rule_on_scalar_chain() {
    // f(x) = (3x + 1)^2; f'(x) = 6(3x + 1)
    let x = Tensor::param(vec![1], vec![2.0]).unwrap();
    let g = x.scale(3.0).add_scalar(1.0);
    let f = g.mul(&g).unwrap().sum();
    f.backward().unwrap();
    assert!((x.grad().unwrap()[0] - 6.0 * 7.0).abs() < 1e-12);
}

#[test]
fn backward_accumulates_once_per_use() {
    // x used twice: d/dx (x + x) = 2
    let x = Tensor::param(vec![1], vec![1.5]).unwrap();
    x.add(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0]);
}

#[test]
fn elementwise_primitives_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // keep values away from relu/abs kinks
    let data: Vec<f64> = (0..8)
        .map(|_| {
            let v: f64 = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::param(vec![2, 4], data).unwrap();
    let w = Tensor::from_vec(vec![2, 4], rand_vec(&mut rng, 8)).unwrap();
    check_grad(&x, 1e-6, "relu", || x.relu().mul(&w).unwrap().sum());
    check_grad(&x, 1e-6, "leaky_relu", || {
        x.leaky_relu(0.2).mul(&w).unwrap().sum()
    });
    check_grad(&x, 1e-6, "abs", || x.abs().mul(&w).unwrap().sum());
    check_grad(&x, 1e-6, "mean", || x.mean());
    check_grad(&x, 1e-6, "norm_l1", || x.norm_l1());
    check_grad(&x, 1e-6, "norm_l2", || x.norm_l2().unwrap());
    check_grad(&x, 1e-6, "add/sub/mul mix", || {
        x.add(&w).unwrap().mul(&x.sub(&w).unwrap()).unwrap().sum()
    });
    check_grad(&x, 1e-6, "sub_broadcast_scalar", || {
        x.sub_broadcast_scalar(&x.mean()).unwrap().mul(&w).unwrap().sum()
    });
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::param(vec![2, 3, 4], rand_vec(&mut rng, 24)).unwrap();
    let w = Tensor::from_vec(vec![24], rand_vec(&mut rng, 24)).unwrap();
    check_grad(&x, 1e-6, "reshape", || {
        x.reshape(vec![24]).unwrap().mul(&w).unwrap().sum()
    });
    check_grad(&x, 1e-6, "permute", || {
        x.permute(&[2, 0, 1])
            .unwrap()
            .reshape(vec![24])
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum()
    });
    let y = Tensor::param(vec![1, 3, 4], rand_vec(&mut rng, 12)).unwrap();
    check_grad(&y, 1e-6, "concat", || {
        Tensor::concat(&[x.clone(), y.clone()], 0)
            .unwrap()
            .mul(&Tensor::full(&[3, 3, 4], 0.5))
            .unwrap()
            .sum()
    });
}

#[test]
fn avg_pool2_semantics_and_gradients() {
    let x = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    assert!((x.avg_pool2().unwrap().item() - 3.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Tensor::param(vec![2, 4, 4], rand_vec(&mut rng, 32)).unwrap();
    let w = Tensor::from_vec(vec![2, 2, 2], rand_vec(&mut rng, 8)).unwrap();
    check_grad(&x, 1e-6, "avg_pool2", || {
        x.avg_pool2().unwrap().mul(&w).unwrap().sum()
    });
}

#[test]
fn permute_matches_manual_transpose() {
    let x = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let y = x.permute(&[1, 0]).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert_eq!(y.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
}

#[test]
fn ops_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = Tensor::from_vec(vec![2, 3, 4], rand_vec(&mut rng, 24)).unwrap();
    let b = Tensor::from_vec(vec![2, 4, 3], rand_vec(&mut rng, 24)).unwrap();
    let r1 = a.matmul_batched(&b).unwrap().to_vec();
    let r2 = a.matmul_batched(&b).unwrap().to_vec();
    assert_eq!(r1, r2);
}
