//! Oracle-backed tests for the tensor engine.
//!
//! The convolution/pooling oracles are direct nested-loop summations,
//! independent of the optimized time-axis kernels they check.

use rand::Rng;

use super::*;
use crate::seed;

/// Direct 7-loop cross-correlation oracle with zero padding.
pub fn conv3d_naive(
    input: &[f64],
    ishape: [usize; 4],
    weights: &[f64],
    wshape: [usize; 5],
    bias: &[f64],
    same: bool,
) -> Vec<f64> {
    let [ci, ri, cci, ti] = ishape;
    let [co, _, kr, kc, kt] = wshape;
    let (pr, pc, pt) = if same { ((kr - 1) / 2, (kc - 1) / 2, (kt - 1) / 2) } else { (0, 0, 0) };
    let (ro, cco, to) = (ri + 2 * pr - kr + 1, cci + 2 * pc - kc + 1, ti + 2 * pt - kt + 1);
    let mut out = vec![0.0; co * ro * cco * to];
    for o in 0..co {
        for r in 0..ro {
            for c in 0..cco {
                for t in 0..to {
                    let mut acc = bias[o];
                    for i in 0..ci {
                        for a in 0..kr {
                            for b in 0..kc {
                                for d in 0..kt {
                                    let (rr, cc, tt) = (r + a, c + b, t + d);
                                    if rr < pr || cc < pc || tt < pt {
                                        continue;
                                    }
                                    let (rr, cc, tt) = (rr - pr, cc - pc, tt - pt);
                                    if rr >= ri || cc >= cci || tt >= ti {
                                        continue;
                                    }
                                    acc += input[((i * ri + rr) * cci + cc) * ti + tt]
                                        * weights[(((o * ci + i) * kr + a) * kc + b) * kt + d];
                                }
                            }
                        }
                    }
                    out[((o * ro + r) * cco + c) * to + t] = acc;
                }
            }
        }
    }
    out
}

fn rand_tensor<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn conv3d_identity_kernel() {
    let mut tape = Tape::new();
    let input = tape.leaf(Tensor::from_vec(vec![1, 3, 7, 10], vec![1.0; 210]).unwrap());
    let w = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![1.0]).unwrap());
    let b = tape.leaf(Tensor::from_vec(vec![1], vec![0.0]).unwrap());
    let out = tape.conv3d(input, w, b, Padding::Same).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 3, 7, 10]);
    assert!(tape.value(out).data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn conv3d_same_padding_preserves_extents() {
    let mut rng = seed::rng(1, "conv-shape");
    let mut tape = Tape::new();
    let input = tape.leaf(rand_tensor(vec![1, 3, 7, 300], &mut rng));
    let kernel = ConvKernel3D::he_uniform((3, 3, 25), 1, 8, &mut rng).unwrap();
    let (w, b) = tape.kernel(&kernel);
    let out = tape.conv3d(input, w, b, Padding::Same).unwrap();
    assert_eq!(tape.value(out).shape(), &[8, 3, 7, 300]);
}

#[test]
fn conv3d_matches_naive_oracle() {
    let mut rng = seed::rng(7, "conv-oracle");
    for case in 0..8 {
        let same = case % 2 == 0;
        let input = rand_tensor(vec![2, 3, 3, 5], &mut rng);
        let w = rand_tensor(vec![3, 2, 3, 3, 3], &mut rng);
        let b = rand_tensor(vec![3], &mut rng);
        let expected = conv3d_naive(
            input.data(),
            [2, 3, 3, 5],
            w.data(),
            [3, 2, 3, 3, 3],
            b.data(),
            same,
        );
        let mut tape = Tape::new();
        let (i, wn, bn) = (tape.leaf(input), tape.leaf(w), tape.leaf(b));
        let pad = if same { Padding::Same } else { Padding::Valid };
        let out = tape.conv3d(i, wn, bn, pad).unwrap();
        for (a, e) in tape.value(out).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "case {case}: {a} vs {e}");
        }
    }
}

#[test]
fn conv3d_shape_mismatch_and_even_kernel_rejected() {
    let mut tape = Tape::new();
    let input = tape.leaf(Tensor::zeros(vec![2, 3, 3, 5]));
    let w_bad_ch = tape.leaf(Tensor::zeros(vec![1, 3, 1, 1, 1]));
    let b1 = tape.leaf(Tensor::zeros(vec![1]));
    assert!(matches!(
        tape.conv3d(input, w_bad_ch, b1, Padding::Same),
        Err(crate::Error::Dimension(_))
    ));
    let w_even = tape.leaf(Tensor::zeros(vec![1, 2, 2, 1, 1]));
    assert!(matches!(
        tape.conv3d(input, w_even, b1, Padding::Same),
        Err(crate::Error::Config(_))
    ));
    assert!(ConvKernel3D::he_uniform((2, 1, 1), 1, 1, &mut seed::rng(0, "x")).is_err());
}

#[test]
fn conv3d_is_linear_with_zero_bias() {
    let mut rng = seed::rng(3, "conv-linear");
    let x = rand_tensor(vec![2, 3, 3, 8], &mut rng);
    let y = rand_tensor(vec![2, 3, 3, 8], &mut rng);
    let w = rand_tensor(vec![2, 2, 3, 3, 3], &mut rng);
    let b = Tensor::zeros(vec![2]);
    let (alpha, beta) = (0.7, -1.3);
    let run = |inp: Tensor| {
        let mut tape = Tape::new();
        let (i, wn, bn) = (tape.leaf(inp), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let out = tape.conv3d(i, wn, bn, Padding::Same).unwrap();
        tape.value(out).data().to_vec()
    };
    let mixed: Vec<f64> = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &bb)| alpha * a + beta * bb)
        .collect();
    let lhs = run(Tensor::from_vec(vec![2, 3, 3, 8], mixed).unwrap());
    let fx = run(x.clone());
    let fy = run(y.clone());
    for i in 0..lhs.len() {
        assert!((lhs[i] - (alpha * fx[i] + beta * fy[i])).abs() < 1e-9);
    }
}

#[test]
fn avg_pool_constant_and_arithmetic() {
    let mut tape = Tape::new();
    let c = tape.leaf(Tensor::from_vec(vec![1, 2, 2, 4], vec![3.5; 16]).unwrap());
    let out = tape.avg_pool3d(c, (2, 2, 2), (2, 2, 2), Padding::Valid).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| (v - 3.5).abs() < 1e-15));

    let series = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = tape.avg_pool3d(series, (1, 1, 2), (1, 1, 2), Padding::Valid).unwrap();
    assert_eq!(tape.value(out).data(), &[1.5, 3.5]);
}

#[test]
fn avg_pool_matches_windowed_mean_oracle() {
    let mut rng = seed::rng(11, "avgpool");
    let input = rand_tensor(vec![1, 3, 7, 30], &mut rng);
    let mut tape = Tape::new();
    let i = tape.leaf(input.clone());
    let out = tape.avg_pool3d(i, (3, 3, 5), (1, 2, 5), Padding::Valid).unwrap();
    let v = tape.value(out);
    assert_eq!(v.shape(), &[1, 1, 3, 6]);
    for (co, c) in (0..3).map(|c| (c, c * 2)) {
        for (to, t0) in (0..6).map(|t| (t, t * 5)) {
            let mut acc = 0.0;
            for r in 0..3 {
                for cc in c..c + 3 {
                    for t in t0..t0 + 5 {
                        acc += input.data()[(r * 7 + cc) * 30 + t];
                    }
                }
            }
            let got = v.data()[co * 6 + to];
            assert!((got - acc / 45.0).abs() < 1e-12);
        }
    }
}

#[test]
fn avg_pool_same_padding_excludes_pad_from_count() {
    // 1x1x4 series pooled with window 3 stride 1 same: edge means over 2 elements
    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = tape.avg_pool3d(i, (1, 1, 3), (1, 1, 1), Padding::Same).unwrap();
    assert_eq!(tape.value(out).data(), &[1.5, 2.0, 3.0, 3.5]);
}

#[test]
fn pool_zero_stride_rejected() {
    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::zeros(vec![1, 1, 1, 4]));
    assert!(matches!(
        tape.avg_pool3d(i, (1, 1, 2), (1, 1, 0), Padding::Valid),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn max_pool_strided_and_tie_break() {
    let mut tape = Tape::new();
    let series: Vec<f64> = (0..9).map(f64::from).collect();
    let i = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 9], series).unwrap());
    let out = tape.max_pool3d(i, (1, 1, 3), (1, 1, 3), Padding::Valid).unwrap();
    assert_eq!(tape.value(out).data(), &[2.0, 5.0, 8.0]);

    // all-equal window: gradient routed to the first element
    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 3], vec![2.0; 3]).unwrap().with_grad());
    let out = tape.max_pool3d(i, (1, 1, 3), (1, 1, 3), Padding::Valid).unwrap();
    let s = tape.sum(out);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(i).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn max_pool_matches_windowed_max_oracle() {
    let mut rng = seed::rng(13, "maxpool");
    let input = rand_tensor(vec![2, 3, 4, 12], &mut rng);
    let mut tape = Tape::new();
    let i = tape.leaf(input.clone());
    let out = tape.max_pool3d(i, (2, 2, 3), (1, 2, 3), Padding::Valid).unwrap();
    let v = tape.value(out);
    assert_eq!(v.shape(), &[2, 2, 2, 4]);
    let mut idx = 0;
    for ch in 0..2 {
        for r0 in 0..2 {
            for c0 in (0..4).step_by(2).take(2) {
                for t0 in (0..12).step_by(3) {
                    let mut best = f64::NEG_INFINITY;
                    for r in r0..r0 + 2 {
                        for c in c0..c0 + 2 {
                            for t in t0..t0 + 3 {
                                best = best.max(input.data()[((ch * 3 + r) * 4 + c) * 12 + t]);
                            }
                        }
                    }
                    assert_eq!(v.data()[idx], best);
                    idx += 1;
                }
            }
        }
    }
}

#[test]
fn concat_channel_arithmetic_and_identity() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(vec![8, 3, 7, 100]));
    let b = tape.leaf(Tensor::zeros(vec![8, 3, 7, 100]));
    let c = tape.leaf(Tensor::zeros(vec![4, 3, 7, 100]));
    let d = tape.leaf(Tensor::zeros(vec![4, 3, 7, 100]));
    let cat = tape.concat_channels(&[a, b, c, d]).unwrap();
    assert_eq!(tape.value(cat).shape(), &[24, 3, 7, 100]);

    let mut rng = seed::rng(5, "concat");
    let single = rand_tensor(vec![3, 2, 2, 4], &mut rng);
    let mut tape = Tape::new();
    let s = tape.leaf(single.clone());
    let cat = tape.concat_channels(&[s]).unwrap();
    assert_eq!(tape.value(cat).data(), single.data());

    // mismatched trailing extents rejected
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(vec![2, 3, 7, 100]));
    let b = tape.leaf(Tensor::zeros(vec![2, 3, 7, 99]));
    assert!(matches!(tape.concat_channels(&[a, b]), Err(crate::Error::Dimension(_))));
}

#[test]
fn concat_gradient_is_split_identity() {
    let mut rng = seed::rng(6, "concat-grad");
    let x = rand_tensor(vec![2, 2, 2, 3], &mut rng).with_grad();
    let y = rand_tensor(vec![3, 2, 2, 3], &mut rng).with_grad();
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
    let cat = tape.concat_channels(&[a, b]).unwrap();
    let s = tape.sum(cat);
    tape.backward(s).unwrap();
    assert!(tape.grad(a).unwrap().iter().all(|&g| g == 1.0));
    assert!(tape.grad(b).unwrap().iter().all(|&g| g == 1.0));
    // concat then split-by-offset is the identity
    let catv = tape.value(cat).data().to_vec();
    assert_eq!(&catv[..x.numel()], x.data());
    assert_eq!(&catv[x.numel()..], y.data());
}

#[test]
fn relu_values_and_gradient_mask() {
    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap().with_grad());
    let out = tape.relu(i);
    assert_eq!(tape.value(out).data(), &[0.0, 0.0, 2.0]);
    let s = tape.sum(out);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(i).unwrap(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::from_vec(vec![3], vec![-5.0, -0.1, -2.0]).unwrap());
    let out = tape.relu(i);
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn dense_identity_zero_and_oracle() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
    let eye = tape.leaf(
        Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
    );
    let zero_b = tape.leaf(Tensor::zeros(vec![3]));
    let out = tape.dense(x, eye, zero_b).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, -2.0, 3.0]);

    let zero_w = tape.leaf(Tensor::zeros(vec![2, 3]));
    let cb = tape.leaf(Tensor::from_vec(vec![2], vec![4.0, 4.0]).unwrap());
    let out = tape.dense(x, zero_w, cb).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 4.0]);

    let mut rng = seed::rng(17, "dense");
    let xv = rand_tensor(vec![5], &mut rng);
    let wv = rand_tensor(vec![4, 5], &mut rng);
    let bv = rand_tensor(vec![4], &mut rng);
    let mut tape = Tape::new();
    let (x, w, b) = (tape.leaf(xv.clone()), tape.leaf(wv.clone()), tape.leaf(bv.clone()));
    let out = tape.dense(x, w, b).unwrap();
    for m in 0..4 {
        let mut acc = bv.data()[m];
        for n in 0..5 {
            acc += wv.data()[m * 5 + n] * xv.data()[n];
        }
        assert!((tape.value(out).data()[m] - acc).abs() < 1e-12);
    }
}

#[test]
fn softmax_cross_entropy_uniform_saturated_and_bounds() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(vec![6]));
    let loss = tape.softmax_cross_entropy(z, 2).unwrap();
    assert!((tape.value(loss).item() - 6.0f64.ln()).abs() < 1e-12);

    let mut hot = vec![0.0; 6];
    hot[4] = 30.0;
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::from_vec(vec![6], hot).unwrap());
    let loss = tape.softmax_cross_entropy(z, 4).unwrap();
    assert!(tape.value(loss).item() < 1e-9);

    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(vec![6]));
    assert!(matches!(tape.softmax_cross_entropy(z, 6), Err(crate::Error::Input(_))));
}

#[test]
fn layer_gradients_match_finite_differences() {
    // one composite graph exercising conv, pools, concat, relu, dense, loss
    let mut rng = seed::rng(23, "fd-layers");
    let input = rand_tensor(vec![2, 3, 3, 10], &mut rng);
    let kernel = ConvKernel3D::he_uniform((3, 3, 3), 2, 3, &mut rng).unwrap();
    let dense_w = rand_tensor(vec![4, 3 * 3 * 3 * 5], &mut rng).with_grad();
    let dense_b = rand_tensor(vec![4], &mut rng).with_grad();
    let params = vec![kernel.weights.clone(), kernel.bias.clone(), dense_w, dense_b];

    let report = gradient_check(&params, 1e-4, 99, |p| {
        let mut tape = Tape::new();
        let i = tape.leaf(input.clone());
        let (w, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()));
        let conv = tape.conv3d(i, w, b, Padding::Same)?;
        let act = tape.relu(conv);
        let avg = tape.avg_pool3d(act, (3, 3, 3), (1, 1, 1), Padding::Same)?;
        let mx = tape.max_pool3d(avg, (1, 1, 2), (1, 1, 2), Padding::Valid)?;
        let cat = tape.concat_channels(&[mx])?;
        let flat = tape.flatten(cat);
        let (dw, db) = (tape.leaf(p[2].clone()), tape.leaf(p[3].clone()));
        let logits = tape.dense(flat, dw, db)?;
        let loss = tape.softmax_cross_entropy(logits, 1)?;
        tape.backward(loss)?;
        let grads = [w, b, dw, db]
            .iter()
            .map(|&id| tape.grad(id).unwrap().to_vec())
            .collect();
        Ok((tape.value(loss).item(), grads))
    })
    .unwrap();
    assert!(report.pass, "max rel err {}", report.max_rel_err);
}

#[test]
fn gradient_check_catches_corrupted_backward_rule() {
    let mut rng = seed::rng(29, "fd-negative");
    let w = rand_tensor(vec![3, 4], &mut rng).with_grad();
    let b = rand_tensor(vec![3], &mut rng).with_grad();
    let input = rand_tensor(vec![4], &mut rng);
    let report = gradient_check(&[w, b], 1e-4, 100, |p| {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let (w, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()));
        let logits = tape.dense(x, w, b)?;
        let loss = tape.softmax_cross_entropy(logits, 0)?;
        tape.backward(loss)?;
        // deliberately corrupted rule: weight gradient scaled by 1.05
        let gw: Vec<f64> = tape.grad(w).unwrap().iter().map(|g| g * 1.05).collect();
        Ok((tape.value(loss).item(), vec![gw, tape.grad(b).unwrap().to_vec()]))
    })
    .unwrap();
    assert!(!report.pass);
}

#[test]
fn forward_is_deterministic_for_a_seed() {
    let run = || {
        let mut rng = seed::rng(31, "determinism");
        let input = rand_tensor(vec![2, 3, 3, 12], &mut rng);
        let kernel = ConvKernel3D::he_uniform((3, 3, 5), 2, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let i = tape.leaf(input);
        let (w, b) = tape.kernel(&kernel);
        let out = tape.conv3d(i, w, b, Padding::Same).unwrap();
        tape.value(out).data().to_vec()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b, "bit-identical outputs for identical seeds");
}
