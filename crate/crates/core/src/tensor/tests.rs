use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

// Central differences of `f` around each coordinate of each input,
// compared with the tape gradient. Error is |a - n| / max(1, |a|, |n|).
fn fd_check(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> Tensor) -> f64 {
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::tracked).collect();
    f(&leaves).backward().unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().map(|g| g.to_vec()).unwrap_or(vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let eval = |delta: f64| {
                let mut args: Vec<Tensor> = inputs.to_vec();
                let mut d = args[i].to_vec();
                d[j] += delta;
                args[i] = Tensor::new(d, args[i].shape()).unwrap();
                f(&args).item().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[j] - numeric).abs() / 1f64.max(analytic[j].abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn constructors_validate() {
    assert!(matches!(Tensor::new(vec![1.0, 2.0], &[3]), Err(Error::Dimension(_))));
    assert!(matches!(Tensor::new(vec![], &[2, 0]), Err(Error::Dimension(_))));
    assert!(matches!(Tensor::new(vec![f64::NAN], &[1]), Err(Error::NonFinite(_))));
    let s = Tensor::scalar(3.0).unwrap();
    assert_eq!(s.shape(), &[] as &[usize]);
    assert_eq!(s.item().unwrap(), 3.0);
}

#[test]
fn matmul_identity_and_hand_cases() {
    let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(matmul(&Tensor::eye(2), &a).unwrap().data(), a.data());
    let p = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
    let q = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
    assert_eq!(matmul(&p, &q).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    let a = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut r);
    let b = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut r);
    let c = matmul(&a, &b).unwrap();
    for i in 0..3 {
        for j in 0..5 {
            let mut acc = 0.0;
            for p in 0..4 {
                acc += a.at(&[i, p]) * b.at(&[p, j]);
            }
            assert!((c.at(&[i, j]) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_broadcasts_batch_of_one() {
    let mut r = rng(2);
    let a = Tensor::rand_uniform(&[3, 2, 4], -1.0, 1.0, &mut r);
    let b = Tensor::rand_uniform(&[1, 4, 3], -1.0, 1.0, &mut r);
    let c = matmul(&a, &b).unwrap();
    assert_eq!(c.shape(), &[3, 2, 3]);
    let b2 = b.reshape(&[4, 3]).unwrap();
    for s in 0..3 {
        let slice = Tensor::new(a.data()[s * 8..(s + 1) * 8].to_vec(), &[2, 4]).unwrap();
        let expect = matmul(&slice, &b2).unwrap();
        assert_eq!(&c.data()[s * 6..(s + 1) * 6], expect.data());
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let t = Tensor::new(vec![0.0, 0.0], &[2]).unwrap();
    assert_eq!(softmax_last(&t).unwrap().data(), &[0.5, 0.5]);
    let big = Tensor::new(vec![1000.0; 3], &[3]).unwrap();
    for v in softmax_last(&big).unwrap().data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = [1.0f64, 2.0, 3.0];
    let denom: f64 = x.iter().map(|v| v.exp()).sum();
    let got = softmax_last(&Tensor::new(x.to_vec(), &[3]).unwrap()).unwrap();
    for (g, v) in got.data().iter().zip(x) {
        assert!((g - v.exp() / denom).abs() < 1e-14);
    }
    assert!(matches!(softmax_last(&Tensor::scalar(1.0).unwrap()), Err(Error::Dimension(_))));
}

#[test]
fn hadamard_examples() {
    let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(hadamard(&a, &Tensor::ones(&[2, 2])).unwrap().data(), a.data());
    assert_eq!(hadamard(&a, &Tensor::zeros(&[2, 2])).unwrap().data(), &[0.0; 4]);
    let b = m(&[&[2.0, 0.0], &[0.0, 2.0]]);
    assert_eq!(hadamard(&a, &b).unwrap().data(), &[2.0, 0.0, 0.0, 8.0]);
    assert!(matches!(hadamard(&a, &Tensor::zeros(&[3])), Err(Error::Dimension(_))));
    // leading-batch and scalar broadcasting
    let batched = hadamard(&Tensor::ones(&[3, 2, 2]), &a).unwrap();
    assert_eq!(&batched.data()[8..], a.data());
    let scaled = hadamard(&a, &Tensor::scalar(2.0).unwrap()).unwrap();
    assert_eq!(scaled.data(), &[2.0, 4.0, 6.0, 8.0]);
}

fn delta_kernel(c: usize, k: usize) -> Tensor {
    let mut d = vec![0.0; c * k * k];
    for ch in 0..c {
        d[ch * k * k + (k / 2) * k + k / 2] = 1.0;
    }
    Tensor::new(d, &[c, k, k]).unwrap()
}

fn dwconv_oracle(x: &Tensor, w: &Tensor) -> Vec<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[1];
    let r = (k / 2) as isize;
    let mut out = vec![0.0; c * h * wd];
    for ch in 0..c {
        for y in 0..h as isize {
            for xx in 0..wd as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sy, sx) = (y + dy, xx + dx);
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < wd as isize {
                            acc += w.at(&[ch, (dy + r) as usize, (dx + r) as usize])
                                * x.at(&[ch, sy as usize, sx as usize]);
                        }
                    }
                }
                out[(ch * h + y as usize) * wd + xx as usize] = acc;
            }
        }
    }
    out
}

#[test]
fn depthwise_examples() {
    let mut r = rng(3);
    let x = Tensor::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
    assert_eq!(depthwise_conv2d(&x, &delta_kernel(2, 3)).unwrap().data(), x.data());

    let ones = depthwise_conv2d(&Tensor::ones(&[1, 5, 5]), &Tensor::ones(&[1, 3, 3])).unwrap();
    assert_eq!(ones.at(&[0, 2, 2]), 9.0);
    assert_eq!(ones.at(&[0, 0, 0]), 4.0);
    assert_eq!(ones.at(&[0, 4, 4]), 4.0);
    assert_eq!(ones.at(&[0, 0, 2]), 6.0);

    let w = Tensor::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut r);
    let got = depthwise_conv2d(&x, &w).unwrap();
    for (a, b) in got.data().iter().zip(dwconv_oracle(&x, &w)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(
        depthwise_conv2d(&x, &Tensor::zeros(&[2, 2, 2])),
        Err(Error::Config(_))
    ));
}

#[test]
fn strided_conv_matches_loop_oracle() {
    let mut r = rng(4);
    let x = Tensor::rand_uniform(&[3, 6, 6], -1.0, 1.0, &mut r);
    let w = Tensor::rand_uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
    let y = x.conv2d(&w, 2, 1, 1).unwrap();
    assert_eq!(y.shape(), &[4, 3, 3]);
    for co in 0..4 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = 0.0;
                for ci in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..6).contains(&iy) && (0..6).contains(&ix) {
                                acc += w.at(&[co, ci, ky, kx]) * x.at(&[ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                assert!((y.at(&[co, oy, ox]) - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn backward_simple_rules() {
    let a = Tensor::param(vec![1.0, -2.0, 3.0, 0.5], &[2, 2]).unwrap();
    a.sum_all().unwrap().backward().unwrap();
    assert_eq!(a.grad().unwrap().data(), &[1.0; 4]);

    let a = Tensor::param(vec![1.0, -2.0, 3.0, 0.5], &[2, 2]).unwrap();
    a.mul(&a).unwrap().sum_all().unwrap().backward().unwrap();
    assert_eq!(a.grad().unwrap().data(), &[2.0, -4.0, 6.0, 1.0]);
}

#[test]
fn backward_usage_errors() {
    let a = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(a.scale(2.0).unwrap().backward(), Err(Error::Usage(_))));
    let detached = Tensor::ones(&[2]).sum_all().unwrap();
    assert!(matches!(detached.backward(), Err(Error::Usage(_))));

    let loss = a.sum_all().unwrap();
    loss.backward().unwrap();
    assert!(matches!(loss.backward(), Err(Error::Usage(_))));
    loss.reset_backward();
    loss.backward().unwrap();
    assert_eq!(a.grad().unwrap().data(), &[2.0, 2.0]);
    a.zero_grad();
    assert!(a.grad().is_none());
}

#[test]
fn tape_orders_operands_before_consumers() {
    let a = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    let b = a.mul(&a).unwrap();
    let loss = b.add(&a).unwrap().sum_all().unwrap();
    let tape = GradTape::record(&loss).unwrap();
    assert_eq!(tape.len(), 4);
    assert_eq!(tape.leaves().count(), 1);
}

#[test]
fn attention_chain_matches_finite_differences() {
    let mut r = rng(5);
    let q = Tensor::rand_uniform(&[3, 2], -2.0, 2.0, &mut r);
    let k = Tensor::rand_uniform(&[3, 2], -2.0, 2.0, &mut r);
    let v = Tensor::rand_uniform(&[3, 2], -2.0, 2.0, &mut r);
    let err = fd_check(&[q, k, v], |t| {
        let s = t[0].matmul(&t[1].transpose_last2().unwrap()).unwrap();
        s.softmax_last().unwrap().matmul(&t[2]).unwrap().sum_all().unwrap()
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn no_grad_suppresses_recording() {
    let a = Tensor::param(vec![1.0], &[1]).unwrap();
    let b = no_grad(|| a.scale(2.0).unwrap());
    assert!(!b.requires_grad());
    assert!(is_grad_enabled());
}

#[test]
fn dropping_long_chain_does_not_overflow() {
    let mut t = Tensor::param(vec![1.0], &[1]).unwrap();
    for _ in 0..200_000 {
        t = t.add_scalar(0.0).unwrap();
    }
    drop(t);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let logits = Tensor::zeros(&[3]);
    assert!(matches!(logits.cross_entropy(3), Err(Error::Usage(_))));
    let l = logits.cross_entropy(1).unwrap().item().unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-15);
}

fn arb_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unary_and_binary_ops_pass_gradcheck(a in arb_values(12), b in arb_values(12), w in arb_values(4)) {
        let a = Tensor::new(a, &[3, 4]).unwrap();
        let b = Tensor::new(b, &[3, 4]).unwrap();
        let w = Tensor::new(w, &[4]).unwrap();
        let err = fd_check(&[a, b, w], |t| {
            let x = t[0].mul(&t[1]).unwrap().sub(&t[2]).unwrap();
            let y = x.gelu().unwrap().layer_norm(&t[2], &t[2].scale(0.5).unwrap(), 1e-5).unwrap();
            let z = y.softmax_last().unwrap().mul(&t[0]).unwrap();
            let p = z.permute(&[1, 0]).unwrap().mean_axis(1).unwrap();
            p.mul(&t[2]).unwrap().sum_all().unwrap()
        });
        prop_assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn matmul_and_conv_pass_gradcheck(a in arb_values(24), b in arb_values(24), k in arb_values(18)) {
        let a = Tensor::new(a, &[2, 3, 4]).unwrap();
        let b = Tensor::new(b, &[4, 6]).unwrap();
        let k = Tensor::new(k, &[2, 1, 3, 3]).unwrap();
        let err = fd_check(&[a, b, k], |t| {
            let y = t[0].matmul(&t[1]).unwrap();
            let img = y.reshape(&[2, 3, 6]).unwrap();
            let c = img.conv2d(&t[2], 2, 1, 2).unwrap();
            let parts = [c.narrow_last(0, 2).unwrap(), c.narrow_last(1, 2).unwrap()];
            let joined = Tensor::concat_last(&parts).unwrap();
            let flat = joined.reshape(&[joined.numel()]).unwrap();
            flat.cross_entropy(1).unwrap()
        });
        prop_assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(x in arb_values(15), shift in -50.0f64..50.0) {
        let t = Tensor::new(x.clone(), &[3, 5]).unwrap();
        let s = t.softmax_last().unwrap();
        for row in s.data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        let shifted = t.add_scalar(shift).unwrap().softmax_last().unwrap();
        prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_is_associative(m in 1usize..16, k in 1usize..16, n in 1usize..16, p in 1usize..16, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = Tensor::rand_uniform(&[m, k], -1.0, 1.0, &mut r);
        let b = Tensor::rand_uniform(&[k, n], -1.0, 1.0, &mut r);
        let c = Tensor::rand_uniform(&[n, p], -1.0, 1.0, &mut r);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
    }
}
