use super::*;
use crate::blocks::{build_backbone, ModelConfig};
use crate::error::Error;
use crate::params::HasParams;
use crate::tensor::Tensor;

#[test]
fn dataset_is_deterministic_and_stratified() {
    let a = synth_dataset(3, 100, 8, 2).unwrap();
    let b = synth_dataset(3, 100, 8, 2).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.label == y.label && x.image.data() == y.image.data()));
    assert_eq!(a.iter().filter(|s| s.label == 0).count(), 50);
    assert_eq!(a.iter().filter(|s| s.label == 1).count(), 50);
    let c = synth_dataset(4, 100, 8, 2).unwrap();
    assert_ne!(a[0].image.data(), c[0].image.data());
    assert!(matches!(synth_dataset(0, 0, 8, 2), Err(Error::Usage(_))));
}

#[test]
fn class_brightness_separates_by_more_than_three_noise_sigmas() {
    let data = synth_dataset(11, 200, 16, 2).unwrap();
    let class_mean = |k: usize| {
        let v: Vec<f64> = data
            .iter()
            .filter(|s| s.label == k)
            .map(|s| s.image.data().iter().sum::<f64>() / s.image.numel() as f64)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!((class_mean(1) - class_mean(0)).abs() > 3.0 * NOISE_STD);
}

#[test]
fn cross_entropy_examples() {
    let uniform = Tensor::new(vec![0.3; 4], &[4]).unwrap();
    assert!((cross_entropy(&uniform, 2).unwrap().item().unwrap() - 4f64.ln()).abs() < 1e-15);
    let peaked = Tensor::new(vec![10.0, 0.0], &[2]).unwrap();
    let expect = (-10f64).exp().ln_1p();
    let got = cross_entropy(&peaked, 0).unwrap().item().unwrap();
    assert!((got - expect).abs() < 1e-12 * expect && (got - 4.54e-5).abs() < 1e-7);
    assert!(matches!(cross_entropy(&peaked, 2), Err(Error::Usage(_))));
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = Tensor::param(vec![0.5, -1.0, 2.0, 0.1], &[4]).unwrap();
    cross_entropy(&logits, 1).unwrap().backward().unwrap();
    let g = logits.grad().unwrap();
    let z: f64 = logits.data().iter().map(|v| v.exp()).sum();
    for (i, &v) in logits.data().iter().enumerate() {
        let expect = v.exp() / z - if i == 1 { 1.0 } else { 0.0 };
        assert!((g.data()[i] - expect).abs() < 1e-15);
    }
    let report = finite_diff_gradcheck(|x| cross_entropy(&x[0], 1), &[logits.detach()], 1e-6).unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn adamw_examples() {
    let p = Tensor::param(vec![1.0], &[1]).unwrap();
    let one = Tensor::ones(&[1]);
    let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, ..AdamWConfig::default() };
    let out = AdamW::new(cfg).step(std::slice::from_ref(&p), std::slice::from_ref(&one)).unwrap();
    assert!((out[0].item().unwrap() - 0.9).abs() < 1e-8);

    let zero = Tensor::zeros(&[1]);
    let out = AdamW::new(cfg).step(std::slice::from_ref(&p), std::slice::from_ref(&zero)).unwrap();
    assert_eq!(out[0].item().unwrap(), 1.0);

    let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.05, ..AdamWConfig::default() };
    let out = AdamW::new(cfg).step(std::slice::from_ref(&p), &[zero]).unwrap();
    assert!((out[0].item().unwrap() - 0.995).abs() < 1e-15);

    let mut opt = AdamW::new(cfg);
    assert!(matches!(opt.step(std::slice::from_ref(&p), &[Tensor::zeros(&[2])]), Err(Error::Usage(_))));
    assert!(matches!(opt.step(&[p], &[]), Err(Error::Usage(_))));
}

#[test]
fn adamw_second_step_by_hand() {
    let cfg = AdamWConfig { lr: 0.01, weight_decay: 0.1, ..AdamWConfig::default() };
    let mut opt = AdamW::new(cfg);
    let p0 = Tensor::param(vec![2.0], &[1]).unwrap();
    let p1 = opt.step(&[p0], &[Tensor::full(&[1], 0.5).unwrap()]).unwrap();
    let p2 = opt.step(&p1, &[Tensor::full(&[1], -1.0).unwrap()]).unwrap();
    let (b1, b2): (f64, f64) = (0.9, 0.999);
    let mut p: f64 = 2.0;
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in [(1, 0.5), (2, -1.0)] {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p = p - 0.01 * 0.1 * p - 0.01 * mh / (vh.sqrt() + 1e-8);
    }
    assert!((p2[0].item().unwrap() - p).abs() < 1e-15);
    assert_eq!(opt.steps(), 2);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
    assert!((cosine_lr(1e-3, 50, 100) - 5e-4).abs() < 1e-18);
    assert!(cosine_lr(1e-3, 100, 100).abs() < 1e-18);
    assert!(cosine_lr(1.0, 30, 100) > cosine_lr(1.0, 31, 100));
}

#[test]
fn gradcheck_linear_closure_is_exact() {
    let a = Tensor::new(vec![0.5, -2.0, 3.0], &[3, 1]).unwrap();
    let x = Tensor::new(vec![1.0, 2.0, -1.0], &[1, 3]).unwrap();
    let r = finite_diff_gradcheck(|xs| xs[0].matmul(&a)?.sum_all(), &[x], 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-10, "{r:?}");
    assert_eq!(r.checked, 3);
}

#[test]
fn gradcheck_reports_worst_coordinate() {
    let x = Tensor::new(vec![1.0, 0.0, -2.0], &[3]).unwrap();
    let square = |xs: &[Tensor]| xs[0].mul(&xs[0])?.add_scalar(1e-300)?.sum_all();
    let r = finite_diff_gradcheck(square, std::slice::from_ref(&x), 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-8);
    let wrong = |xs: &[Tensor]| -> crate::Result<Tensor> {
        // detaching the second input hides part of the dependence from the tape
        let fixed = xs[1].detach();
        xs[0].mul(&fixed)?.add(&xs[1])?.sum_all()
    };
    let y = Tensor::new(vec![3.0, 4.0, 5.0], &[3]).unwrap();
    let r = finite_diff_gradcheck(wrong, &[x, y], 1e-6).unwrap();
    assert_eq!(r.input, 1);
    assert_eq!(r.index, 2);
    assert!((r.numeric - (-1.0)).abs() < 1e-6 && (r.analytic - 1.0).abs() < 1e-12);
}

#[test]
fn gradcheck_usage_errors() {
    let x = Tensor::ones(&[2]);
    assert!(matches!(finite_diff_gradcheck(|xs| Ok(xs[0].clone()), std::slice::from_ref(&x), 1e-6), Err(Error::Usage(_))));
    assert!(matches!(finite_diff_gradcheck(|xs| xs[0].sum_all(), &[x], 0.0), Err(Error::Usage(_))));
}

fn tiny_trainer(seed: u64) -> Trainer {
    let cfg = ModelConfig::preset("tiny").unwrap();
    let model = build_backbone(&cfg, seed).unwrap();
    let data = synth_dataset(seed, 16, 32, 2).unwrap();
    Trainer::new(model, data, TrainConfig { steps: 10, ..TrainConfig::default() }).unwrap()
}

#[test]
fn zero_steps_gives_initial_record_only() {
    let report = train_loop(&ModelConfig::preset("tiny").unwrap(), &DataConfig::demo(1), &TrainConfig { steps: 0, ..TrainConfig::default() }).unwrap();
    assert!(report.rows.is_empty());
    assert_eq!(report.final_metrics(), report.initial);
    let mut csv = Vec::new();
    report.write_csv_to(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), "step,loss,train_accuracy\n");
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (mut a, mut b) = (tiny_trainer(5), tiny_trainer(5));
    let start = a.evaluate().unwrap().loss;
    let la: Vec<f64> = (0..4).map(|_| a.step().unwrap()).collect();
    let lb: Vec<f64> = (0..4).map(|_| b.step().unwrap()).collect();
    assert_eq!(la, lb);
    assert!(a.evaluate().unwrap().loss < start);
    assert_eq!(a.steps_done(), 4);
}

#[test]
fn injected_infinity_is_reported_with_step() {
    let mut t = tiny_trainer(6);
    t.step().unwrap();
    let mut hit = false;
    t.model.visit_params_mut("", &mut |name, p| {
        if name == "stages.1.blocks.0.ffn.w1" {
            let mut d = p.to_vec();
            d[3] = f64::INFINITY;
            *p = Tensor::from_raw_unchecked(d, p.shape(), true);
            hit = true;
        }
    });
    assert!(hit);
    match t.step() {
        Err(Error::Training { step: 2, source }) => assert!(matches!(*source, Error::NonFinite(_))),
        other => panic!("expected a training error at step 2, got {other:?}"),
    }
}

#[test]
fn mismatched_data_is_a_config_error() {
    let cfg = ModelConfig::preset("tiny").unwrap();
    let data = DataConfig { num_classes: 3, ..DataConfig::demo(0) };
    assert!(matches!(train_loop(&cfg, &data, &TrainConfig::default()), Err(Error::Config(_))));
}
