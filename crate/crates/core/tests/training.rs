mod common;

use pitune_core::autodiff::{central_difference, Tape, Tensor};
use pitune_core::tasks::realize;
use pitune_core::train::{evaluate, finite_diff_check, train, value_and_grad};
use pitune_core::{build_expert, Error, ExpertConfig, SplitSizes, TaskSpec, TrainConfig};
use proptest::prelude::*;

fn small_config(kind: usize) -> ExpertConfig {
    match kind {
        0 => ExpertConfig::adapter(2).at(vec![1]),
        1 => ExpertConfig::lora(1).at(vec![0]),
        2 => ExpertConfig::prompt(2).at(vec![1]),
        _ => ExpertConfig::bitfit().at(vec![0]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn expert_gradients_match_central_differences(kind in 0usize..4, seed in 0u64..1000, rows in 1usize..4) {
        let bb = common::backbone(seed);
        let e = common::perturb(&build_expert(&small_config(kind), &bb, seed).unwrap(), 0.3, seed);
        let batch = common::random_batch(bb.config(), rows, seed);
        let err = finite_diff_check(&bb, &e, &batch, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "kind {kind}: max relative error {err:e}");
    }
}

#[test]
fn tiny_net_matches_central_differences() {
    // 5 parameters: a 2x2 hidden layer and one output weight
    let x = Tensor::new(vec![3, 2], vec![0.5, -1.0, 1.5, 0.2, -0.7, 0.9]).unwrap();
    let f = |p: &[f64]| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let w1 = tape.param(Tensor::new(vec![2, 2], p[..4].to_vec()).unwrap());
        let w2 = tape.param(Tensor::new(vec![1, 1], vec![p[4]]).unwrap());
        let xv = tape.constant(x.clone());
        let h = tape.matmul(xv, w1);
        let h = tape.tanh(h);
        let h = tape.reshape(h, vec![6, 1]);
        let h = tape.matmul(h, w2);
        let h = tape.mul(h, h);
        let out = tape.sum(h);
        let g = tape.backward(out);
        let mut grad = g.get(w1).unwrap().into_data();
        grad.extend(g.get(w2).unwrap().into_data());
        (tape.value(out).data()[0], grad)
    };
    let p = [0.3, -0.8, 1.1, 0.4, -1.7];
    let (_, analytic) = f(&p);
    let numeric = central_difference(&|q| f(q).0, &p, 1e-5);
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() / a.abs().max(1.0) < 1e-4, "{a} vs {n}");
    }
}

#[test]
fn zero_steps_return_the_input_expert() {
    let bb = common::backbone(1);
    let ds = common::rotation_task("t", 0.0, common::small_sizes(), 1);
    let e = common::perturb(&build_expert(&ExpertConfig::adapter(4), &bb, 1).unwrap(), 0.1, 2);
    let out = train(&bb, &e, &ds, &TrainConfig { steps: 0, ..Default::default() }).unwrap();
    assert_eq!(out.expert, e);
    assert!(out.losses.is_empty());
}

#[test]
fn training_is_deterministic_and_leaves_the_backbone_alone() {
    let dir = tempfile::tempdir().unwrap();
    let bb = common::backbone(2);
    let hash = bb.theta_hash();
    let ds = common::rotation_task("t", 30.0, common::small_sizes(), 3);
    let init = build_expert(&ExpertConfig::lora(2), &bb, 4).unwrap();
    let tc = TrainConfig { steps: 40, seed: 9, ..Default::default() };
    let a = train(&bb, &init, &ds, &tc).unwrap();
    let b = train(&bb, &init, &ds, &tc).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.losses), bits(&b.losses));
    let (pa, pb) = (dir.path().join("a.pifx"), dir.path().join("b.pifx"));
    a.expert.save(&pa).unwrap();
    b.expert.save(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(bb.theta_hash(), hash);

    let other = train(&bb, &init, &ds, &tc.with_seed(10)).unwrap();
    assert_ne!(other.expert.values, a.expert.values);
}

#[test]
fn identical_data_gives_identical_experts() {
    let bb = common::backbone(3);
    let a = common::rotation_task("a", 20.0, common::small_sizes(), 5);
    let mut b = a.clone();
    b.spec.id = "b".into();
    let init = build_expert(&ExpertConfig::adapter(4), &bb, 0).unwrap();
    let tc = TrainConfig { steps: 30, ..Default::default() };
    assert_eq!(train(&bb, &init, &a, &tc).unwrap().expert, train(&bb, &init, &b, &tc).unwrap().expert);
}

/// Nearest-class-mean rule; a lower bound on what a linear classifier gets.
fn nearest_mean_accuracy(x: &Tensor, y: &[usize], means: &[Vec<f64>]) -> f64 {
    let hits = (0..y.len())
        .filter(|&i| {
            let row = x.row(i);
            let d = |m: &Vec<f64>| row.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..means.len()).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap();
            best == y[i]
        })
        .count();
    hits as f64 / y.len() as f64
}

#[test]
fn separable_blobs_are_learned() {
    let mut spec = TaskSpec::rotation("blob", 0.0);
    spec.classes = 2;
    spec.permutation = vec![0, 1];
    let means: Vec<Vec<f64>> = (0..2).map(|c| spec.class_mean(c)).collect();
    let gap: f64 = means[0].iter().zip(&means[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!((gap - 6.0).abs() < 1e-12);
    let ds = realize(&spec, SplitSizes { train: 400, val: 100, test: 100 }, 11).unwrap();
    assert!(nearest_mean_accuracy(&ds.train.x, &ds.train.y, &means) >= 0.99);

    let cfg = pitune_core::BackboneConfig { classes: 2, ..Default::default() };
    let bb = pitune_core::Backbone::init(cfg, 4).unwrap().freeze();
    let init = build_expert(&ExpertConfig::adapter(4), &bb, 7).unwrap();
    let tc = TrainConfig { steps: 300, lr: 0.2, batch_size: 64, seed: 4, ..Default::default() };
    let out = train(&bb, &init, &ds, &tc).unwrap();
    let acc = evaluate(&bb, Some(&out.expert), &ds.train).unwrap().accuracy;
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn divergence_is_reported_with_the_last_finite_state() {
    let bb = common::backbone(4);
    let ds = common::rotation_task("t", 0.0, common::small_sizes(), 4);
    let init = build_expert(&ExpertConfig::bitfit(), &bb, 0).unwrap();
    let tc = TrainConfig { steps: 200, lr: 1e200, ..Default::default() };
    match train(&bb, &init, &ds, &tc) {
        Err(Error::Diverged { last_finite_state, .. }) => {
            assert_eq!(last_finite_state.len(), init.len());
            assert!(last_finite_state.iter().all(|v| v.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn gradient_is_zero_on_a_fully_masked_batch() {
    let bb = common::backbone(5);
    let e = build_expert(&ExpertConfig::adapter(2), &bb, 0).unwrap();
    let mut batch = common::random_batch(bb.config(), 3, 1);
    batch.weights = vec![0.0; 3];
    let (_, g) = value_and_grad(&bb, &e, &batch, 0.1).unwrap();
    assert!(g.0.iter().all(|&v| v == 0.0));
    assert_eq!(finite_diff_check(&bb, &e, &batch, 1e-5).unwrap(), 0.0);
}
