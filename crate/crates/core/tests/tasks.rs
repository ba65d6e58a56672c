mod common;

use std::collections::BTreeSet;

use pitune_core::tasks::{few_shot, ground_truth_similarity, make_family, pretrain_backbone, realize, FamilyRequest};
use pitune_core::train::{evaluate, train};
use pitune_core::{build_expert, BackboneConfig, ExpertConfig, Split, SplitSizes, TaskSpec, TrainConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn ground_truth_decreases_with_angle_gap(a in 0.0f64..1.0, d1 in 0.0f64..1.5, extra in 1e-6f64..1.5) {
        let base = TaskSpec::rotation("a", a);
        let near = TaskSpec::rotation("b", a + d1);
        let far = TaskSpec::rotation("c", a + (d1 + extra).min(std::f64::consts::PI));
        prop_assume!(d1 + extra <= std::f64::consts::PI);
        prop_assert!(ground_truth_similarity(&base, &near) > ground_truth_similarity(&base, &far));
    }

    #[test]
    fn realization_is_a_pure_function(seed in 0u64..1000, deg in 0.0f64..360.0) {
        let spec = TaskSpec::rotation("t", deg.to_radians());
        let sizes = SplitSizes { train: 20, val: 5, test: 5 };
        prop_assert_eq!(realize(&spec, sizes, seed).unwrap(), realize(&spec, sizes, seed).unwrap());
    }
}

#[test]
fn family_ground_truth_is_symmetric_and_ordered() {
    let fam = make_family(&FamilyRequest::rotations(0, &[0.0, 15.0, 45.0, 90.0])).unwrap();
    let g = &fam.ground_truth;
    for i in 0..4 {
        assert_eq!(g[i][i], 1.0);
        for j in 0..4 {
            assert_eq!(g[i][j], g[j][i]);
        }
    }
    assert!(g[0][1] > g[0][2] && g[0][2] > g[0][3]);
    assert!(g[0][3].abs() < 1e-15);
}

#[test]
fn class_means_match_monte_carlo() {
    // about 10k draws per class, every coordinate checked
    let spec = TaskSpec::rotation("t", 0.7);
    let ds = realize(&spec, SplitSizes { train: 50_000, val: 1, test: 1 }, 3).unwrap();
    for c in 0..spec.classes {
        let rows: Vec<usize> = (0..ds.train.len()).filter(|&i| ds.train.y[i] == c).collect();
        assert!(rows.len() > 9_000);
        let want = spec.class_mean(c);
        for (d, &m) in want.iter().enumerate() {
            let got = rows.iter().map(|&i| ds.train.x.row(i)[d]).sum::<f64>() / rows.len() as f64;
            assert!((got - m).abs() < 0.05, "class {c} dim {d}: {got} vs {m}");
        }
    }
}

fn row_set(s: &Split) -> BTreeSet<Vec<u64>> {
    (0..s.len()).map(|i| s.x.row(i).iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn few_shot_subsets() {
    let ds = common::rotation_task("t", 10.0, SplitSizes { train: 500, val: 50, test: 50 }, 1);
    let a = few_shot(&ds, 16, 1).unwrap();
    let b = few_shot(&ds, 16, 2).unwrap();
    assert_eq!(a.train.len(), 80);
    assert_eq!((a.val.clone(), a.test.clone()), (ds.val.clone(), ds.test.clone()));
    let (sa, sb, all) = (row_set(&a.train), row_set(&b.train), row_set(&ds.train));
    assert!(sa.is_subset(&all) && sb.is_subset(&all));
    // 80 of ~500 rows drawn twice: a chance overlap of about 13 rows
    let overlap = sa.intersection(&sb).count();
    assert!(overlap < 40, "overlap {overlap}");
    assert_ne!(sa, sb);

    let smallest = (0..5).map(|c| ds.train.y.iter().filter(|&&y| y == c).count()).min().unwrap();
    let per_class = few_shot(&ds, smallest, 0).unwrap();
    for c in 0..5 {
        assert_eq!(per_class.train.y.iter().filter(|&&y| y == c).count(), smallest);
    }
    let tiny = common::rotation_task("u", 0.0, SplitSizes { train: 40, val: 5, test: 5 }, 2);
    let counts: Vec<usize> = (0..5).map(|c| tiny.train.y.iter().filter(|&&y| y == c).count()).collect();
    if counts.iter().all(|&n| n == counts[0]) {
        assert_eq!(row_set(&few_shot(&tiny, counts[0], 0).unwrap().train), row_set(&tiny.train));
    }
    let err = few_shot(&tiny, 1000, 0).unwrap_err().to_string();
    assert!(err.contains("class"), "{err}");
}

#[test]
fn pretraining_fits_the_held_in_mixture_and_stays_frozen() {
    let pool: Vec<_> = [355.0, 5.0]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            common::rotation_task(&format!("p{i}"), d, SplitSizes { train: 1000, val: 100, test: 300 }, i as u64)
        })
        .collect();
    let bb = pretrain_backbone(BackboneConfig::default(), &pool, &TrainConfig::pretraining()).unwrap();
    assert!(bb.is_frozen());
    let pooled = Split::concat(&pool.iter().map(|t| &t.test).collect::<Vec<_>>()).unwrap();
    let acc = evaluate(&bb, None, &pooled).unwrap().accuracy;
    assert!(acc >= 0.8, "pooled accuracy {acc}");

    let hash = bb.theta_hash();
    let target = common::rotation_task("t", 40.0, common::small_sizes(), 9);
    let init = build_expert(&ExpertConfig::adapter(8), &bb, 0).unwrap();
    train(&bb, &init, &target, &TrainConfig { steps: 50, ..Default::default() }).unwrap();
    assert_eq!(bb.theta_hash(), hash);
}

#[test]
fn permuted_tasks_never_reach_the_pretraining_pool() {
    let req = FamilyRequest {
        permutations: vec![(0..5).collect(), vec![1, 2, 3, 4, 0]],
        count: 4,
        ..FamilyRequest::rotations(0, &[0.0, 20.0])
    };
    let fam = make_family(&req).unwrap();
    let data: Vec<_> =
        fam.specs.iter().map(|s| realize(s, SplitSizes { train: 10, val: 2, test: 2 }, 0).unwrap()).collect();
    let held_in: Vec<_> = data.iter().filter(|d| d.spec.is_identity_permutation()).cloned().collect();
    assert_eq!(held_in.len(), 2);
    assert!(pretrain_backbone(BackboneConfig::default(), &data, &TrainConfig::pretraining().with_steps(1)).is_err());
    assert!(pretrain_backbone(BackboneConfig::default(), &held_in, &TrainConfig::pretraining().with_steps(1)).is_ok());
}
