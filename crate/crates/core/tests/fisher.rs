mod common;

use pitune_core::autodiff::{Tape, Tensor};
use pitune_core::fisher::{
    cosine, empirical_fisher_diag, fisher_diag, rank_against, similarity_matrix, top_k, EmbeddingPool,
    SoftmaxRegression, TaskEmbedding,
};
use pitune_core::rng::labelled_rng;
use pitune_core::{build_expert, Error, ExpertConfig, ParameterVector, Split};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_model(seed: u64, dim: usize, classes: usize) -> SoftmaxRegression {
    let mut rng = labelled_rng(seed, "model");
    let w = (0..(dim + 1) * classes).map(|_| rng.random_range(-1.5..1.5)).collect();
    SoftmaxRegression::new(dim, classes, w).unwrap()
}

fn random_split(seed: u64, n: usize, dim: usize, classes: usize) -> Split {
    let mut rng = labelled_rng(seed, "split");
    let x = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Split { x: Tensor::new(vec![n, dim], x).unwrap(), y }
}

/// Per-sample gradients through the tape, accumulated as full outer
/// products; returns the diagonal.
fn brute_force_diag(m: &SoftmaxRegression, split: &Split) -> Vec<f64> {
    let p = m.weights.len();
    let mut outer = vec![vec![0.0; p]; p];
    for i in 0..split.len() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::new(vec![m.dim, m.classes], m.weights[..m.dim * m.classes].to_vec()).unwrap());
        let b = tape.param(Tensor::new(vec![m.classes], m.weights[m.dim * m.classes..].to_vec()).unwrap());
        let x = tape.constant(Tensor::new(vec![1, m.dim], split.x.row(i).to_vec()).unwrap());
        let z = tape.matmul(x, w);
        let z = tape.add_bcast(z, b);
        let nll = tape.cross_entropy(z, &[split.y[i]], &[1.0], 0.0);
        let g = tape.backward(nll);
        let mut grad = g.get(w).unwrap().into_data();
        grad.extend(g.get(b).unwrap().into_data());
        for a in 0..p {
            for c in 0..p {
                outer[a][c] += grad[a] * grad[c];
            }
        }
    }
    (0..p).map(|a| outer[a][a] / split.len() as f64).collect()
}

#[test]
fn fisher_matches_the_outer_product_oracle() {
    for trial in 0..10u64 {
        let (dim, classes) = (2 + trial as usize % 3, 2 + trial as usize % 3);
        let m = random_model(trial, dim, classes);
        assert!(m.weights.len() <= 20);
        let split = random_split(trial, 20 + 8 * trial as usize, dim, classes);
        let (got, s) = empirical_fisher_diag(&m, &split, usize::MAX).unwrap();
        assert_eq!(s, split.len());
        for (a, b) in got.iter().zip(brute_force_diag(&m, &split)) {
            assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn duplicating_every_sample_changes_nothing() {
    let m = random_model(3, 3, 3);
    let split = random_split(4, 30, 3, 3);
    let doubled = Split::concat(&[&split, &split]).unwrap();
    let (a, _) = empirical_fisher_diag(&m, &split, usize::MAX).unwrap();
    let (b, _) = empirical_fisher_diag(&m, &doubled, usize::MAX).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
    }
}

#[test]
fn perfect_fit_gives_a_flagged_zero_embedding() {
    // saturated logits: P(y|x) rounds to exactly 1
    let m = SoftmaxRegression::new(1, 2, vec![0.0, 0.0, 800.0, -800.0]).unwrap();
    let split = Split { x: Tensor::new(vec![3, 1], vec![0.1, 0.2, 0.3]).unwrap(), y: vec![0, 0, 0] };
    let (f, _) = empirical_fisher_diag(&m, &split, 10).unwrap();
    assert!(f.iter().all(|&v| v == 0.0));
    let emb = TaskEmbedding { task_id: "fit".into(), config_hash: "h".into(), values: ParameterVector(f), samples: 3 };
    assert!(emb.is_zero());
    assert!(matches!(cosine(&emb, &emb), Err(Error::DegenerateEmbedding(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sample_order_does_not_change_a_bit(seed in 0u64..10_000) {
        let m = random_model(seed, 4, 3);
        let split = random_split(seed, 40, 4, 3);
        let mut idx: Vec<usize> = (0..split.len()).collect();
        idx.shuffle(&mut labelled_rng(seed, "shuffle"));
        let (a, _) = empirical_fisher_diag(&m, &split, usize::MAX).unwrap();
        let (b, _) = empirical_fisher_diag(&m, &split.subset(&idx), usize::MAX).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cosine_laws(a in prop::collection::vec(0.0f64..10.0, 6), b in prop::collection::vec(0.0f64..10.0, 6), lambda in 1e-3f64..1e3) {
        prop_assume!(a.iter().any(|&v| v > 0.0) && b.iter().any(|&v| v > 0.0));
        let e = |id: &str, v: &[f64]| TaskEmbedding { task_id: id.into(), config_hash: "h".into(), values: ParameterVector(v.to_vec()), samples: 1 };
        let (ea, eb) = (e("a", &a), e("b", &b));
        let scaled: Vec<f64> = b.iter().map(|v| v * lambda).collect();
        let c = cosine(&ea, &eb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&eb, &ea).unwrap());
        prop_assert!((cosine(&ea, &ea).unwrap() - 1.0).abs() < 1e-15);
        prop_assert!((cosine(&ea, &e("s", &scaled)).unwrap() - c).abs() < 1e-12);
    }
}

fn embedding_pool(seed: u64, n: usize) -> EmbeddingPool {
    let mut rng = labelled_rng(seed, "pool");
    (0..n)
        .map(|i| {
            let id = format!("t{i:02}");
            let v = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            (id.clone(), TaskEmbedding { task_id: id, config_hash: "h".into(), values: ParameterVector(v), samples: 1 })
        })
        .collect()
}

#[test]
fn top_k_is_a_prefix_of_the_similarity_ranking() {
    let pool = embedding_pool(1, 7);
    let g = similarity_matrix(&pool).unwrap();
    for (row, target) in g.ids.iter().enumerate() {
        let mut full: Vec<(String, f64)> =
            g.ids.iter().enumerate().filter(|(j, _)| *j != row).map(|(j, id)| (id.clone(), g.matrix[row][j])).collect();
        full.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for k in 0..pool.len() {
            assert_eq!(top_k(target, &pool, k).unwrap(), full[..k].to_vec());
        }
        assert_eq!(rank_against(&pool[target], &pool).unwrap(), full);
        assert!(matches!(top_k(target, &pool, pool.len()), Err(Error::Retrieval(_))));
    }
}

#[test]
fn three_task_matrix_matches_brute_force() {
    let pool = embedding_pool(2, 3);
    let g = similarity_matrix(&pool).unwrap();
    for (i, a) in g.ids.iter().enumerate() {
        for (j, b) in g.ids.iter().enumerate() {
            let (x, y) = (&pool[a].values.0, &pool[b].values.0);
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let n = |v: &[f64]| v.iter().map(|p| p * p).sum::<f64>().sqrt();
            let want = if i == j { 1.0 } else { dot / (n(x) * n(y)) };
            assert!((g.matrix[i][j] - want).abs() < 1e-15);
            assert_eq!(g.matrix[i][j], g.matrix[j][i]);
        }
    }
}

#[test]
fn expert_embeddings_are_nonnegative_and_order_free() {
    let bb = common::backbone(6);
    let e = common::perturb(&build_expert(&ExpertConfig::adapter(2), &bb, 1).unwrap(), 0.2, 3);
    let ds = common::rotation_task("t", 15.0, common::small_sizes(), 2);
    let split = ds.train.subset(&(0..24).collect::<Vec<_>>());
    let rev = split.subset(&(0..24).rev().collect::<Vec<_>>());
    let a = fisher_diag(&bb, &e, "t", &split, 1024).unwrap();
    let b = fisher_diag(&bb, &e, "t", &rev, 1024).unwrap();
    assert_eq!(a, b);
    assert!(a.values.0.iter().all(|&v| v >= 0.0));
    assert!(!a.is_zero());
    assert_eq!(a.config_hash, e.config.hash());
}
