//! Brute-force reference implementations of the retrieval metrics.

use super::{brute_force, cosine, gaussian, BruteForce};
use pearl_core::matrix::Matrix;
use pearl_core::metrics::{
    f1_per_class, hit_at_k, knn_predict, mrr_at_k, purity_at_k, separation_delta, top_k_neighbors, Weighting,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub queries: Matrix<f64>,
    pub query_labels: Vec<usize>,
    pub pool: Matrix<f64>,
    pub pool_labels: Vec<usize>,
    pub classes: usize,
}

/// Random instance with some exact duplicate pool rows to exercise ties.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=5);
    let d = rng.random_range(1..=16);
    let n_pool = rng.random_range(2 * classes..=200);
    let n_q = rng.random_range(1..=60);
    let mut pool = gaussian(n_pool, d, &mut rng);
    for _ in 0..n_pool / 10 {
        let (a, b) = (rng.random_range(0..n_pool), rng.random_range(0..n_pool));
        let src = pool.row(a).to_vec();
        pool.row_mut(b).copy_from_slice(&src);
    }
    let mut pool_labels: Vec<usize> = (0..n_pool).map(|i| i % classes).collect();
    for l in pool_labels.iter_mut().skip(2 * classes) {
        *l = rng.random_range(0..classes);
    }
    let queries = gaussian(n_q, d, &mut rng);
    let query_labels = (0..n_q).map(|_| rng.random_range(0..classes)).collect();
    Instance {
        queries,
        query_labels,
        pool,
        pool_labels,
        classes,
    }
}

fn ref_purity(bf: &BruteForce, ql: &[usize], pl: &[usize], k: usize) -> f64 {
    let mut s = 0.0;
    for (q, order) in bf.ranked.iter().enumerate() {
        s += order[..k].iter().filter(|&&j| pl[j] == ql[q]).count() as f64 / k as f64;
    }
    s / ql.len() as f64
}

fn ref_hit(bf: &BruteForce, ql: &[usize], pl: &[usize], k: usize) -> f64 {
    let hits = bf.ranked.iter().enumerate().filter(|(q, o)| o[..k].iter().any(|&j| pl[j] == ql[*q])).count();
    hits as f64 / ql.len() as f64
}

fn ref_mrr(bf: &BruteForce, ql: &[usize], pl: &[usize], k: usize) -> f64 {
    let mut s = 0.0;
    for (q, order) in bf.ranked.iter().enumerate() {
        for (r, &j) in order[..k].iter().enumerate() {
            if pl[j] == ql[q] {
                s += 1.0 / (r + 1) as f64;
                break;
            }
        }
    }
    s / ql.len() as f64
}

fn ref_separation(x: &Matrix<f64>, labels: &[usize]) -> f64 {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            let c = cosine(x.row(i), x.row(j));
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    intra / n_intra as f64 - inter / n_inter as f64
}

fn ref_knn(bf: &BruteForce, pl: &[usize], k: usize, classes: usize, distance: bool) -> Vec<usize> {
    bf.ranked
        .iter()
        .enumerate()
        .map(|(q, order)| {
            let mut votes = vec![f64::NEG_INFINITY; classes];
            for &j in &order[..k] {
                let v = if distance { bf.sims[q][j].max(0.0) } else { 1.0 };
                votes[pl[j]] = if votes[pl[j]].is_finite() { votes[pl[j]] + v } else { v };
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn ref_f1(pred: &[usize], actual: &[usize], class: usize) -> f64 {
    let tp = pred.iter().zip(actual).filter(|(p, a)| **p == class && **a == class).count() as f64;
    let pp = pred.iter().filter(|p| **p == class).count() as f64;
    let ap = actual.iter().filter(|a| **a == class).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (pp + ap)
    }
}

/// Compares every metric with the brute-force reference; returns the largest deviation.
pub fn check_instance(inst: &Instance) -> f64 {
    let bf = brute_force(&inst.queries, &inst.pool);
    let k_max = inst.pool.rows().min(20);
    let nl = top_k_neighbors(&inst.queries, &inst.pool, k_max, false).unwrap();
    let (ql, pl) = (&inst.query_labels, &inst.pool_labels);
    for q in 0..ql.len() {
        assert_eq!(nl.neighbors(q), &bf.ranked[q][..k_max], "ranking of query {q}");
    }
    let mut worst = 0.0f64;
    for k in 1..=k_max {
        worst = worst.max((purity_at_k(&nl, ql, pl, k).unwrap() - ref_purity(&bf, ql, pl, k)).abs());
        worst = worst.max((hit_at_k(&nl, ql, pl, k).unwrap() - ref_hit(&bf, ql, pl, k)).abs());
        worst = worst.max((mrr_at_k(&nl, ql, pl, k).unwrap() - ref_mrr(&bf, ql, pl, k)).abs());
        for (w, distance) in [(Weighting::Uniform, false), (Weighting::Distance, true)] {
            let pred = knn_predict(&nl, pl, k, w).unwrap();
            let expected = ref_knn(&bf, pl, k, inst.classes, distance);
            assert_eq!(pred, expected, "kNN {w:?} at k={k}");
            for c in 0..inst.classes {
                worst = worst.max((f1_per_class(&pred, ql, c) - ref_f1(&pred, ql, c)).abs());
            }
        }
    }
    let sep = separation_delta(&inst.pool, pl).unwrap();
    worst.max((sep - ref_separation(&inst.pool, pl)).abs())
}
