//! Cosine retrieval and neighborhood metrics.
//!
//! Every neighbor ranking sorts by descending cosine similarity and breaks
//! ties by ascending pool index, so results do not depend on evaluation order.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocessing::{l2_normalize, ZERO_NORM};
use crate::scalar::{dot, norm, Scalar};

/// `aᵀb / (‖a‖‖b‖)`, or 0 when either norm is below 1e-12.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (norm(a), norm(b));
    let eps = T::lit(ZERO_NORM);
    if na < eps || nb < eps {
        return T::zero();
    }
    dot(a, b) / (na * nb)
}

/// Top-`k` pool neighbors of each query, row-major `queries × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList<T> {
    pub k: usize,
    pub indices: Vec<usize>,
    pub similarities: Vec<T>,
}

impl<T: Scalar> NeighborList<T> {
    pub fn queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn sims(&self, q: usize) -> &[T] {
        &self.similarities[q * self.k..(q + 1) * self.k]
    }
}

#[inline]
fn rank_order<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Exact cosine `k`-nearest-neighbor search.
///
/// With `leave_one_out`, `queries` and `pool` must be the same rows and each
/// query's own index is excluded.
pub fn top_k_neighbors<T: Scalar>(
    queries: &Matrix<T>,
    pool: &Matrix<T>,
    k: usize,
    leave_one_out: bool,
) -> Result<NeighborList<T>> {
    if queries.cols() != pool.cols() {
        return Err(Error::Shape(format!(
            "query dimension {} != pool dimension {}",
            queries.cols(),
            pool.cols()
        )));
    }
    if leave_one_out && queries.rows() != pool.rows() {
        return Err(Error::InvalidArgument("leave-one-out requires queries to be the pool".into()));
    }
    let available = pool.rows() - usize::from(leave_one_out && pool.rows() > 0);
    if k > available {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds pool size {available}")));
    }
    if k == 0 {
        return Ok(NeighborList {
            k,
            indices: vec![],
            similarities: vec![],
        });
    }
    let q = l2_normalize(queries);
    let p = l2_normalize(pool);
    let per_query: Vec<Vec<(T, usize)>> = (0..q.rows())
        .into_par_iter()
        .map(|i| {
            let qi = q.row(i);
            let mut cand: Vec<(T, usize)> = (0..p.rows())
                .filter(|&j| !(leave_one_out && j == i))
                .map(|j| (dot(qi, p.row(j)), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, rank_order);
                cand.truncate(k);
            }
            cand.sort_by(rank_order);
            cand
        })
        .collect();
    let mut indices = Vec::with_capacity(q.rows() * k);
    let mut similarities = Vec::with_capacity(q.rows() * k);
    for cand in per_query {
        for (s, j) in cand {
            indices.push(j);
            similarities.push(s);
        }
    }
    Ok(NeighborList { k, indices, similarities })
}

fn check_k<T>(nl: &NeighborList<T>, query_labels: &[usize], k: usize) -> Result<()> {
    if k == 0 || k > nl.k {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", nl.k)));
    }
    if query_labels.len() * nl.k != nl.indices.len() {
        return Err(Error::Shape(format!(
            "{} query labels for {} neighbor rows",
            query_labels.len(),
            nl.indices.len() / nl.k
        )));
    }
    Ok(())
}

fn mean_over_queries<T: Scalar>(
    nl: &NeighborList<T>,
    query_labels: &[usize],
    pool_labels: &[usize],
    k: usize,
    score: impl Fn(&[usize], usize) -> f64,
) -> Result<f64> {
    check_k(nl, query_labels, k)?;
    if query_labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = query_labels
        .iter()
        .enumerate()
        .map(|(q, &y)| {
            let labels: Vec<usize> = nl.neighbors(q)[..k].iter().map(|&j| pool_labels[j]).collect();
            score(&labels, y)
        })
        .sum();
    Ok(total / query_labels.len() as f64)
}

/// Mean fraction of the top-`k` neighbors sharing the query label.
pub fn purity_at_k<T: Scalar>(nl: &NeighborList<T>, query_labels: &[usize], pool_labels: &[usize], k: usize) -> Result<f64> {
    mean_over_queries(nl, query_labels, pool_labels, k, |ls, y| {
        ls.iter().filter(|&&l| l == y).count() as f64 / k as f64
    })
}

/// Fraction of queries with at least one same-label neighbor in the top `k`.
pub fn hit_at_k<T: Scalar>(nl: &NeighborList<T>, query_labels: &[usize], pool_labels: &[usize], k: usize) -> Result<f64> {
    mean_over_queries(nl, query_labels, pool_labels, k, |ls, y| {
        if ls.contains(&y) {
            1.0
        } else {
            0.0
        }
    })
}

/// Mean reciprocal rank of the first same-label neighbor, 0 beyond rank `k`.
pub fn mrr_at_k<T: Scalar>(nl: &NeighborList<T>, query_labels: &[usize], pool_labels: &[usize], k: usize) -> Result<f64> {
    mean_over_queries(nl, query_labels, pool_labels, k, |ls, y| {
        ls.iter().position(|&l| l == y).map_or(0.0, |r| 1.0 / (r + 1) as f64)
    })
}

/// Mean cosine over same-label pairs minus mean cosine over different-label pairs.
///
/// Pair sums come from per-class sums of unit vectors:
/// `Σ_{i<j} uᵢ·uⱼ = (‖Σ uᵢ‖² − Σ ‖uᵢ‖²) / 2`.
pub fn separation_delta<T: Scalar>(x: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let units = l2_normalize(&x.cast::<f64>());
    let d = x.cols();
    let mut class_sum = vec![vec![0.0f64; d]; classes];
    let mut class_sq = vec![0.0f64; classes];
    let mut counts = vec![0usize; classes];
    for (row, &y) in units.row_iter().zip(labels) {
        class_sum[y].iter_mut().zip(row).for_each(|(s, &v)| *s += v);
        class_sq[y] += dot(row, row);
        counts[y] += 1;
    }
    let mut all_sum = vec![0.0f64; d];
    let mut intra_sum = 0.0;
    let mut intra_pairs = 0usize;
    for c in 0..classes {
        let s = &class_sum[c];
        intra_sum += (dot(s, s) - class_sq[c]) / 2.0;
        intra_pairs += counts[c] * counts[c].saturating_sub(1) / 2;
        all_sum.iter_mut().zip(s).for_each(|(a, &v)| *a += v);
    }
    let n = labels.len();
    let all_pairs = n * n.saturating_sub(1) / 2;
    let inter_pairs = all_pairs - intra_pairs;
    if intra_pairs == 0 || inter_pairs == 0 {
        return Err(Error::InvalidArgument(format!(
            "separation needs same-label and different-label pairs (got {intra_pairs} and {inter_pairs})"
        )));
    }
    let all = (dot(&all_sum, &all_sum) - class_sq.iter().sum::<f64>()) / 2.0;
    let inter_sum = all - intra_sum;
    Ok(intra_sum / intra_pairs as f64 - inter_sum / inter_pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// Votes weighted by similarity clamped at zero.
    Distance,
}

/// kNN label prediction from the top-`k` neighbors; ties go to the smallest class id.
pub fn knn_predict<T: Scalar>(nl: &NeighborList<T>, pool_labels: &[usize], k: usize, weighting: Weighting) -> Result<Vec<usize>> {
    if k == 0 || k > nl.k {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", nl.k)));
    }
    let classes = pool_labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut votes = vec![0.0f64; classes];
    let mut present = vec![false; classes];
    let mut out = Vec::with_capacity(nl.queries());
    for q in 0..nl.queries() {
        votes.iter_mut().for_each(|v| *v = 0.0);
        present.iter_mut().for_each(|p| *p = false);
        for (&j, &s) in nl.neighbors(q)[..k].iter().zip(&nl.sims(q)[..k]) {
            let y = pool_labels[j];
            present[y] = true;
            votes[y] += match weighting {
                Weighting::Uniform => 1.0,
                Weighting::Distance => s.to_f64_lossy().max(0.0),
            };
        }
        let mut best = None;
        for c in 0..classes {
            if !present[c] {
                continue;
            }
            match best {
                Some(b) if votes[c] <= votes[b] => {}
                _ => best = Some(c),
            }
        }
        out.push(best.expect("k >= 1 neighbor"));
    }
    Ok(out)
}

/// F1 of `class` treated as the positive label; 0 when precision + recall is 0.
pub fn f1_per_class(predicted: &[usize], actual: &[usize], class: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == class, a == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
