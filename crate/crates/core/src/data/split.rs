use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Share of a label budget carved out for early stopping, in percent.
pub const VALIDATION_FRACTION: f64 = 0.15;
const VALIDATION_PERCENT: usize = 15;

/// Assignment of every row to one of `folds` stratified folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub fold_of: Vec<usize>,
    pub folds: usize,
}

impl SplitPlan {
    /// Rows in fold `f`, ascending.
    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == f).collect()
    }

    /// Rows outside fold `f`, ascending.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != f).collect()
    }
}

/// Stratified `folds`-way partition.
///
/// Each class is shuffled with the seeded generator and dealt round-robin,
/// starting where the previous class stopped so that fold totals stay level.
pub fn stratified_kfold<T: Scalar>(ds: &LabeledDataset<T>, folds: usize, seed: u64) -> Result<SplitPlan> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let groups = ds.rows_by_class();
    for (class, rows) in groups.iter().enumerate() {
        if rows.len() < folds {
            return Err(Error::Stratification {
                class,
                count: rows.len(),
                folds,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; ds.len()];
    let mut offset = 0;
    for mut rows in groups {
        rows.shuffle(&mut rng);
        for (pos, &r) in rows.iter().enumerate() {
            fold_of[r] = (offset + pos) % folds;
        }
        offset = (offset + rows.len()) % folds;
    }
    Ok(SplitPlan { fold_of, folds })
}

/// A class-balanced labeled subset with its validation carve-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetSample {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub budget: usize,
}

/// Per-class take counts for a budget: `⌊budget/C⌋` each, remainder one per
/// class in ascending id order, shortfalls of small classes re-dealt
/// round-robin to classes that still have rows. The round-robin picks up
/// where the remainder left off, so open classes stay within one of each other.
pub(crate) fn class_quotas(available: &[usize], budget: usize) -> Vec<usize> {
    let c = available.len();
    let base = budget / c;
    let rem = budget % c;
    let mut take: Vec<usize> = (0..c)
        .map(|k| (base + usize::from(k < rem)).min(available[k]))
        .collect();
    let mut short = budget - take.iter().sum::<usize>();
    let mut cursor = rem;
    while short > 0 {
        let k = (0..c)
            .map(|s| (cursor + s) % c)
            .find(|&k| take[k] < available[k])
            .expect("budget checked against availability");
        take[k] += 1;
        short -= 1;
        cursor = k + 1;
    }
    take
}

/// Largest-remainder split of `total` validation rows across classes in
/// proportion to their take counts. No class loses its last training row
/// unless nothing else is possible.
fn validation_counts(take: &[usize], total: usize) -> Vec<usize> {
    let mut val: Vec<usize> = take.iter().map(|&t| t * VALIDATION_PERCENT / 100).collect();
    let mut order: Vec<usize> = (0..take.len()).collect();
    // larger remainder first, ties to the smaller class id
    order.sort_by_key(|&k| (std::cmp::Reverse(take[k] * VALIDATION_PERCENT % 100), k));
    let mut left = total - val.iter().sum::<usize>();
    for keep_one in [true, false] {
        while left > 0 {
            let before = left;
            for &k in &order {
                let cap = if keep_one { take[k].saturating_sub(1) } else { take[k] };
                if left > 0 && val[k] < cap {
                    val[k] += 1;
                    left -= 1;
                }
            }
            if left == before {
                break;
            }
        }
    }
    val
}

/// Draws a budget sample from `train_fold_rows`.
///
/// Total selected rows equal `budget`; `round_half_up(0.15 · budget)` of them
/// go to validation, stratified by class.
pub fn sample_label_budget<T: Scalar>(
    ds: &LabeledDataset<T>,
    train_fold_rows: &[usize],
    budget: usize,
    seed: u64,
) -> Result<BudgetSample> {
    if budget > train_fold_rows.len() {
        return Err(Error::Budget {
            requested: budget,
            available: train_fold_rows.len(),
        });
    }
    let classes = ds.classes();
    let mut groups = vec![Vec::new(); classes];
    let mut sorted = train_fold_rows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != train_fold_rows.len() {
        return Err(Error::InvalidArgument("duplicate rows in training fold".into()));
    }
    for &r in &sorted {
        groups[ds.labels()[r]].push(r);
    }
    let available: Vec<usize> = groups.iter().map(Vec::len).collect();
    let take = class_quotas(&available, budget);
    let val_total = (budget * VALIDATION_PERCENT + 50) / 100;
    let val_counts = validation_counts(&take, val_total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_indices = Vec::with_capacity(budget - val_total);
    let mut val_indices = Vec::with_capacity(val_total);
    for (k, mut rows) in groups.into_iter().enumerate() {
        rows.shuffle(&mut rng);
        val_indices.extend_from_slice(&rows[..val_counts[k]]);
        train_indices.extend_from_slice(&rows[val_counts[k]..take[k]]);
    }
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    Ok(BudgetSample {
        train_indices,
        val_indices,
        budget,
    })
}
