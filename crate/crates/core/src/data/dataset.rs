use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Dense class ids `0..C` and the original label each one stands for.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    names: Vec<String>,
}

impl LabelTable {
    /// Table whose class `c` is named `c`.
    pub fn identity(classes: usize) -> Self {
        Self {
            names: (0..classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn from_names(names: Vec<String>) -> Self {
        Self { names }
    }

    /// Builds the dense id space from raw labels and returns per-row ids.
    ///
    /// Labels sort numerically when every label parses as an integer,
    /// lexicographically otherwise.
    pub fn densify(raw: &[String]) -> (Self, Vec<usize>) {
        let numeric: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
        let mut distinct: Vec<String> = raw.to_vec();
        match numeric {
            Some(_) => {
                distinct.sort_by_key(|s| s.parse::<i64>().unwrap());
                distinct.dedup_by_key(|s| s.parse::<i64>().unwrap());
            }
            None => {
                distinct.sort();
                distinct.dedup();
            }
        }
        let index: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let ids = match numeric {
            Some(nums) => {
                let by_value: BTreeMap<i64, usize> =
                    distinct.iter().enumerate().map(|(i, s)| (s.parse::<i64>().unwrap(), i)).collect();
                nums.iter().map(|v| by_value[v]).collect()
            }
            None => raw.iter().map(|s| index[s.as_str()]).collect(),
        };
        (Self { names: distinct }, ids)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Embeddings with one dense class id per row.
///
/// Invariants: `labels.len() == embeddings.rows()`, every id is `< classes()`
/// and every class occurs at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    embeddings: Matrix<T>,
    labels: Vec<usize>,
    label_table: LabelTable,
    warnings: Vec<String>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(embeddings: Matrix<T>, labels: Vec<usize>, label_table: LabelTable) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                embeddings.rows()
            )));
        }
        if embeddings.cols() == 0 {
            return Err(Error::Shape("embedding dimension must be at least 1".into()));
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        let classes = label_table.len();
        let mut seen = vec![false; classes];
        for (row, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::InvalidArgument(format!(
                    "row {row}: class id {y} outside [0, {classes})"
                )));
            }
            seen[y] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyClass(c));
        }
        Ok(Self {
            embeddings,
            labels,
            label_table,
            warnings: Vec::new(),
        })
    }

    /// Dataset whose class ids are also their names.
    pub fn with_identity_labels(embeddings: Matrix<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(embeddings, labels, LabelTable::identity(classes))
    }

    pub(crate) fn push_warning(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_table(&self) -> &LabelTable {
        &self.label_table
    }

    /// Side-table warnings recorded at construction (e.g. generator fallbacks).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn classes(&self) -> usize {
        self.label_table.len()
    }

    /// Row indices grouped by class id, each group ascending.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes()];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    /// Subset keeping the full class space (classes may become empty).
    pub fn subset(&self, indices: &[usize]) -> Subset<T> {
        Subset {
            embeddings: self.embeddings.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            embeddings: self.embeddings.cast(),
            labels: self.labels.clone(),
            label_table: self.label_table.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Replaces the embeddings with a transformed matrix of the same row count.
    pub fn with_embeddings<U: Scalar>(&self, embeddings: Matrix<U>) -> Result<LabeledDataset<U>> {
        if embeddings.rows() != self.len() {
            return Err(Error::Shape(format!(
                "{} rows cannot replace {} rows",
                embeddings.rows(),
                self.len()
            )));
        }
        Ok(LabeledDataset {
            embeddings,
            labels: self.labels.clone(),
            label_table: self.label_table.clone(),
            warnings: self.warnings.clone(),
        })
    }
}

/// Rows drawn from a [`LabeledDataset`] with labels still in the parent's id space.
///
/// Unlike the parent it may leave some classes without rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset<T> {
    pub embeddings: Matrix<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<T: Scalar> Subset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
