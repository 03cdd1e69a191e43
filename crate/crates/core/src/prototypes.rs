//! Class prototypes: the per-class mean of labeled embeddings and its unit-norm direction.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{norm, Scalar};

/// Means below this norm cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    /// `C × d` raw class means, kept for diagnostics.
    pub means: Matrix<T>,
    /// `C × d`, every row unit norm.
    pub directions: Matrix<T>,
    pub support: Vec<usize>,
}

impl<T: Scalar> PrototypeSet<T> {
    pub fn classes(&self) -> usize {
        self.directions.rows()
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }
}

/// Computes prototypes from rows `x` labeled `labels` in `0..classes`.
pub fn compute_prototypes<T: Scalar>(x: &Matrix<T>, labels: &[usize], classes: usize) -> Result<PrototypeSet<T>> {
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let d = x.cols();
    let mut means = Matrix::zeros(classes, d);
    let mut support = vec![0usize; classes];
    for (row, &y) in x.row_iter().zip(labels) {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, {classes})")));
        }
        support[y] += 1;
        means.row_mut(y).iter_mut().zip(row).for_each(|(m, &v)| *m += v);
    }
    let mut directions = Matrix::zeros(classes, d);
    for c in 0..classes {
        if support[c] == 0 {
            return Err(Error::EmptyClass(c));
        }
        let n = T::from_usize_lossy(support[c]);
        means.row_mut(c).iter_mut().for_each(|m| *m /= n);
        let len = norm(means.row(c));
        if len < T::lit(DEGENERATE_NORM) {
            return Err(Error::DegeneratePrototype(c));
        }
        for (dst, &m) in directions.row_mut(c).iter_mut().zip(means.row(c)) {
            *dst = m / len;
        }
    }
    Ok(PrototypeSet {
        means,
        directions,
        support,
    })
}

pub fn prototypes_of<T: Scalar>(ds: &LabeledDataset<T>) -> Result<PrototypeSet<T>> {
    compute_prototypes(ds.embeddings(), ds.labels(), ds.classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_and_symmetric_cases() {
        let x = Matrix::<f64>::from_rows(&[[3.0, 4.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = compute_prototypes(&x, &[0, 1, 1], 2).unwrap();
        assert_eq!(p.directions.row(0), &[0.6, 0.8]);
        assert_eq!(p.means.row(1), &[0.5, 0.5]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.directions.get(1, 0) - s).abs() < 1e-8 && (p.directions.get(1, 1) - s).abs() < 1e-8);
        assert_eq!(p.support, vec![1, 2]);
    }

    #[test]
    fn degenerate_and_empty() {
        let x = Matrix::<f64>::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let err = compute_prototypes(&x, &[0, 0], 1).unwrap_err();
        assert_eq!(err.to_string(), "degenerate prototype for class 0");
        let y = Matrix::<f64>::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(compute_prototypes(&y, &[0, 0], 2), Err(Error::EmptyClass(1))));
    }
}
