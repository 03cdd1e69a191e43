//! Standardization and the baseline post-processors: L2 normalization,
//! PCA whitening and shrinkage LDA.

use crate::data::io::{ByteReader, ByteWriter, ContainerKind};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, covariance, solve_lower, solve_lower_transpose, symmetric_eigen};
use crate::matrix::Matrix;
use crate::scalar::{norm, Scalar};

/// Rows whose norm falls below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// Default guard for constant dimensions in [`Standardizer::apply`].
pub const STD_EPSILON: f64 = 1e-8;

/// Eigenvalues at or below this are dropped by the whitener.
pub const EIGEN_FLOOR: f64 = 1e-8;

pub const DEFAULT_LDA_SHRINKAGE: f64 = 0.1;
const LDA_FALLBACK_SHRINKAGE: f64 = 0.5;

/// Scales a row to unit Euclidean norm in place.
///
/// Rows with norm below [`ZERO_NORM`] become exactly zero. Rows already unit
/// length up to rounding are left untouched, which makes the operation
/// idempotent bit-for-bit.
pub fn l2_normalize_row<T: Scalar>(row: &mut [T]) {
    let n = norm(row);
    if n < T::lit(ZERO_NORM) {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let tol = T::lit(2.0) * T::from_usize_lossy(row.len().max(1)) * T::epsilon();
    if (n - T::one()).abs() <= tol {
        return;
    }
    row.iter_mut().for_each(|v| *v /= n);
}

/// Row-wise L2 normalization.
pub fn l2_normalize<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        l2_normalize_row(out.row_mut(i));
    }
    out
}

fn check_dim<T: Scalar>(x: &Matrix<T>, d: usize, what: &str) -> Result<()> {
    if x.cols() != d {
        return Err(Error::Shape(format!("{what} expects dimension {d}, got {}", x.cols())));
    }
    Ok(())
}

/// Per-dimension z-scoring fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    /// Population standard deviation (divisor `n`).
    pub std: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(train: &Matrix<T>) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::InvalidArgument("standardizer needs at least one row".into()));
        }
        let mean = train.column_means();
        let mut var = vec![T::zero(); train.cols()];
        for row in train.row_iter() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let n = T::from_usize_lossy(train.rows());
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self {
            mean,
            std,
            epsilon: T::lit(STD_EPSILON),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scale(&self, j: usize) -> T {
        self.std[j].max(self.epsilon)
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        check_dim(x, self.dim(), "standardizer")?;
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - self.mean[j]) / self.scale(j)))
    }

    pub fn inverse(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        check_dim(z, self.dim(), "standardizer")?;
        Ok(Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) * self.scale(j) + self.mean[j]))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(ContainerKind::Standardizer);
        self.write_body(&mut w);
        w.finish()
    }

    pub(crate) fn write_body(&self, w: &mut ByteWriter) {
        w.u32(self.dim() as u32);
        w.f64(self.epsilon.to_f64_lossy());
        w.f64s(&to_f64s(&self.mean));
        w.f64s(&to_f64s(&self.std));
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, ContainerKind::Standardizer)?;
        let s = Self::read_body(&mut r)?;
        r.finish()?;
        Ok(s)
    }

    pub(crate) fn read_body(r: &mut ByteReader) -> Result<Self> {
        let d = r.u32()? as usize;
        let epsilon = T::lit(r.f64()?);
        let mean = from_f64s(r.f64s(d)?);
        let std = from_f64s(r.f64s(d)?);
        Ok(Self { mean, std, epsilon })
    }
}

/// PCA whitening: centers, rotates onto the principal axes and rescales each
/// axis to unit variance. Axes with eigenvalue at or below the floor are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaWhitener<T> {
    pub mean: Vec<T>,
    /// `d × m`, orthonormal columns.
    pub components: Matrix<T>,
    /// Descending, all above `eigen_floor`.
    pub eigenvalues: Vec<T>,
    pub eigen_floor: T,
}

impl<T: Scalar> PcaWhitener<T> {
    /// Fits on the sample covariance (divisor `n − 1`) of `train`.
    pub fn fit(train: &Matrix<T>) -> Result<Self> {
        if train.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "whitening needs at least 2 rows, got {}",
                train.rows()
            )));
        }
        let mean = train.column_means();
        let cov = covariance(train, &mean);
        let eig = symmetric_eigen(&cov)?;
        let floor = T::lit(EIGEN_FLOOR);
        let m = eig.values.iter().take_while(|&&v| v > floor).count();
        let d = train.cols();
        let components = Matrix::from_fn(d, m, |i, j| eig.vectors.get(i, j));
        Ok(Self {
            mean,
            components,
            eigenvalues: eig.values[..m].to_vec(),
            eigen_floor: floor,
        })
    }

    /// Output dimension `m` (may be below the input dimension on rank-deficient data).
    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        check_dim(x, self.mean.len(), "whitener")?;
        let m = self.output_dim();
        let scale: Vec<T> = self
            .eigenvalues
            .iter()
            .map(|&l| T::one() / l.max(self.eigen_floor).sqrt())
            .collect();
        let mut out = Matrix::zeros(x.rows(), m);
        let mut centered = vec![T::zero(); x.cols()];
        for i in 0..x.rows() {
            for ((c, &v), &mu) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = v - mu;
            }
            let o = out.row_mut(i);
            for (k, &ck) in centered.iter().enumerate() {
                if ck == T::zero() {
                    continue;
                }
                for (oj, &cj) in o.iter_mut().zip(self.components.row(k)) {
                    *oj += ck * cj;
                }
            }
            o.iter_mut().zip(&scale).for_each(|(v, &s)| *v *= s);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(ContainerKind::Whitener);
        w.u32(self.mean.len() as u32);
        w.u32(self.output_dim() as u32);
        w.f64(self.eigen_floor.to_f64_lossy());
        w.f64s(&to_f64s(&self.mean));
        w.f64s(&to_f64s(&self.eigenvalues));
        w.f64s(&to_f64s(self.components.as_slice()));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, ContainerKind::Whitener)?;
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let eigen_floor = T::lit(r.f64()?);
        let mean = from_f64s(r.f64s(d)?);
        let eigenvalues = from_f64s(r.f64s(m)?);
        let components = Matrix::from_vec(d, m, from_f64s(r.f64s(d * m)?))?;
        r.finish()?;
        Ok(Self {
            mean,
            components,
            eigenvalues,
            eigen_floor,
        })
    }
}

/// Fisher discriminant projection onto `C − 1` directions with
/// within-class scatter shrunk toward a scaled identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaProjector<T> {
    /// Training mean subtracted before projecting.
    pub mean: Vec<T>,
    /// `d × min(C − 1, d)`.
    pub projection: Matrix<T>,
    /// Shrinkage actually used (after any escalation).
    pub shrinkage: T,
}

impl<T: Scalar> LdaProjector<T> {
    pub fn fit(x: &Matrix<T>, labels: &[usize], classes: usize) -> Result<Self> {
        Self::fit_with_shrinkage(x, labels, classes, T::lit(DEFAULT_LDA_SHRINKAGE))
    }

    /// Fits with shrinkage `lambda`; if the shrunk scatter is not positive
    /// definite the fit is retried once with `λ = 0.5`.
    pub fn fit_with_shrinkage(x: &Matrix<T>, labels: &[usize], classes: usize, lambda: T) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument("LDA needs at least two classes".into()));
        }
        if labels.len() != x.rows() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
        }
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::InvalidArgument("shrinkage must lie in [0, 1]".into()));
        }
        let d = x.cols();
        let mut counts = vec![0usize; classes];
        let mut class_means = Matrix::<T>::zeros(classes, d);
        for (row, &y) in x.row_iter().zip(labels) {
            if y >= classes {
                return Err(Error::InvalidArgument(format!("label {y} outside [0, {classes})")));
            }
            counts[y] += 1;
            class_means.row_mut(y).iter_mut().zip(row).for_each(|(m, &v)| *m += v);
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        for (c, &n) in counts.iter().enumerate() {
            let n = T::from_usize_lossy(n);
            class_means.row_mut(c).iter_mut().for_each(|m| *m /= n);
        }
        let mean = x.column_means();
        let n = T::from_usize_lossy(x.rows());

        let mut within = Matrix::<T>::zeros(d, d);
        let mut centered = vec![T::zero(); d];
        for (row, &y) in x.row_iter().zip(labels) {
            for ((c, &v), &m) in centered.iter_mut().zip(row).zip(class_means.row(y)) {
                *c = v - m;
            }
            for i in 0..d {
                for j in i..d {
                    within.add_at(i, j, centered[i] * centered[j]);
                }
            }
        }
        let mut between = Matrix::<T>::zeros(d, d);
        for (c, &count) in counts.iter().enumerate() {
            let w = T::from_usize_lossy(count);
            for ((ci, &m), &mu) in centered.iter_mut().zip(class_means.row(c)).zip(&mean) {
                *ci = m - mu;
            }
            for i in 0..d {
                for j in i..d {
                    between.add_at(i, j, w * centered[i] * centered[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let sw = within.get(i, j) / n;
                within.set(i, j, sw);
                within.set(j, i, sw);
                let sb = between.get(i, j) / n;
                between.set(i, j, sb);
                between.set(j, i, sb);
            }
        }

        let mut lambda = lambda;
        let chol = loop {
            let shrunk = shrink(&within, lambda);
            match cholesky(&shrunk) {
                Ok(l) => break l,
                Err(_) if lambda < T::lit(LDA_FALLBACK_SHRINKAGE) => lambda = T::lit(LDA_FALLBACK_SHRINKAGE),
                Err(e) => return Err(Error::Singular(format!("within-class scatter after shrinkage: {e}"))),
            }
        };
        // S_w⁻¹ S_b shares eigenvalues with the symmetric L⁻¹ S_b L⁻ᵀ
        let half = solve_lower(&chol, &between);
        let sym = solve_lower(&chol, &half.transpose());
        let eig = symmetric_eigen(&sym)?;
        let k = (classes - 1).min(d);
        let top = Matrix::from_fn(d, k, |i, j| eig.vectors.get(i, j));
        let projection = solve_lower_transpose(&chol, &top);
        if !projection.is_finite() {
            return Err(Error::NonFinite("LDA projection".into()));
        }
        Ok(Self {
            mean,
            projection,
            shrinkage: lambda,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        check_dim(x, self.mean.len(), "LDA projector")?;
        let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - self.mean[j]);
        Ok(centered.matmul(&self.projection))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(ContainerKind::Lda);
        w.u32(self.mean.len() as u32);
        w.u32(self.output_dim() as u32);
        w.f64(self.shrinkage.to_f64_lossy());
        w.f64s(&to_f64s(&self.mean));
        w.f64s(&to_f64s(self.projection.as_slice()));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, ContainerKind::Lda)?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        let shrinkage = T::lit(r.f64()?);
        let mean = from_f64s(r.f64s(d)?);
        let projection = Matrix::from_vec(d, k, from_f64s(r.f64s(d * k)?))?;
        r.finish()?;
        Ok(Self {
            mean,
            projection,
            shrinkage,
        })
    }
}

fn shrink<T: Scalar>(within: &Matrix<T>, lambda: T) -> Matrix<T> {
    let d = within.rows();
    let trace = (0..d).fold(T::zero(), |acc, i| acc + within.get(i, i));
    let target = lambda * trace / T::from_usize_lossy(d);
    Matrix::from_fn(d, d, |i, j| {
        (T::one() - lambda) * within.get(i, j) + if i == j { target } else { T::zero() }
    })
}

fn to_f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64s<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::lit).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::covariance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn standardizer_two_points() {
        let x = Matrix::<f64>::from_rows(&[[0.0, 2.0], [2.0, 2.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.std, vec![1.0, 0.0]);
        let z = s.apply(&x).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn standardizer_moments_and_inverse() {
        let mut x = gaussian(50, 4, 1).map(|v| 3.0 * v + 5.0);
        for i in 0..50 {
            x.set(i, 2, 7.0);
        }
        let s = Standardizer::fit(&x).unwrap();
        let z = s.apply(&x).unwrap();
        let zs = Standardizer::fit(&z).unwrap();
        for j in [0, 1, 3] {
            assert!(zs.mean[j].abs() < 1e-6);
            assert!((zs.std[j] - 1.0).abs() < 1e-6);
        }
        assert!((0..50).all(|i| z.get(i, 2) == 0.0));
        assert!(s.inverse(&z).unwrap().max_abs_diff(&x) < 1e-5);
        assert!(Standardizer::<f64>::fit(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn l2_examples() {
        let x = Matrix::<f64>::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let y = l2_normalize(&x);
        assert!((y.get(0, 0) - 0.6).abs() < 1e-15 && (y.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(y.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn l2_is_bitwise_idempotent() {
        let x = gaussian(200, 33, 4).cast::<f32>();
        let once = l2_normalize(&x);
        assert_eq!(l2_normalize(&once), once);
        let x = gaussian(200, 768, 5);
        let once = l2_normalize(&x);
        assert_eq!(l2_normalize(&once), once);
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let base = gaussian(300, 6, 2);
        let mix = gaussian(6, 6, 3);
        let x = base.matmul(&mix);
        let w = PcaWhitener::fit(&x).unwrap();
        let z = w.apply(&x).unwrap();
        let cov = covariance(&z, &z.column_means());
        assert!(cov.max_abs_diff(&Matrix::identity(6)) < 1e-8);
        let ctc = w.components.t_matmul(&w.components);
        assert!(ctc.max_abs_diff(&Matrix::identity(6)) < 1e-10);
        let refit = PcaWhitener::fit(&z).unwrap();
        assert!(refit.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-3));
    }

    #[test]
    fn whitening_shrinks_rank_deficient() {
        let mut x = gaussian(40, 5, 6);
        for i in 0..40 {
            let v = x.get(i, 0) + x.get(i, 1);
            x.set(i, 4, v);
        }
        let w = PcaWhitener::fit(&x).unwrap();
        assert_eq!(w.output_dim(), 4);
        assert!(PcaWhitener::fit(&gaussian(1, 5, 0)).is_err());
    }

    #[test]
    fn isotropic_spectrum_near_one() {
        let x = gaussian(20000, 4, 8);
        let w = PcaWhitener::fit(&x).unwrap();
        // sampling error of eigenvalues ~ sqrt(2/n) per axis
        assert!(w.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 0.05), "{:?}", w.eigenvalues);
    }

    #[test]
    fn lda_recovers_separating_axis() {
        let mut x = gaussian(400, 5, 10);
        let labels: Vec<usize> = (0..400).map(|i| i % 2).collect();
        for i in 0..400 {
            let shift = if labels[i] == 0 { -2.0 } else { 2.0 };
            x.set(i, 0, x.get(i, 0) + shift);
        }
        let lda = LdaProjector::fit(&x, &labels, 2).unwrap();
        assert_eq!(lda.output_dim(), 1);
        let w: Vec<f64> = (0..5).map(|i| lda.projection.get(i, 0)).collect();
        let cos = w[0].abs() / norm(&w);
        assert!(cos > 0.99, "cos = {cos}");
    }

    #[test]
    fn lda_guards() {
        let x = gaussian(6, 3, 0);
        assert!(LdaProjector::fit(&x, &[0; 6], 1).is_err());
        assert!(matches!(LdaProjector::fit(&x, &[0, 0, 0, 0, 0, 0], 2), Err(Error::EmptyClass(1))));
        // all rows equal their class mean: no within-class scatter at any shrinkage
        let x = Matrix::<f64>::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(LdaProjector::fit(&x, &[0, 0, 1, 1], 2), Err(Error::Singular(_))));
    }

    #[test]
    fn lda_handles_fewer_rows_than_dims() {
        let x = gaussian(6, 20, 3);
        let lda = LdaProjector::fit(&x, &[0, 1, 2, 0, 1, 2], 3).unwrap();
        assert_eq!(lda.output_dim(), 2);
        assert!(lda.apply(&x).unwrap().is_finite());
    }

    #[test]
    fn transformer_containers_roundtrip() {
        let x = gaussian(30, 4, 12);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(Standardizer::from_bytes(&s.to_bytes()).unwrap(), s);
        assert_eq!(s.to_bytes()[5], 2);
        let w = PcaWhitener::fit(&x).unwrap();
        assert_eq!(PcaWhitener::from_bytes(&w.to_bytes()).unwrap(), w);
        assert_eq!(w.to_bytes()[5], 3);
        let l = LdaProjector::fit(&x, &labels, 3).unwrap();
        assert_eq!(LdaProjector::from_bytes(&l.to_bytes()).unwrap(), l);
        assert_eq!(l.to_bytes()[5], 4);
        assert!(PcaWhitener::<f64>::from_bytes(&s.to_bytes()).is_err());
    }
}
