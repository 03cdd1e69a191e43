use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Dims, PearlConfig};
use crate::preprocessing::ZERO_NORM;
use crate::scalar::{norm, Scalar};

/// Affine layer `y = W·x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero bias.
    fn glorot(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Matrix::from_fn(output, input, |_, _| T::lit(rng.random_range(-limit..=limit)));
        Self {
            weight,
            bias: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut out = x.matmul_t(&self.weight);
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&self.bias).for_each(|(o, &b)| *o += b);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub(crate) fn backward(&self, x: &Matrix<T>, d_out: &Matrix<T>, grad: &mut Dense<T>) -> Matrix<T> {
        let dw = d_out.t_matmul(x);
        grad.weight
            .as_mut_slice()
            .iter_mut()
            .zip(dw.as_slice())
            .for_each(|(g, &v)| *g += v);
        for row in d_out.row_iter() {
            grad.bias.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
        }
        d_out.matmul(&self.weight)
    }
}

/// One rectified-linear hidden layer followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayer<T> {
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

impl<T: Scalar> TwoLayer<T> {
    fn glorot(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Dense::glorot(input, hidden, rng),
            output: Dense::glorot(hidden, output, rng),
        }
    }

    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Dense::zeros(input, hidden),
            output: Dense::zeros(hidden, output),
        }
    }

    /// Returns `(hidden activation, output)`.
    pub fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let h = self.hidden.forward(x).map(|v| v.max(T::zero()));
        let out = self.output.forward(&h);
        (h, out)
    }

    pub(crate) fn backward(&self, x: &Matrix<T>, h: &Matrix<T>, d_out: &Matrix<T>, grad: &mut TwoLayer<T>) -> Matrix<T> {
        let mut dh = self.output.backward(h, d_out, &mut grad.output);
        for (g, &a) in dh.as_mut_slice().iter_mut().zip(h.as_slice()) {
            if a <= T::zero() {
                *g = T::zero();
            }
        }
        self.hidden.backward(x, &dh, &mut grad.hidden)
    }
}

/// All trainable parameters. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// `E_s`: d → hidden → d_s
    pub enc_signal: TwoLayer<T>,
    /// `E_r`: d → hidden → d_r
    pub enc_residual: TwoLayer<T>,
    /// `D_s`: d_s → hidden → d
    pub dec_signal: TwoLayer<T>,
    /// `D_full`: (d_s + d_r) → hidden → d
    pub dec_full: TwoLayer<T>,
    /// Prototype head: d_s → d
    pub proj: Dense<T>,
    /// Classifier `g`: d_s → C
    pub classifier: Dense<T>,
}

/// Intermediate values of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub z_s: Matrix<T>,
    pub z_r: Matrix<T>,
    pub x_tilde: Matrix<T>,
    pub x_hat_full: Matrix<T>,
    /// Prototype head output before normalization.
    pub proj_raw: Matrix<T>,
    /// Row-normalized prototype head output.
    pub proj_out: Matrix<T>,
    pub logits: Matrix<T>,
    pub(crate) h_es: Matrix<T>,
    pub(crate) h_er: Matrix<T>,
    pub(crate) h_ds: Matrix<T>,
    pub(crate) h_df: Matrix<T>,
    pub(crate) z_cat: Matrix<T>,
}

impl<T: Scalar> Params<T> {
    /// Glorot-uniform initialization, deterministic given `cfg.seed`.
    pub fn init(cfg: &PearlConfig, input: usize, classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::init_with(cfg.dims(input, classes), &mut rng)
    }

    pub(crate) fn init_with(dims: Dims, rng: &mut ChaCha8Rng) -> Self {
        let Dims {
            input: d,
            hidden: h,
            signal: s,
            residual: r,
            classes: c,
        } = dims;
        Self {
            enc_signal: TwoLayer::glorot(d, h, s, rng),
            enc_residual: TwoLayer::glorot(d, h, r, rng),
            dec_signal: TwoLayer::glorot(s, h, d, rng),
            dec_full: TwoLayer::glorot(s + r, h, d, rng),
            proj: Dense::glorot(s, d, rng),
            classifier: Dense::glorot(s, c, rng),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            input: d,
            hidden: h,
            signal: s,
            residual: r,
            classes: c,
        } = dims;
        Self {
            enc_signal: TwoLayer::zeros(d, h, s),
            enc_residual: TwoLayer::zeros(d, h, r),
            dec_signal: TwoLayer::zeros(s, h, d),
            dec_full: TwoLayer::zeros(s + r, h, d),
            proj: Dense::zeros(s, d),
            classifier: Dense::zeros(s, c),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.enc_signal.hidden.input_dim(),
            hidden: self.enc_signal.hidden.output_dim(),
            signal: self.enc_signal.output.output_dim(),
            residual: self.enc_residual.output.output_dim(),
            classes: self.classifier.output_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    /// Dense layers in serialization order.
    pub fn layers(&self) -> [&Dense<T>; 10] {
        [
            &self.enc_signal.hidden,
            &self.enc_signal.output,
            &self.enc_residual.hidden,
            &self.enc_residual.output,
            &self.dec_signal.hidden,
            &self.dec_signal.output,
            &self.dec_full.hidden,
            &self.dec_full.output,
            &self.proj,
            &self.classifier,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense<T>; 10] {
        [
            &mut self.enc_signal.hidden,
            &mut self.enc_signal.output,
            &mut self.enc_residual.hidden,
            &mut self.enc_residual.output,
            &mut self.dec_signal.hidden,
            &mut self.dec_signal.output,
            &mut self.dec_full.hidden,
            &mut self.dec_full.output,
            &mut self.proj,
            &mut self.classifier,
        ]
    }

    /// Every weight and bias buffer, in serialization order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        let dims = self.dims();
        if x.cols() != dims.input {
            return Err(Error::Shape(format!(
                "model expects dimension {}, got {}",
                dims.input,
                x.cols()
            )));
        }
        let (h_es, z_s) = self.enc_signal.forward(x);
        let (h_er, z_r) = self.enc_residual.forward(x);
        let (h_ds, x_tilde) = self.dec_signal.forward(&z_s);
        let z_cat = Matrix::from_fn(x.rows(), dims.signal + dims.residual, |i, j| {
            if j < dims.signal {
                z_s.get(i, j)
            } else {
                z_r.get(i, j - dims.signal)
            }
        });
        let (h_df, x_hat_full) = self.dec_full.forward(&z_cat);
        let proj_raw = self.proj.forward(&z_s);
        let (proj_out, _) = row_normalized(&proj_raw);
        let logits = self.classifier.forward(&z_s);
        let fwd = Forward {
            z_s,
            z_r,
            x_tilde,
            x_hat_full,
            proj_raw,
            proj_out,
            logits,
            h_es,
            h_er,
            h_ds,
            h_df,
            z_cat,
        };
        for (name, m) in [
            ("z_s", &fwd.z_s),
            ("z_r", &fwd.z_r),
            ("x_tilde", &fwd.x_tilde),
            ("x_hat_full", &fwd.x_hat_full),
            ("proj", &fwd.proj_raw),
            ("logits", &fwd.logits),
        ] {
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("activation {name}")));
            }
        }
        Ok(fwd)
    }

    /// Refined embeddings `D_s(E_s(x))`, computed in `T` and returned in the input's scalar type.
    pub fn transform<U: Scalar>(&self, x: &Matrix<U>) -> Result<Matrix<U>> {
        let dims = self.dims();
        if x.cols() != dims.input {
            return Err(Error::Shape(format!(
                "model expects dimension {}, got {}",
                dims.input,
                x.cols()
            )));
        }
        let xt: Matrix<T> = x.cast();
        let (_, z_s) = self.enc_signal.forward(&xt);
        let (_, out) = self.dec_signal.forward(&z_s);
        if !out.is_finite() {
            return Err(Error::NonFinite("transform output".into()));
        }
        Ok(out.cast())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let mut out = Params::<U>::zeros(self.dims());
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s.cast());
        }
        out
    }
}

/// Normalizes every row of a matrix, leaving near-zero rows at zero.
///
/// Plain division (no snapping) so the value matches its analytic derivative.
pub(crate) fn row_normalized<T: Scalar>(m: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n < T::lit(ZERO_NORM) {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (out, norms)
}
