use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::params::row_normalized;
use crate::model::{Forward, Params, PearlConfig};
use crate::preprocessing::ZERO_NORM;
use crate::prototypes::PrototypeSet;
use crate::scalar::{dot, Scalar};

/// Batch-mean value of each objective term and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub full: f64,
    pub align: f64,
    pub contrast: f64,
    pub cls: f64,
    pub ortho: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.recon, self.full, self.align, self.contrast, self.cls, self.ortho, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Upstream gradients of the weighted objective w.r.t. forward outputs.
struct Upstream<T> {
    x_tilde: Option<Matrix<T>>,
    x_hat_full: Option<Matrix<T>>,
    proj_out: Option<Matrix<T>>,
    logits: Option<Matrix<T>>,
    z_s: Option<Matrix<T>>,
    z_r: Option<Matrix<T>>,
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

fn check_inputs<T: Scalar>(
    dims_classes: usize,
    dims_input: usize,
    x: &Matrix<T>,
    labels: &[usize],
    protos: &PrototypeSet<T>,
) -> Result<()> {
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if protos.classes() != dims_classes || protos.dim() != dims_input {
        return Err(Error::Shape(format!(
            "prototypes are {}x{}, model expects {}x{}",
            protos.classes(),
            protos.dim(),
            dims_classes,
            dims_input
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= dims_classes) {
        return Err(Error::InvalidArgument(format!("label {y} outside [0, {dims_classes})")));
    }
    Ok(())
}

fn objective<T: Scalar>(
    fwd: &Forward<T>,
    x: &Matrix<T>,
    labels: &[usize],
    protos: &PrototypeSet<T>,
    cfg: &PearlConfig,
    want_grad: bool,
) -> (LossTerms, Upstream<T>) {
    let b = x.rows();
    let inv_b = T::one() / T::from_usize_lossy(b);
    let two = T::lit(2.0);
    let w = |v: f64| T::lit(v);
    let grad_for = |weight: f64| want_grad && weight != 0.0;

    // reconstruction terms
    let sq_err = |pred: &Matrix<T>, weight: f64| {
        let mut total = T::zero();
        let mut g = grad_for(weight).then(|| Matrix::zeros(b, x.cols()));
        for i in 0..b {
            for j in 0..x.cols() {
                let diff = pred.get(i, j) - x.get(i, j);
                total += diff * diff;
                if let Some(g) = g.as_mut() {
                    g.set(i, j, w(weight) * two * diff * inv_b);
                }
            }
        }
        (total * inv_b, g)
    };
    let (recon, g_xtilde) = sq_err(&fwd.x_tilde, cfg.w_recon);
    let (full, g_xhat) = sq_err(&fwd.x_hat_full, cfg.w_full);

    // prototype alignment and contrast share the cosine table
    let cos = fwd.proj_out.matmul_t(&protos.directions);
    let inv_tau = T::one() / w(cfg.tau);
    let mut align = T::zero();
    let mut contrast = T::zero();
    let need_p = grad_for(cfg.w_align) || grad_for(cfg.w_contrast);
    let mut g_p = need_p.then(|| Matrix::zeros(b, x.cols()));
    let mut scaled = vec![T::zero(); protos.classes()];
    for i in 0..b {
        let y = labels[i];
        align += T::one() - cos.get(i, y);
        for (s, &c) in scaled.iter_mut().zip(cos.row(i)) {
            *s = c * inv_tau;
        }
        let lse = log_sum_exp(&scaled);
        contrast += lse - scaled[y];
        if let Some(g) = g_p.as_mut() {
            let row = g.row_mut(i);
            if cfg.w_align != 0.0 {
                let coef = -w(cfg.w_align) * inv_b;
                row.iter_mut().zip(protos.directions.row(y)).for_each(|(r, &p)| *r += coef * p);
            }
            if cfg.w_contrast != 0.0 {
                for c in 0..protos.classes() {
                    let soft = (scaled[c] - lse).exp();
                    let delta = if c == y { T::one() } else { T::zero() };
                    let coef = w(cfg.w_contrast) * (soft - delta) * inv_tau * inv_b;
                    row.iter_mut().zip(protos.directions.row(c)).for_each(|(r, &p)| *r += coef * p);
                }
            }
        }
    }
    align *= inv_b;
    contrast *= inv_b;

    // auxiliary classifier
    let mut cls = T::zero();
    let mut g_logits = grad_for(cfg.w_cls).then(|| Matrix::zeros(b, fwd.logits.cols()));
    for i in 0..b {
        let row = fwd.logits.row(i);
        let lse = log_sum_exp(row);
        cls += lse - row[labels[i]];
        if let Some(g) = g_logits.as_mut() {
            for c in 0..row.len() {
                let delta = if c == labels[i] { T::one() } else { T::zero() };
                g.set(i, c, w(cfg.w_cls) * ((row[c] - lse).exp() - delta) * inv_b);
            }
        }
    }
    cls *= inv_b;

    // orthogonality of row-normalized signal and residual codes
    let (s_bar, s_norm) = row_normalized(&fwd.z_s);
    let (r_bar, r_norm) = row_normalized(&fwd.z_r);
    let (ds, dr) = (s_bar.cols(), r_bar.cols());
    let cross = s_bar.t_matmul(&r_bar).map(|v| v * inv_b);
    let inv_cells = T::one() / T::from_usize_lossy(ds * dr);
    let ortho = cross.as_slice().iter().map(|v| v.abs()).sum::<T>() * inv_cells;
    let (mut g_zs, mut g_zr) = (None, None);
    if grad_for(cfg.w_ortho) {
        let sign = cross.map(|v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        let coef = w(cfg.w_ortho) * inv_cells * inv_b;
        let d_sbar = r_bar.matmul_t(&sign).map(|v| v * coef);
        let d_rbar = s_bar.matmul(&sign).map(|v| v * coef);
        g_zs = Some(through_row_norm(&s_bar, &s_norm, &d_sbar));
        g_zr = Some(through_row_norm(&r_bar, &r_norm, &d_rbar));
    }

    let f = |v: T| v.to_f64_lossy();
    let total = cfg.w_recon * f(recon)
        + cfg.w_full * f(full)
        + cfg.w_align * f(align)
        + cfg.w_contrast * f(contrast)
        + cfg.w_cls * f(cls)
        + cfg.w_ortho * f(ortho);
    let terms = LossTerms {
        recon: f(recon),
        full: f(full),
        align: f(align),
        contrast: f(contrast),
        cls: f(cls),
        ortho: f(ortho),
        total,
    };
    let up = Upstream {
        x_tilde: g_xtilde,
        x_hat_full: g_xhat,
        proj_out: g_p,
        logits: g_logits,
        z_s: g_zs,
        z_r: g_zr,
    };
    (terms, up)
}

/// Backpropagates through `u = v / ‖v‖` row-wise; rows at the zero guard pass nothing.
fn through_row_norm<T: Scalar>(unit: &Matrix<T>, norms: &[T], d_unit: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(unit.rows(), unit.cols());
    for i in 0..unit.rows() {
        if norms[i] < T::lit(ZERO_NORM) {
            continue;
        }
        let u = unit.row(i);
        let g = d_unit.row(i);
        let proj = dot(g, u);
        for (o, (&gj, &uj)) in out.row_mut(i).iter_mut().zip(g.iter().zip(u)) {
            *o = (gj - proj * uj) / norms[i];
        }
    }
    out
}

fn add_into<T: Scalar>(acc: &mut Option<Matrix<T>>, m: Matrix<T>) {
    match acc {
        Some(a) => a
            .as_mut_slice()
            .iter_mut()
            .zip(m.as_slice())
            .for_each(|(x, &y)| *x += y),
        None => *acc = Some(m),
    }
}

/// Loss terms of an already-computed forward pass.
pub fn loss_terms<T: Scalar>(
    fwd: &Forward<T>,
    x: &Matrix<T>,
    labels: &[usize],
    protos: &PrototypeSet<T>,
    cfg: &PearlConfig,
) -> LossTerms {
    objective(fwd, x, labels, protos, cfg, false).0
}

/// Forward pass plus loss terms.
pub fn evaluate<T: Scalar>(
    params: &Params<T>,
    cfg: &PearlConfig,
    x: &Matrix<T>,
    labels: &[usize],
    protos: &PrototypeSet<T>,
) -> Result<LossTerms> {
    let dims = params.dims();
    check_inputs(dims.classes, dims.input, x, labels, protos)?;
    let fwd = params.forward(x)?;
    Ok(loss_terms(&fwd, x, labels, protos, cfg))
}

/// Loss terms and the exact gradient of the weighted total w.r.t. every parameter.
pub fn compute_gradients<T: Scalar>(
    params: &Params<T>,
    cfg: &PearlConfig,
    x: &Matrix<T>,
    labels: &[usize],
    protos: &PrototypeSet<T>,
) -> Result<(LossTerms, Params<T>)> {
    let dims = params.dims();
    check_inputs(dims.classes, dims.input, x, labels, protos)?;
    let fwd = params.forward(x)?;
    let (terms, up) = objective(&fwd, x, labels, protos, cfg, true);
    let mut grad = params.zeros_like();

    let mut d_zs = up.z_s;
    let mut d_zr = up.z_r;
    if let Some(g) = up.x_tilde {
        let d = params.dec_signal.backward(&fwd.z_s, &fwd.h_ds, &g, &mut grad.dec_signal);
        add_into(&mut d_zs, d);
    }
    if let Some(g) = up.x_hat_full {
        let d = params.dec_full.backward(&fwd.z_cat, &fwd.h_df, &g, &mut grad.dec_full);
        let s = dims.signal;
        add_into(&mut d_zs, Matrix::from_fn(d.rows(), s, |i, j| d.get(i, j)));
        add_into(&mut d_zr, Matrix::from_fn(d.rows(), dims.residual, |i, j| d.get(i, s + j)));
    }
    if let Some(g) = up.proj_out {
        let (_, norms) = row_normalized(&fwd.proj_raw);
        let d_raw = through_row_norm(&fwd.proj_out, &norms, &g);
        let d = params.proj.backward(&fwd.z_s, &d_raw, &mut grad.proj);
        add_into(&mut d_zs, d);
    }
    if let Some(g) = up.logits {
        let d = params.classifier.backward(&fwd.z_s, &g, &mut grad.classifier);
        add_into(&mut d_zs, d);
    }
    if let Some(g) = d_zs {
        params.enc_signal.backward(x, &fwd.h_es, &g, &mut grad.enc_signal);
    }
    if let Some(g) = d_zr {
        params.enc_residual.backward(x, &fwd.h_er, &g, &mut grad.enc_residual);
    }
    Ok((terms, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::Dims;

    fn protos_from(rows: &[Vec<f64>]) -> PrototypeSet<f64> {
        let m = Matrix::from_rows(rows).unwrap();
        PrototypeSet {
            means: m.clone(),
            directions: m,
            support: vec![1; rows.len()],
        }
    }

    /// Forward pass with hand-set outputs; only the fields the objective reads matter.
    fn fake_forward(z_s: Matrix<f64>, z_r: Matrix<f64>, proj: Matrix<f64>, logits: Matrix<f64>, x: &Matrix<f64>) -> Forward<f64> {
        Forward {
            z_s,
            z_r,
            x_tilde: x.clone(),
            x_hat_full: x.clone(),
            proj_raw: proj.clone(),
            proj_out: proj,
            logits,
            h_es: Matrix::zeros(0, 0),
            h_er: Matrix::zeros(0, 0),
            h_ds: Matrix::zeros(0, 0),
            h_df: Matrix::zeros(0, 0),
            z_cat: Matrix::zeros(0, 0),
        }
    }

    #[test]
    fn align_bounds_at_aligned_and_anti_aligned_rows() {
        let protos = protos_from(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let x = Matrix::zeros(2, 2);
        let proj = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap();
        let f = fake_forward(Matrix::zeros(2, 1), Matrix::zeros(2, 1), proj, Matrix::zeros(2, 2), &x);
        let t = loss_terms(&f, &x, &[0, 1], &protos, &PearlConfig::default());
        // row 0 contributes 0, row 1 contributes 2
        assert!((t.align - 1.0).abs() < 1e-12);
        assert_eq!(t.recon, 0.0);
    }

    #[test]
    fn contrast_closed_form_two_classes() {
        let protos = protos_from(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let x = Matrix::zeros(1, 2);
        let proj = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let f = fake_forward(Matrix::zeros(1, 1), Matrix::zeros(1, 1), proj, Matrix::zeros(1, 2), &x);
        let t = loss_terms(&f, &x, &[0], &protos, &PearlConfig::default());
        let expected = (1.0f64 + (-10.0f64).exp()).ln();
        assert!((t.contrast - expected).abs() < 1e-15);
        assert!((t.contrast - 4.5399e-5).abs() < 1e-8);
        // zero logits: CE = ln 2
        assert!((t.cls - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ortho_cancellation() {
        let protos = protos_from(&[vec![1.0], vec![-1.0]]);
        let x = Matrix::zeros(2, 1);
        let z_s = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let z_r = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let proj = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let f = fake_forward(z_s, z_r, proj, Matrix::zeros(2, 2), &x);
        let t = loss_terms(&f, &x, &[0, 1], &protos, &PearlConfig::default());
        assert_eq!(t.ortho, 0.0);
    }

    #[test]
    fn zero_weights_zero_gradients() {
        let cfg = PearlConfig {
            w_recon: 0.0,
            w_full: 0.0,
            w_align: 0.0,
            w_contrast: 0.0,
            w_cls: 0.0,
            w_ortho: 0.0,
            d_s: Some(3),
            d_r: Some(2),
            hidden: Some(4),
            seed: 5,
            ..Default::default()
        };
        let p = Params::<f64>::init(&cfg, 5, 2);
        let x = Matrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64).sin());
        let protos = protos_from(&[vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]]);
        let (terms, g) = compute_gradients(&p, &cfg, &x, &[0, 1, 0], &protos).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn recon_gradient_vanishes_at_exact_reconstruction() {
        // D_s∘E_s maps 0 to 0 with zero biases, so x = 0 is a minimum of the recon term
        let cfg = PearlConfig {
            w_full: 0.0,
            w_align: 0.0,
            w_contrast: 0.0,
            w_cls: 0.0,
            w_ortho: 0.0,
            ..Default::default()
        };
        let p = Params::<f64>::init(&cfg, 4, 2);
        let x = Matrix::zeros(3, 4);
        let protos = protos_from(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        let (terms, g) = compute_gradients(&p, &cfg, &x, &[0, 1, 0], &protos).unwrap();
        assert_eq!(terms.recon, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_mismatched_prototypes() {
        let cfg = PearlConfig::default();
        let p = Params::<f64>::zeros(Dims {
            input: 2,
            hidden: 2,
            signal: 1,
            residual: 1,
            classes: 3,
        });
        let protos = protos_from(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(evaluate(&p, &cfg, &Matrix::zeros(1, 2), &[0], &protos).is_err());
    }
}
