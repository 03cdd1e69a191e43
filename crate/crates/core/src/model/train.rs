use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{compute_gradients, evaluate, LossTerms, Params, PearlConfig};
use crate::prototypes::PrototypeSet;
use crate::scalar::Scalar;

/// Validation loss must drop by more than this to count as an improvement.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Loss or activations became non-finite.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss terms on the full training set after the epoch.
    pub train: LossTerms,
    pub val_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Training-set loss terms before the first update.
    pub initial_train: LossTerms,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot; 0 if no epoch completed.
    pub best_epoch: usize,
    pub best_val: f64,
    pub stop: StopReason,
}

impl TrainTrace {
    /// One JSON object per epoch followed by a summary line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let line = serde_json::json!({
                "epoch": e.epoch,
                "recon": e.train.recon,
                "full": e.train.full,
                "align": e.train.align,
                "contrast": e.train.contrast,
                "cls": e.train.cls,
                "ortho": e.train.ortho,
                "total": e.train.total,
                "val_total": e.val_total,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": true,
            "initial_total": self.initial_train.total,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val,
            "stop": self.stop,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

struct Adam<T> {
    m: Params<T>,
    v: Params<T>,
    step: i32,
    lr: f64,
}

impl<T: Scalar> Adam<T> {
    fn new(params: &Params<T>, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut Params<T>, grad: &Params<T>) {
        self.step += 1;
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let lr = T::lit(self.lr);
        let eps = T::lit(ADAM_EPS);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn abort(reason: String, trace: TrainTrace) -> Error {
    Error::TrainingAborted {
        reason,
        trace: Box::new(TrainTrace {
            stop: StopReason::NonFinite,
            ..trace
        }),
    }
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// Prototypes must come from the training rows only; validation rows enter
/// through the stopping rule alone. The returned parameters are the snapshot
/// with the lowest validation total. With an empty validation set the
/// training total drives stopping instead.
pub fn train<T: Scalar>(
    cfg: &PearlConfig,
    train_x: &Matrix<T>,
    train_y: &[usize],
    val_x: &Matrix<T>,
    val_y: &[usize],
    protos: &PrototypeSet<T>,
) -> Result<(Params<T>, TrainTrace)> {
    cfg.validate()?;
    if train_x.rows() == 0 {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    if train_y.len() != train_x.rows() || val_y.len() != val_x.rows() {
        return Err(Error::Shape("labels do not match rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.dims(train_x.cols(), protos.classes());
    let mut params = Params::<T>::init_with(dims, &mut rng);
    let mut adam = Adam::new(&params, cfg.lr);

    let initial_train = evaluate(&params, cfg, train_x, train_y, protos)?;
    let mut trace = TrainTrace {
        initial_train,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val: f64::INFINITY,
        stop: StopReason::MaxEpochs,
    };
    let mut best = params.clone();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_x.rows()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx = train_x.select_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (terms, grad) = match compute_gradients(&params, cfg, &bx, &by, protos) {
                Ok(r) => r,
                Err(e) => return Err(abort(format!("epoch {epoch}, batch {batch_idx}: {e}"), trace)),
            };
            if !terms.is_finite() {
                return Err(abort(format!("epoch {epoch}, batch {batch_idx}: non-finite loss"), trace));
            }
            adam.update(&mut params, &grad);
        }
        if !params.is_finite() {
            return Err(abort(format!("epoch {epoch}: non-finite parameters"), trace));
        }
        let train_terms = evaluate(&params, cfg, train_x, train_y, protos)
            .map_err(|e| e.context(format!("epoch {epoch}")))?;
        let val_total = if val_x.rows() > 0 {
            evaluate(&params, cfg, val_x, val_y, protos)
                .map_err(|e| e.context(format!("epoch {epoch} validation")))?
                .total
        } else {
            train_terms.total
        };
        trace.epochs.push(EpochRecord {
            epoch,
            train: train_terms,
            val_total,
        });
        if !val_total.is_finite() || !train_terms.is_finite() {
            return Err(abort(format!("epoch {epoch}: non-finite loss"), trace));
        }
        if val_total < trace.best_val - IMPROVEMENT_TOLERANCE || trace.best_epoch == 0 {
            trace.best_val = val_total;
            trace.best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            trace.stop = StopReason::Patience;
            break;
        }
    }
    Ok((best, trace))
}

/// [`train`] on labeled datasets sharing one class space.
pub fn train_dataset<T: Scalar>(
    cfg: &PearlConfig,
    labeled_train: &LabeledDataset<T>,
    val: &LabeledDataset<T>,
    protos: &PrototypeSet<T>,
) -> Result<(Params<T>, TrainTrace)> {
    train(
        cfg,
        labeled_train.embeddings(),
        labeled_train.labels(),
        val.embeddings(),
        val.labels(),
        protos,
    )
}
