use std::path::Path;

use crate::data::io::{ByteReader, ByteWriter, ContainerKind};
use crate::data::{sample_label_budget, BudgetSample, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{train, Dense, Params, PearlConfig, TrainTrace};
use crate::preprocessing::Standardizer;
use crate::prototypes::compute_prototypes;

/// A trained model as stored on disk (container kind 5).
///
/// Layout after the 8-byte container header, all little-endian: input
/// dimension and class count (`u32`); `hidden`, `d_s`, `d_r` (`u32`); the six
/// loss weights, `tau` and `lr` (`f64`); `batch_size`, `max_epochs`,
/// `patience` (`u32`); `seed` (`u64`); the layer count (`u32`) and for each
/// layer its output and input widths (`u32`) followed by the row-major
/// weights and the biases (`f64`); finally a flag byte and, when set, the body
/// of the standardizer fitted alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: PearlConfig,
    pub params: Params<f64>,
    pub standardizer: Option<Standardizer<f64>>,
}

impl Checkpoint {
    /// Draws a `budget` label sample from all of `ds` (seeded by `cfg.seed`),
    /// fits the standardizer and prototypes on its training part and trains.
    pub fn fit(ds: &LabeledDataset<f32>, budget: usize, cfg: &PearlConfig) -> Result<(Self, TrainTrace, BudgetSample)> {
        cfg.validate()?;
        let all: Vec<usize> = (0..ds.len()).collect();
        let sample = sample_label_budget(ds, &all, budget, cfg.seed)?;
        let x = ds.embeddings().cast::<f64>();
        let labels_of = |rows: &[usize]| rows.iter().map(|&i| ds.labels()[i]).collect::<Vec<_>>();
        let std = Standardizer::fit(&x.select_rows(&sample.train_indices))?;
        let train_x = std.apply(&x.select_rows(&sample.train_indices))?;
        let val_x = std.apply(&x.select_rows(&sample.val_indices))?;
        let train_y = labels_of(&sample.train_indices);
        let protos = compute_prototypes(&train_x, &train_y, ds.classes())?;
        let (params, trace) = train(cfg, &train_x, &train_y, &val_x, &labels_of(&sample.val_indices), &protos)?;
        let dims = params.dims();
        let ckpt = Checkpoint {
            config: PearlConfig {
                hidden: Some(dims.hidden),
                d_s: Some(dims.signal),
                d_r: Some(dims.residual),
                ..cfg.clone()
            },
            params,
            standardizer: Some(std),
        };
        Ok((ckpt, trace, sample))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims();
        let c = &self.config;
        let mut w = ByteWriter::with_header(ContainerKind::Model);
        w.u32(dims.input as u32);
        w.u32(dims.classes as u32);
        w.u32(dims.hidden as u32);
        w.u32(dims.signal as u32);
        w.u32(dims.residual as u32);
        for v in [c.w_recon, c.w_full, c.w_align, c.w_contrast, c.w_cls, c.w_ortho, c.tau, c.lr] {
            w.f64(v);
        }
        w.u32(c.batch_size as u32);
        w.u32(c.max_epochs as u32);
        w.u32(c.patience as u32);
        w.u64(c.seed);
        let layers = self.params.layers();
        w.u32(layers.len() as u32);
        for l in layers {
            w.u32(l.output_dim() as u32);
            w.u32(l.input_dim() as u32);
            w.f64s(l.weight.as_slice());
            w.f64s(&l.bias);
        }
        match &self.standardizer {
            Some(s) => {
                w.u8(1);
                s.write_body(&mut w);
            }
            None => w.u8(0),
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, ContainerKind::Model)?;
        let input = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let signal = r.u32()? as usize;
        let residual = r.u32()? as usize;
        let mut f = [0.0; 8];
        for v in &mut f {
            *v = r.f64()?;
        }
        let config = PearlConfig {
            d_s: Some(signal),
            d_r: Some(residual),
            hidden: Some(hidden),
            w_recon: f[0],
            w_full: f[1],
            w_align: f[2],
            w_contrast: f[3],
            w_cls: f[4],
            w_ortho: f[5],
            tau: f[6],
            lr: f[7],
            batch_size: r.u32()? as usize,
            max_epochs: r.u32()? as usize,
            patience: r.u32()? as usize,
            seed: r.u64()?,
        };
        let mut params = Params::<f64>::zeros(config.dims(input, classes));
        let at = r.pos();
        let count = r.u32()? as usize;
        if count != params.layers().len() {
            return Err(Error::load(format!("byte {at}"), format!("expected 10 layers, found {count}")));
        }
        for layer in params.layers_mut() {
            let at = r.pos();
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            if (out, inp) != (layer.output_dim(), layer.input_dim()) {
                return Err(Error::load(
                    format!("byte {at}"),
                    format!(
                        "layer shape {out}x{inp} does not match expected {}x{}",
                        layer.output_dim(),
                        layer.input_dim()
                    ),
                ));
            }
            *layer = Dense {
                weight: Matrix::from_vec(out, inp, r.f64s(out * inp)?)?,
                bias: r.f64s(out)?,
            };
        }
        let at = r.pos();
        let standardizer = match r.u8()? {
            0 => None,
            1 => Some(Standardizer::read_body(&mut r)?),
            t => return Err(Error::load(format!("byte {at}"), format!("invalid standardizer flag {t}"))),
        };
        r.finish()?;
        if let Some(s) = &standardizer {
            if s.dim() != input {
                return Err(Error::load("standardizer", "dimension does not match model"));
            }
        }
        Ok(Self {
            config,
            params,
            standardizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Standardizes (when a standardizer is stored) and refines `x`.
    pub fn transform(&self, x: &Matrix<f32>) -> Result<Matrix<f32>> {
        let x64: Matrix<f64> = x.cast();
        let z = match &self.standardizer {
            Some(s) => s.apply(&x64)?,
            None => x64,
        };
        Ok(self.params.transform(&z)?.cast())
    }
}
