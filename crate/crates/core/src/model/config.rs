use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the refinement network and its training loop.
///
/// `hidden`, `d_s` and `d_r` default to `d`, `⌈d/2⌉` and `⌈d/4⌉` for input
/// dimension `d` when left unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PearlConfig {
    pub d_s: Option<usize>,
    pub d_r: Option<usize>,
    pub hidden: Option<usize>,
    pub w_recon: f64,
    pub w_full: f64,
    pub w_align: f64,
    pub w_contrast: f64,
    pub w_cls: f64,
    pub w_ortho: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for PearlConfig {
    fn default() -> Self {
        Self {
            d_s: None,
            d_r: None,
            hidden: None,
            w_recon: 1.0,
            w_full: 0.5,
            w_align: 1.0,
            w_contrast: 1.0,
            w_cls: 1.0,
            w_ortho: 0.1,
            tau: 0.1,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

/// Resolved layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub signal: usize,
    pub residual: usize,
    pub classes: usize,
}

impl PearlConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_recon", self.w_recon),
            ("w_full", self.w_full),
            ("w_align", self.w_align),
            ("w_contrast", self.w_contrast),
            ("w_cls", self.w_cls),
            ("w_ortho", self.w_ortho),
        ];
        for (name, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [("d_s", self.d_s), ("d_r", self.d_r), ("hidden", self.hidden)] {
            if v == Some(0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize, classes: usize) -> Dims {
        Dims {
            input,
            hidden: self.hidden.unwrap_or(input),
            signal: self.d_s.unwrap_or(input.div_ceil(2)),
            residual: self.d_r.unwrap_or(input.div_ceil(4)),
            classes,
        }
    }

    /// Sets a field from its name (`d_s`, `w_align`, ...). Unknown names are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "d_s" => self.d_s = Some(num(key, value)?),
            "d_r" => self.d_r = Some(num(key, value)?),
            "hidden" => self.hidden = Some(num(key, value)?),
            "w_recon" => self.w_recon = num(key, value)?,
            "w_full" => self.w_full = num(key, value)?,
            "w_align" => self.w_align = num(key, value)?,
            "w_contrast" => self.w_contrast = num(key, value)?,
            "w_cls" => self.w_cls = num(key, value)?,
            "w_ortho" => self.w_ortho = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims() {
        let d = PearlConfig::default().dims(31, 4);
        assert_eq!((d.hidden, d.signal, d.residual), (31, 16, 8));
    }

    #[test]
    fn validation_and_set() {
        let mut c = PearlConfig::default();
        c.set("w_ortho", "0.25").unwrap();
        assert_eq!(c.w_ortho, 0.25);
        assert!(c.set("bogus", "1").unwrap_err().to_string().contains("bogus"));
        c.tau = 0.0;
        assert!(c.validate().is_err());
        let c = PearlConfig { w_full: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
