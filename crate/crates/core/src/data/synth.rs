use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{LabelTable, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, norm};

/// Parameters of the Gaussian class-mixture generator.
///
/// Each instance is `mean_c + N(0, σ²I) + γ·u·s` where the class means are
/// `separation` times orthonormal directions, `u` is one unit vector shared by
/// all classes and `s ~ N(0, 1)` per instance. The shared term is a nuisance
/// factor that dominates cosine similarity when `γ` is large.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub confounder_gamma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 32,
            per_class: 400,
            separation: 1.0,
            noise_sigma: 0.35,
            confounder_gamma: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!("classes must be >= 2, got {}", self.classes)));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.per_class < 1 {
            return Err(Error::InvalidArgument("per_class must be >= 1".into()));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("noise_sigma", self.noise_sigma),
            ("confounder_gamma", self.confounder_gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Generates a labeled corpus; a pure function of `cfg`.
///
/// Rows are grouped by class. When `dim < classes` the means cannot be
/// orthonormal; they are then independent unit vectors and a warning is
/// recorded on the dataset.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<LabeledDataset<f32>> {
    cfg.validate()?;
    let (c, d) = (cfg.classes, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let orthonormal = d >= c;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut v = gaussian_vec(&mut rng, d);
        if orthonormal {
            for m in &means {
                let p = dot(&v, m);
                v.iter_mut().zip(m).for_each(|(x, &mi)| *x -= p * mi);
            }
        }
        normalize(&mut v);
        means.push(v);
    }
    for m in &mut means {
        m.iter_mut().for_each(|x| *x *= cfg.separation);
    }
    let mut confounder = gaussian_vec(&mut rng, d);
    normalize(&mut confounder);

    let n = c * cfg.per_class;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let noise = gaussian_vec(&mut rng, d);
            let s: f64 = StandardNormal.sample(&mut rng);
            for j in 0..d {
                let v = mean[j] + cfg.noise_sigma * noise[j] + cfg.confounder_gamma * confounder[j] * s;
                values.push(v as f32);
            }
            labels.push(class);
        }
    }
    let mut ds = LabeledDataset::new(Matrix::from_vec(n, d, values)?, labels, LabelTable::identity(c))?;
    if !orthonormal {
        ds.push_warning(format!(
            "dim {d} < classes {c}: class means are unit-norm but not orthonormal"
        ));
    }
    Ok(ds)
}
