//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod metric_ref;

use pearl_core::matrix::Matrix;
use pearl_core::model::{compute_gradients, evaluate, Params, PearlConfig};
use pearl_core::prototypes::PrototypeSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TERMS: [&str; 6] = ["recon", "full", "align", "contrast", "cls", "ortho"];

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let mut m = gaussian(rows, cols, rng);
    for i in 0..rows {
        let n = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        m.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    m
}

pub fn with_weights(weights: [f64; 6]) -> PearlConfig {
    PearlConfig {
        d_s: Some(3),
        d_r: Some(2),
        hidden: Some(4),
        w_recon: weights[0],
        w_full: weights[1],
        w_align: weights[2],
        w_contrast: weights[3],
        w_cls: weights[4],
        w_ortho: weights[5],
        ..Default::default()
    }
}

/// A tiny network with random weights and biases, a batch and prototypes.
pub struct TinyProblem {
    pub params: Params<f64>,
    pub x: Matrix<f64>,
    pub labels: Vec<usize>,
    pub protos: PrototypeSet<f64>,
}

pub fn tiny_problem(seed: u64) -> TinyProblem {
    let (d, c, b) = (5, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PearlConfig {
        seed,
        ..with_weights([1.0; 6])
    };
    let mut params = Params::<f64>::init(&cfg, d, c);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = gaussian(b, d, &mut rng);
    let labels = (0..b).map(|_| rng.random_range(0..c)).collect();
    let directions = unit_rows(c, d, &mut rng);
    let protos = PrototypeSet {
        means: directions.clone(),
        directions,
        support: vec![1; c],
    };
    TinyProblem {
        params,
        x,
        labels,
        protos,
    }
}

/// Largest relative error between the analytic gradient and central
/// differences, `|a − n| / max(|a|, |n|, floor)`, over every parameter.
pub fn max_gradient_error(p: &TinyProblem, cfg: &PearlConfig, h: f64, floor: f64) -> f64 {
    let (_, grad) = compute_gradients(&p.params, cfg, &p.x, &p.labels, &p.protos).unwrap();
    let analytic: Vec<f64> = grad.tensors().into_iter().flatten().copied().collect();
    let total = |params: &Params<f64>| evaluate(params, cfg, &p.x, &p.labels, &p.protos).unwrap().total;
    let mut worst = 0.0f64;
    let mut flat = 0usize;
    let shapes: Vec<usize> = p.params.tensors().iter().map(|t| t.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let mut plus = p.params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = p.params.clone();
            minus.tensors_mut()[t][i] -= h;
            let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
            let a = analytic[flat];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
            flat += 1;
        }
    }
    worst
}

/// Independent O(n²) metric reference: full similarity table, full sort.
pub struct BruteForce {
    pub ranked: Vec<Vec<usize>>,
    pub sims: Vec<Vec<f64>>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

pub fn brute_force(queries: &Matrix<f64>, pool: &Matrix<f64>) -> BruteForce {
    let mut ranked = Vec::new();
    let mut sims = Vec::new();
    for q in queries.row_iter() {
        let s: Vec<f64> = pool.row_iter().map(|p| cosine(q, p)).collect();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        ranked.push(order);
        sims.push(s);
    }
    BruteForce { ranked, sims }
}
