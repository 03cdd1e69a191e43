//! Cross-validated evaluation of the refinement methods.
//!
//! Each (budget, method, fold) cell is an independent work item. Cells run on
//! a bounded thread pool and are reassembled in a fixed order, so reports do
//! not depend on the number of workers.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_label_budget, stratified_kfold, LabeledDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{
    f1_per_class, hit_at_k, knn_predict, mrr_at_k, purity_at_k, separation_delta, top_k_neighbors, Weighting,
};
use crate::model::{train, PearlConfig};
use crate::preprocessing::{l2_normalize, LdaProjector, PcaWhitener, Standardizer};
use crate::prototypes::compute_prototypes;

pub const DEFAULT_BUDGETS: [usize; 6] = [100, 300, 600, 1200, 2500, 5000];
pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Raw,
    Pearl,
    L2,
    PcaWhitenL2,
    LdaL2,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Raw, Method::Pearl, Method::L2, Method::PcaWhitenL2, Method::LdaL2];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Pearl => "pearl",
            Method::L2 => "l2",
            Method::PcaWhitenL2 => "pca_whiten_l2",
            Method::LdaL2 => "lda_l2",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Method::Raw => "Raw",
            Method::Pearl => "PEARL",
            Method::L2 => "L2",
            Method::PcaWhitenL2 => "PCA-whiten+L2",
            Method::LdaL2 => "LDA+L2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Purity,
    Hit,
    Mrr,
    DeltaSep,
    F1Uniform,
    F1Distance,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Purity,
        Metric::DeltaSep,
        Metric::Hit,
        Metric::Mrr,
        Metric::F1Uniform,
        Metric::F1Distance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Purity => "purity",
            Metric::Hit => "hit",
            Metric::Mrr => "mrr",
            Metric::DeltaSep => "delta_sep",
            Metric::F1Uniform => "f1_uniform",
            Metric::F1Distance => "f1_distance",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Purity => "kNN purity (Purity@K)",
            Metric::Hit => "Hit@K",
            Metric::Mrr => "MRR@K",
            Metric::DeltaSep => "Intra-class minus inter-class cosine (delta_sep)",
            Metric::F1Uniform => "kNN F1, uniform voting",
            Metric::F1Distance => "kNN F1, similarity-weighted voting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub budgets: Vec<usize>,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub base_seed: u64,
    /// Queries drawn from the labeled pool itself, each excluding its own row.
    pub leave_one_out: bool,
    pub pearl: PearlConfig,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 5,
            budgets: DEFAULT_BUDGETS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
            methods: Method::ALL.to_vec(),
            base_seed: 0,
            leave_one_out: false,
            pearl: PearlConfig::default(),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("budgets must be non-empty and strictly ascending".into()));
        }
        if self.budgets[0] == 0 {
            return Err(Error::InvalidArgument("budgets must be positive".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidArgument("ks must be non-empty and positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must be non-empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::InvalidArgument("methods must not repeat".into()));
        }
        self.pearl.validate()
    }
}

/// One observation for a (method, budget, fold) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: Method,
    pub budget: usize,
    pub fold: usize,
    pub metric: Metric,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class: Option<String>,
    pub value: f64,
}

/// Mean and population std of one metric across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub aggregate: bool,
    pub method: Method,
    pub budget: usize,
    pub metric: Metric,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class: Option<String>,
    pub mean: f64,
    pub std: f64,
    pub n_folds: usize,
}

/// A cell that failed; its records are missing from the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub error: bool,
    pub method: Method,
    pub budget: usize,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportTable {
    pub folds: usize,
    pub records: Vec<MetricRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub errors: Vec<CellError>,
    /// Per-cell remarks such as whitening rank reductions.
    pub notes: Vec<String>,
}

impl ReportTable {
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn aggregate(&self, method: Method, budget: usize, metric: Metric, k: Option<usize>) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.budget == budget && a.metric == metric && a.k == k && a.class.is_none())
    }

    pub fn mean(&self, method: Method, budget: usize, metric: Metric, k: Option<usize>) -> Option<f64> {
        self.aggregate(method, budget, metric, k).map(|a| a.mean)
    }

    /// Records, then aggregates, then failed cells, one JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        for a in &self.aggregates {
            out.push_str(&serde_json::to_string(a).expect("aggregate serializes"));
            out.push('\n');
        }
        for e in &self.errors {
            out.push_str(&serde_json::to_string(e).expect("error serializes"));
            out.push('\n');
        }
        out
    }

    /// Plain-text tables, one per metric: rows are (budget, K[, class]),
    /// columns are methods, cells are `mean ± std`.
    pub fn render_table(&self) -> String {
        let mut methods: Vec<Method> = Vec::new();
        for a in &self.aggregates {
            if !methods.contains(&a.method) {
                methods.push(a.method);
            }
        }
        let mut out = String::new();
        for metric in Metric::ALL {
            let rows: Vec<&AggregateRow> = self.aggregates.iter().filter(|a| a.metric == metric).collect();
            if rows.is_empty() {
                continue;
            }
            let mut keys: Vec<(usize, Option<usize>, Option<String>)> = Vec::new();
            let mut cells: HashMap<(usize, Option<usize>, Option<String>, Method), String> = HashMap::new();
            for a in rows {
                let key = (a.budget, a.k, a.class.clone());
                if !keys.contains(&key) {
                    keys.push(key.clone());
                }
                cells.insert((key.0, key.1, key.2, a.method), format!("{:.4} ± {:.4}", a.mean, a.std));
            }
            keys.sort();
            let with_k = metric != Metric::DeltaSep;
            let with_class = matches!(metric, Metric::F1Uniform | Metric::F1Distance);

            let mut header = vec!["Size".to_string()];
            if with_k {
                header.push("k".into());
            }
            if with_class {
                header.push("Class".into());
            }
            header.extend(methods.iter().map(|m| m.title().to_string()));
            let mut lines: Vec<Vec<String>> = vec![header];
            for (budget, k, class) in &keys {
                let mut line = vec![budget.to_string()];
                if with_k {
                    line.push(k.map_or_else(String::new, |k| k.to_string()));
                }
                if with_class {
                    line.push(class.clone().unwrap_or_default());
                }
                for &m in &methods {
                    line.push(
                        cells
                            .get(&(*budget, *k, class.clone(), m))
                            .cloned()
                            .unwrap_or_else(|| "-".into()),
                    );
                }
                lines.push(line);
            }
            let widths: Vec<usize> = (0..lines[0].len())
                .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
                .collect();
            let _ = writeln!(out, "{} (mean ± std over {} folds)", metric.title(), self.folds);
            for (i, line) in lines.iter().enumerate() {
                let cols: Vec<String> = line
                    .iter()
                    .zip(&widths)
                    .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                    .collect();
                let _ = writeln!(out, "{}", cols.join("  ").trim_end());
                if i == 0 {
                    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                    let _ = writeln!(out, "{}", "-".repeat(total));
                }
            }
            out.push('\n');
        }
        if !self.notes.is_empty() {
            out.push_str("Notes\n");
            for n in &self.notes {
                let _ = writeln!(out, "  {n}");
            }
            out.push('\n');
        }
        if !self.errors.is_empty() {
            out.push_str("Failed cells\n");
            for e in &self.errors {
                let _ = writeln!(out, "  {} budget {} fold {}: {}", e.method, e.budget, e.fold, e.message);
            }
        }
        out
    }
}

/// Rows of one fold as seen by a single method.
#[derive(Debug, Clone)]
pub struct FoldData<'a> {
    pub embeddings: &'a Matrix<f64>,
    pub labels: &'a [usize],
    pub classes: usize,
    pub class_names: &'a [String],
    pub fold: usize,
    /// Test rows, used as queries and for the separation score.
    pub test_rows: &'a [usize],
    /// Labeled training rows: the neighbor pool and the fitting set.
    pub train_rows: &'a [usize],
    /// Labeled validation rows, used only by PEARL's stopping rule.
    pub val_rows: &'a [usize],
    pub seed: u64,
}

struct Embedded {
    pool: Matrix<f64>,
    queries: Matrix<f64>,
    note: Option<String>,
}

fn embed(method: Method, data: &FoldData<'_>, pearl: &PearlConfig) -> Result<Embedded> {
    let pick = |rows: &[usize]| data.embeddings.select_rows(rows);
    let labels_of = |rows: &[usize]| rows.iter().map(|&i| data.labels[i]).collect::<Vec<_>>();
    let train_raw = pick(data.train_rows);
    let std = Standardizer::fit(&train_raw).map_err(|e| e.context("standardizer"))?;
    let pool = std.apply(&train_raw)?;
    let queries = std.apply(&pick(data.test_rows))?;
    let train_y = labels_of(data.train_rows);
    let mut note = None;
    let (pool, queries) = match method {
        Method::Raw => (pool, queries),
        Method::L2 => (l2_normalize(&pool), l2_normalize(&queries)),
        Method::PcaWhitenL2 => {
            let w = PcaWhitener::fit(&pool).map_err(|e| e.context("whitening"))?;
            if w.output_dim() < pool.cols() {
                note = Some(format!("whitening kept {} of {} components", w.output_dim(), pool.cols()));
            }
            (l2_normalize(&w.apply(&pool)?), l2_normalize(&w.apply(&queries)?))
        }
        Method::LdaL2 => {
            let lda = LdaProjector::fit(&pool, &train_y, data.classes).map_err(|e| e.context("lda"))?;
            (l2_normalize(&lda.apply(&pool)?), l2_normalize(&lda.apply(&queries)?))
        }
        Method::Pearl => {
            let protos = compute_prototypes(&pool, &train_y, data.classes).map_err(|e| e.context("prototypes"))?;
            let val_x = std.apply(&pick(data.val_rows))?;
            let val_y = labels_of(data.val_rows);
            let cfg = PearlConfig {
                seed: data.seed,
                ..pearl.clone()
            };
            let (params, trace) =
                train(&cfg, &pool, &train_y, &val_x, &val_y, &protos).map_err(|e| e.context("training"))?;
            note = Some(format!(
                "pearl stopped at epoch {} ({:?}), best epoch {}",
                trace.epochs.len(),
                trace.stop,
                trace.best_epoch
            ));
            (l2_normalize(&params.transform(&pool)?), l2_normalize(&params.transform(&queries)?))
        }
    };
    Ok(Embedded { pool, queries, note })
}

/// Embeds one fold with `method` and scores it.
///
/// Returns `|ks|·3 + 1 + |ks|·2·C` records plus an optional note.
pub fn run_method_on_fold(
    method: Method,
    data: &FoldData<'_>,
    budget: usize,
    cfg: &ExperimentConfig,
) -> Result<(Vec<MetricRecord>, Option<String>)> {
    let Embedded { pool, queries, note } = embed(method, data, &cfg.pearl)?;
    let pool_y: Vec<usize> = data.train_rows.iter().map(|&i| data.labels[i]).collect();
    let test_y: Vec<usize> = data.test_rows.iter().map(|&i| data.labels[i]).collect();
    let (query_x, query_y) = if cfg.leave_one_out {
        (&pool, &pool_y)
    } else {
        (&queries, &test_y)
    };
    let k_max = cfg.ks.iter().copied().max().unwrap_or(1);
    let nl = top_k_neighbors(query_x, &pool, k_max, cfg.leave_one_out)?;

    let rec = |metric, k, class, value| MetricRecord {
        method,
        budget,
        fold: data.fold,
        metric,
        k,
        class,
        value,
    };
    let mut out = Vec::with_capacity(cfg.ks.len() * (3 + 2 * data.classes) + 1);
    for &k in &cfg.ks {
        out.push(rec(Metric::Purity, Some(k), None, purity_at_k(&nl, query_y, &pool_y, k)?));
    }
    for &k in &cfg.ks {
        out.push(rec(Metric::Hit, Some(k), None, hit_at_k(&nl, query_y, &pool_y, k)?));
    }
    for &k in &cfg.ks {
        out.push(rec(Metric::Mrr, Some(k), None, mrr_at_k(&nl, query_y, &pool_y, k)?));
    }
    out.push(rec(Metric::DeltaSep, None, None, separation_delta(&queries, &test_y)?));
    for (metric, weighting) in [(Metric::F1Uniform, Weighting::Uniform), (Metric::F1Distance, Weighting::Distance)] {
        for &k in &cfg.ks {
            let pred = knn_predict(&nl, &pool_y, k, weighting)?;
            for c in 0..data.classes {
                let name = data.class_names[c].clone();
                out.push(rec(metric, Some(k), Some(name), f1_per_class(&pred, query_y, c)));
            }
        }
    }
    Ok((out, note))
}

type CellOutcome = Result<(Vec<MetricRecord>, Option<String>)>;

/// Runs every (budget, method, fold) cell and aggregates across folds.
///
/// Fold `f` uses seed `base_seed + f` for both its budget sample and PEARL
/// training. The fold split itself is seeded with `base_seed`. A failing cell
/// is listed in [`ReportTable::errors`] and the rest of the table is kept.
pub fn run_experiment(ds: &LabeledDataset<f32>, cfg: &ExperimentConfig) -> Result<ReportTable> {
    cfg.validate()?;
    let plan: SplitPlan = stratified_kfold(ds, cfg.folds, cfg.base_seed)?;
    let x = ds.embeddings().cast::<f64>();
    let names = ds.label_table().names();

    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.folds).map(|f| (plan.test_rows(f), plan.train_rows(f))).collect();
    let mut cells = Vec::new();
    for &budget in &cfg.budgets {
        for &method in &cfg.methods {
            for fold in 0..cfg.folds {
                cells.push((budget, method, fold));
            }
        }
    }

    let run_cell = |&(budget, method, fold): &(usize, Method, usize)| -> CellOutcome {
        let seed = cfg.base_seed.wrapping_add(fold as u64);
        let (test_rows, train_fold) = &folds[fold];
        let sample = sample_label_budget(ds, train_fold, budget, seed)?;
        let data = FoldData {
            embeddings: &x,
            labels: ds.labels(),
            classes: ds.classes(),
            class_names: names,
            fold,
            test_rows,
            train_rows: &sample.train_indices,
            val_rows: &sample.val_indices,
            seed,
        };
        run_method_on_fold(method, &data, budget, cfg)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let mut table = ReportTable {
        folds: cfg.folds,
        ..Default::default()
    };
    for (&(budget, method, fold), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok((records, note)) => {
                table.records.extend(records);
                if let Some(n) = note {
                    table.notes.push(format!("{method} budget {budget} fold {fold}: {n}"));
                }
            }
            Err(e) => table.errors.push(CellError {
                error: true,
                method,
                budget,
                fold,
                message: e.to_string(),
            }),
        }
    }
    table.aggregates = aggregate(&table.records);
    Ok(table)
}

/// Groups records by (method, budget, metric, k, class) in first-seen order.
pub fn aggregate(records: &[MetricRecord]) -> Vec<AggregateRow> {
    type Key = (Method, usize, Metric, Option<usize>, Option<String>);
    let mut order: Vec<Key> = Vec::new();
    let mut values: HashMap<Key, Vec<f64>> = HashMap::new();
    for r in records {
        let key = (r.method, r.budget, r.metric, r.k, r.class.clone());
        values
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &values[&key];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let (method, budget, metric, k, class) = key;
            AggregateRow {
                aggregate: true,
                method,
                budget,
                metric,
                k,
                class,
                mean,
                std: var.sqrt(),
                n_folds: v.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn small() -> LabeledDataset<f32> {
        generate_synthetic(&SyntheticConfig {
            classes: 3,
            dim: 8,
            per_class: 40,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg(methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            folds: 2,
            budgets: vec![30],
            ks: vec![1, 5],
            methods,
            pearl: PearlConfig {
                max_epochs: 5,
                ..Default::default()
            },
            jobs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn record_counts_and_cells() {
        let report = run_experiment(&small(), &cfg(vec![Method::Raw, Method::Pearl])).unwrap();
        assert!(report.is_complete(), "{:?}", report.errors);
        // per fold per method: 2·3 + 1 + 2·2·3
        assert_eq!(report.records.len(), 2 * 2 * 19);
        assert!(report.aggregates.iter().all(|a| a.n_folds == 2));
        assert!(report.records.iter().all(|r| r.value.is_finite()));
    }

    #[test]
    fn aggregate_uses_population_std() {
        let mk = |fold, value| MetricRecord {
            method: Method::Raw,
            budget: 1,
            fold,
            metric: Metric::Purity,
            k: Some(1),
            class: None,
            value,
        };
        let a = aggregate(&[mk(0, 1.0), mk(1, 3.0)]);
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].mean, a[0].std, a[0].n_folds), (2.0, 1.0, 2));
    }

    #[test]
    fn json_line_shape() {
        let r = MetricRecord {
            method: Method::Pearl,
            budget: 100,
            fold: 0,
            metric: Metric::Purity,
            k: Some(1),
            class: None,
            value: 0.41,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"method":"pearl","budget":100,"fold":0,"metric":"purity","k":1,"value":0.41}"#
        );
    }

    #[test]
    fn failing_cells_are_reported() {
        let mut c = cfg(vec![Method::Raw]);
        c.budgets = vec![30, 1000];
        let report = run_experiment(&small(), &c).unwrap();
        assert_eq!(report.errors.len(), 2);
        assert!(report.records.iter().all(|r| r.budget == 30));
        assert!(report.to_json_lines().contains("\"error\":true"));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(vec![Method::Raw]);
        c.budgets = vec![300, 100];
        assert!(c.validate().is_err());
        c.budgets = vec![100];
        c.methods = vec![];
        assert!(c.validate().is_err());
        assert_eq!("lda_l2".parse::<Method>().unwrap(), Method::LdaL2);
        assert!("pca".parse::<Method>().is_err());
    }

    #[test]
    fn table_lists_methods() {
        let report = run_experiment(&small(), &cfg(vec![Method::Raw, Method::L2])).unwrap();
        let t = report.render_table();
        assert!(t.contains("Raw") && t.contains("L2") && t.contains("±"));
    }
}
