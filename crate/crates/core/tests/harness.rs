use pearl_core::data::{generate_synthetic, SyntheticConfig};
use pearl_core::harness::{run_experiment, ExperimentConfig, Method, Metric};
use pearl_core::model::PearlConfig;

fn corpus() -> pearl_core::LabeledDataset {
    generate_synthetic(&SyntheticConfig {
        classes: 4,
        dim: 12,
        per_class: 60,
        seed: 21,
        ..Default::default()
    })
    .unwrap()
}

fn config(methods: Vec<Method>, jobs: usize) -> ExperimentConfig {
    ExperimentConfig {
        folds: 3,
        budgets: vec![40, 100],
        ks: vec![1, 3, 10],
        methods,
        base_seed: 17,
        pearl: PearlConfig {
            max_epochs: 8,
            ..Default::default()
        },
        jobs,
        ..Default::default()
    }
}

#[test]
fn report_does_not_depend_on_worker_count() {
    let ds = corpus();
    let a = run_experiment(&ds, &config(Method::ALL.to_vec(), 1)).unwrap();
    let b = run_experiment(&ds, &config(Method::ALL.to_vec(), 3)).unwrap();
    let c = run_experiment(&ds, &config(Method::ALL.to_vec(), 1)).unwrap();
    assert!(a.is_complete(), "{:?}", a.errors);
    assert_eq!(a.to_json_lines(), b.to_json_lines());
    assert_eq!(a.to_json_lines(), c.to_json_lines());
    assert_eq!(a.render_table(), b.render_table());
}

#[test]
fn raw_and_l2_retrieval_records_coincide() {
    let report = run_experiment(&corpus(), &config(vec![Method::Raw, Method::L2], 1)).unwrap();
    let retrieval = [Metric::Purity, Metric::Hit, Metric::Mrr, Metric::F1Uniform, Metric::F1Distance];
    let pick = |m: Method| {
        report
            .records
            .iter()
            .filter(|r| r.method == m && retrieval.contains(&r.metric))
            .map(|r| (r.budget, r.fold, r.metric, r.k, r.class.clone(), r.value))
            .collect::<Vec<_>>()
    };
    let (raw, l2) = (pick(Method::Raw), pick(Method::L2));
    assert!(!raw.is_empty());
    assert_eq!(raw, l2);
}

#[test]
fn every_cell_has_one_record_per_fold() {
    let cfg = config(vec![Method::Raw, Method::Pearl, Method::LdaL2], 1);
    let ds = corpus();
    let report = run_experiment(&ds, &cfg).unwrap();
    let per_fold_method = cfg.ks.len() * 3 + 1 + cfg.ks.len() * 2 * ds.classes();
    assert_eq!(report.records.len(), per_fold_method * cfg.folds * cfg.methods.len() * cfg.budgets.len());
    assert!(report.aggregates.iter().all(|a| a.n_folds == cfg.folds));
    assert_eq!(report.aggregates.len(), per_fold_method * cfg.methods.len() * cfg.budgets.len());
    assert!(report.records.iter().all(|r| r.value.is_finite()));
    let json = report.to_json_lines();
    let lines: Vec<&str> = json.lines().collect();
    assert_eq!(lines.len(), report.records.len() + report.aggregates.len());
    assert!(lines[0].starts_with(r#"{"method":"raw","budget":40,"fold":0,"metric":"purity","k":1,"value":"#));
    assert!(lines[report.records.len()].starts_with(r#"{"aggregate":true,"method":"raw""#));
}

#[test]
fn folds_differ_but_share_the_split_seed() {
    let report = run_experiment(&corpus(), &config(vec![Method::Raw], 1)).unwrap();
    let sep: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.metric == Metric::DeltaSep && r.budget == 40)
        .map(|r| r.value)
        .collect();
    assert_eq!(sep.len(), 3);
    assert!(sep[0] != sep[1] || sep[1] != sep[2]);
}

#[test]
fn leave_one_out_queries_the_pool() {
    let mut cfg = config(vec![Method::Raw], 1);
    cfg.leave_one_out = true;
    let report = run_experiment(&corpus(), &cfg).unwrap();
    assert!(report.is_complete());
    let default = run_experiment(&corpus(), &config(vec![Method::Raw], 1)).unwrap();
    assert_ne!(report.to_json_lines(), default.to_json_lines());
}
