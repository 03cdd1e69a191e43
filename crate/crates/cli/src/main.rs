//! `pearl` command-line tool.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or runtime errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pearl_core::data::io::{self, Format};
use pearl_core::data::{generate_synthetic, SyntheticConfig};
use pearl_core::harness::{run_experiment, ExperimentConfig, Method};
use pearl_core::model::{Checkpoint, PearlConfig};
use pearl_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pearl", version, about = "Prototype-aligned refinement of fixed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Train a refinement model on a labeled budget sample.
    Fit(FitArgs),
    /// Apply a trained model to an embedding file.
    Transform(TransformArgs),
    /// Run the cross-validated comparison of all methods.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 400)]
    per_class: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().separation)]
    separation: f64,
    /// Per-coordinate noise scale.
    #[arg(long, default_value_t = SyntheticConfig::default().noise_sigma)]
    sigma: f64,
    /// Strength of the shared confounder direction.
    #[arg(long, default_value_t = SyntheticConfig::default().confounder_gamma)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.csv` writes CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

/// Overrides for the refinement model; unset flags keep the defaults.
#[derive(Args, Debug, Default)]
struct PearlArgs {
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    d_r: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    w_recon: Option<f64>,
    #[arg(long)]
    w_full: Option<f64>,
    #[arg(long)]
    w_align: Option<f64>,
    #[arg(long)]
    w_contrast: Option<f64>,
    #[arg(long)]
    w_cls: Option<f64>,
    #[arg(long)]
    w_ortho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

impl PearlArgs {
    fn apply(&self, cfg: &mut PearlConfig) {
        if self.d_s.is_some() {
            cfg.d_s = self.d_s;
        }
        if self.d_r.is_some() {
            cfg.d_r = self.d_r;
        }
        if self.hidden.is_some() {
            cfg.hidden = self.hidden;
        }
        let floats = [
            (self.w_recon, &mut cfg.w_recon),
            (self.w_full, &mut cfg.w_full),
            (self.w_align, &mut cfg.w_align),
            (self.w_contrast, &mut cfg.w_contrast),
            (self.w_cls, &mut cfg.w_cls),
            (self.w_ortho, &mut cfg.w_ortho),
            (self.tau, &mut cfg.tau),
            (self.lr, &mut cfg.lr),
        ];
        for (v, dst) in floats {
            if let Some(v) = v {
                *dst = v;
            }
        }
        for (v, dst) in [
            (self.batch_size, &mut cfg.batch_size),
            (self.max_epochs, &mut cfg.max_epochs),
            (self.patience, &mut cfg.patience),
        ] {
            if let Some(v) = v {
                *dst = v;
            }
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of labeled rows to draw, validation included.
    #[arg(long)]
    budget: usize,
    /// Seeds both the label sample and the model initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model output; the training trace goes to `<out-model>.trace.jsonl`.
    #[arg(long)]
    out_model: PathBuf,
    #[command(flatten)]
    pearl: PearlArgs,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Written in the same format as `--data`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "100,300,600,1200,2500,5000")]
    budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "raw,pearl,l2,pca_whiten_l2,lda_l2")]
    methods: Vec<String>,
    /// Base seed; fold `f` uses `seed + f`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores. Reports do not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Query the labeled pool against itself instead of the test fold.
    #[arg(long)]
    leave_one_out: bool,
    /// JSON-lines report path.
    #[arg(long)]
    report: PathBuf,
    /// Text table path; printed to stdout when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    pearl: PearlArgs,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = SyntheticConfig {
        classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        separation: a.separation,
        noise_sigma: a.sigma,
        confounder_gamma: a.gamma,
        seed: a.seed,
    };
    cfg.validate().map_err(usage)?;
    let ds = generate_synthetic(&cfg)?;
    for w in ds.warnings() {
        eprintln!("warning: {w}");
    }
    let table = io::EmbeddingTable::from_labeled(&ds);
    io::write_table(&a.out, Format::from_extension(&a.out), &table)?;
    println!("n={} d={} C={}", ds.len(), ds.dim(), ds.classes());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    let mut cfg = PearlConfig {
        seed: a.seed,
        ..Default::default()
    };
    a.pearl.apply(&mut cfg);
    cfg.validate().map_err(usage)?;
    let ds = io::load_embeddings(&a.data, Format::detect(&a.data)?)?;
    let trace_path = PathBuf::from(format!("{}.trace.jsonl", a.out_model.display()));
    match Checkpoint::fit(&ds, a.budget, &cfg) {
        Ok((ckpt, trace, sample)) => {
            ckpt.save(&a.out_model)?;
            write_file(&trace_path, trace.to_json_lines().as_bytes())?;
            println!(
                "trained on {} rows ({} validation), {} epochs, best epoch {} (val {:.6})",
                sample.train_indices.len(),
                sample.val_indices.len(),
                trace.epochs.len(),
                trace.best_epoch,
                trace.best_val
            );
            Ok(())
        }
        Err(Error::TrainingAborted { reason, trace }) => {
            write_file(&trace_path, trace.to_json_lines().as_bytes())?;
            Err(Failure::Data(format!(
                "training aborted: {reason}; trace written to {}",
                trace_path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_transform(a: TransformArgs) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&a.model)?;
    let format = Format::detect(&a.data)?;
    let mut table = io::read_table(&a.data, format)?;
    table.embeddings = ckpt.transform(&table.embeddings)?;
    io::write_table(&a.out, format, &table)?;
    println!("n={} d={}", table.embeddings.rows(), table.embeddings.cols());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let mut pearl = PearlConfig::default();
    a.pearl.apply(&mut pearl);
    let cfg = ExperimentConfig {
        folds: a.folds,
        budgets: a.budgets,
        ks: a.ks,
        methods,
        base_seed: a.seed,
        leave_one_out: a.leave_one_out,
        pearl,
        jobs: a.jobs,
    };
    cfg.validate().map_err(usage)?;
    let ds = io::load_embeddings(&a.data, Format::detect(&a.data)?)?;
    let report = run_experiment(&ds, &cfg)?;
    write_file(&a.report, report.to_json_lines().as_bytes())?;
    let table = report.render_table();
    match &a.table {
        Some(p) => write_file(p, table.as_bytes())?,
        None => print!("{table}"),
    }
    if report.is_complete() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "{} cell(s) failed; partial report written to {}",
            report.errors.len(),
            a.report.display()
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
