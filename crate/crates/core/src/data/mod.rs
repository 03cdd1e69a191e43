//! Embedding/label storage, file formats, split planning and the synthetic
//! corpus generator.

mod dataset;
pub mod io;
mod split;
mod synth;

pub use dataset::{LabelTable, LabeledDataset, Subset};
pub use split::{sample_label_budget, stratified_kfold, BudgetSample, SplitPlan, VALIDATION_FRACTION};
pub use synth::{generate_synthetic, SyntheticConfig};
