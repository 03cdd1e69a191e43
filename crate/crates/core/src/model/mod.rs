//! The refinement network: signal and residual encoders, the signal and full
//! decoders, the prototype head and the auxiliary classifier, together with
//! its six-term objective, exact gradients, Adam training loop with early
//! stopping, and the inference transform `x ↦ D_s(E_s(x))`.

mod checkpoint;
mod config;
mod objective;
mod params;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Dims, PearlConfig};
pub use objective::{compute_gradients, evaluate, loss_terms, LossTerms};
pub use params::{Dense, Forward, Params, TwoLayer};
pub use train::{train, train_dataset, EpochRecord, StopReason, TrainTrace, IMPROVEMENT_TOLERANCE};
