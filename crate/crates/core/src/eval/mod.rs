//! Frozen-embedding evaluation: probes, AUROC/MAE, subject-wise cross-validation
//! and multi-seed aggregation.

mod loso;
mod metrics;
mod probe;
mod seeds;
mod split;

pub use loso::{loso_cv, loso_cv_with, loso_folds, Fold, FoldResult, LosoResult};
pub use metrics::{auroc, auroc_macro, mae};
pub use probe::{fit_probe, probe_auroc, probe_lr, train_probe, HeadKind, Probe, ProbeConfig, ProbeFit, Targets};
pub use seeds::{multi_seed, write_results_csv, EvalResult};
pub use split::{stratified_split, subject_split};

use thiserror::Error;

use crate::alignment::AlignError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("only one class present: {0}")]
    SingleClass(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Optimizer(#[from] AlignError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
