//! Integrative binned multinomial regression.
//!
//! Fits a group-lasso penalized multinomial logistic regression model across
//! multiple datasets whose class labels are observed at differing resolutions:
//! a coarse label stands for a bin of finest-resolution categories, and the
//! likelihood sums the fine-category probabilities within each observed bin.
//! Batch effects are absorbed through per-dataset ridge-penalized coefficients
//! on user-chosen covariates.
//!
//! The crate provides the blockwise proximal gradient solver, regularization
//! path and tuning machinery, three prediction modes (fine, conditional,
//! coarse), the baseline estimators used for comparison, a simulation engine,
//! and a file-based CLI pipeline (`ibmr` binary).

pub mod baselines;
pub mod binning;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod predict;
pub mod sim;
pub mod solver;
pub mod tuning;

pub use binning::{
    validate_binning, AnnotatedDataset, BinningSpec, BinningViolation, CategorySet,
    DatasetCollection,
};
pub use error::{Error, Result};
pub use likelihood::{
    conditional_probs, gradients, negative_log_likelihood, unconditional_probs, Coefficients,
    ProbKind, ProbMatrix,
};
pub use solver::{fit, prox_group_rows, FitResult, SolverConfig};
pub use tuning::{build_grid, fit_path, lambda_max, PathResult, TuningGrid};
