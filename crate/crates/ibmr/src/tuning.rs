//! Tuning-parameter grid construction and pathwise fitting with warm starts.
//!
//! The head of the lambda grid is the smallest penalty weight at which the
//! all-zero `beta` satisfies the group-lasso stationarity (KKT) condition at
//! the intercept/batch-only submodel optimum. Lambdas are log-spaced down to
//! `lambda_max * lambda_min_ratio`; each rho slice is fit along decreasing
//! lambda with warm starts, and the pair minimizing validation negative
//! log-likelihood is selected.

use rayon::prelude::*;

use crate::binning::DatasetCollection;
use crate::error::{Error, Result};
use crate::likelihood::{negative_log_likelihood, Coefficients};
use crate::solver::{fit, FitResult, Init, SolverConfig};

pub const DEFAULT_N_LAMBDA: usize = 25;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 1e-3;
// Small ridge weights: the batch term only needs enough shrinkage to pin
// down the gauge against alpha, and heavier weights stop gamma from
// absorbing real dataset shifts.
pub const DEFAULT_RHOS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone)]
pub struct TuningGrid {
    /// Strictly decreasing; `lambdas[0]` is the KKT lambda_max.
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
}

/// One grid point of a fitted path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub rho: f64,
    pub fit: Option<FitResult>,
    pub validation_nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub points: Vec<PathPoint>,
    /// Index into `points` of the validation-NLL minimizer.
    pub selected: usize,
}

impl PathResult {
    pub fn selected_point(&self) -> &PathPoint {
        &self.points[self.selected]
    }

    pub fn selected_fit(&self) -> &FitResult {
        self.points[self.selected]
            .fit
            .as_ref()
            .expect("selected point has a fit")
    }

    pub fn selected_lambda_rho(&self) -> (f64, f64) {
        let p = self.selected_point();
        (p.lambda, p.rho)
    }
}

/// Fits the `beta = 0` submodel (alpha and gamma only) and returns it with
/// the largest beta-gradient row norm at its optimum.
pub(crate) fn lambda_max_with_submodel(
    collection: &DatasetCollection,
    rho: f64,
    base: &SolverConfig,
) -> Result<(f64, Coefficients)> {
    let cfg = SolverConfig {
        lambda: 0.0,
        rho,
        freeze_beta: true,
        init: Init::Zeros,
        ..base.clone()
    };
    let submodel = fit(collection, &cfg)?;
    let grads = crate::likelihood::gradients(&submodel.coeffs, collection)?;
    let max_norm = grads
        .beta
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0_f64, f64::max);
    // Nudge the head of the path a hair above the computed norm so that
    // ulp-level ties in the prox still zero every row.
    Ok((max_norm * (1.0 + 1e-12), submodel.coeffs))
}

/// Smallest lambda at which the zero `beta` matrix is stationary for the
/// group-lasso penalty, evaluated at the intercept/batch-only submodel fit.
pub fn lambda_max(collection: &DatasetCollection, rho: f64) -> Result<f64> {
    lambda_max_with_submodel(collection, rho, &SolverConfig::default()).map(|(l, _)| l)
}

/// Log-spaced lambda grid from `lambda_max` down to
/// `lambda_max * lambda_min_ratio`, paired with the supplied rho values.
pub fn build_grid(
    collection: &DatasetCollection,
    n_lambda: usize,
    lambda_min_ratio: f64,
    rhos: &[f64],
) -> Result<TuningGrid> {
    if n_lambda < 2 {
        return Err(Error::InvalidArgument(
            "n_lambda must be at least 2".to_string(),
        ));
    }
    if !(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0) {
        return Err(Error::InvalidArgument(
            "lambda_min_ratio must lie in (0, 1)".to_string(),
        ));
    }
    if rhos.is_empty() || rhos.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidArgument(
            "rho grid must be nonempty and positive".to_string(),
        ));
    }
    let min_rho = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = lambda_max(collection, min_rho)?;
    let log_max = lmax.ln();
    let log_min = (lmax * lambda_min_ratio).ln();
    let lambdas: Vec<f64> = (0..n_lambda)
        .map(|i| {
            let t = i as f64 / (n_lambda - 1) as f64;
            (log_max + t * (log_min - log_max)).exp()
        })
        .collect();
    Ok(TuningGrid {
        lambdas,
        rhos: rhos.to_vec(),
        n_lambda,
        lambda_min_ratio,
    })
}

/// Validation NLL of a fit: gamma is zeroed and batch covariates are ignored,
/// so prediction on held-out data uses only `alpha` and `beta`.
pub fn validation_nll(coeffs: &Coefficients, validation: &DatasetCollection) -> Result<f64> {
    let eval = Coefficients {
        alpha: coeffs.alpha.clone(),
        beta: coeffs.beta.clone(),
        gamma: vec![
            ndarray::Array2::zeros((validation.r(), coeffs.n_categories()));
            validation.k()
        ],
    };
    negative_log_likelihood(&eval, validation)
}

/// Fits every `(lambda, rho)` grid point with warm starts along decreasing
/// lambda (within each rho slice) and selects the validation-NLL minimizer.
/// Ties break toward larger lambda, then larger rho.
pub fn fit_path(
    train: &DatasetCollection,
    validation: &DatasetCollection,
    grid: &TuningGrid,
    config: &SolverConfig,
) -> Result<PathResult> {
    if train.binning.fine() != validation.binning.fine() {
        return Err(Error::InvalidArgument(
            "train and validation must share the fine category set".to_string(),
        ));
    }
    let slices: Vec<Vec<PathPoint>> = grid
        .rhos
        .par_iter()
        .map(|&rho| fit_rho_slice(train, validation, &grid.lambdas, rho, config))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<PathPoint> = slices.into_iter().flatten().collect();

    let mut selected: Option<usize> = None;
    for (i, pt) in points.iter().enumerate() {
        let Some(nll) = pt.validation_nll else {
            continue;
        };
        let better = match selected {
            None => true,
            Some(j) => {
                let best = &points[j];
                let best_nll = best.validation_nll.unwrap();
                nll < best_nll
                    || (nll == best_nll
                        && (pt.lambda > best.lambda
                            || (pt.lambda == best.lambda && pt.rho > best.rho)))
            }
        };
        if better {
            selected = Some(i);
        }
    }
    let selected = selected.ok_or(Error::PathFailed)?;
    Ok(PathResult { points, selected })
}

fn fit_rho_slice(
    train: &DatasetCollection,
    validation: &DatasetCollection,
    lambdas: &[f64],
    rho: f64,
    config: &SolverConfig,
) -> Result<Vec<PathPoint>> {
    let mut points = Vec::with_capacity(lambdas.len());
    // Warm-start the slice head from the beta = 0 submodel at this rho.
    let mut warm = match lambda_max_with_submodel(train, rho, config) {
        Ok((_, coeffs)) => Some(coeffs),
        Err(_) => None,
    };
    for &lambda in lambdas {
        let cfg = SolverConfig {
            lambda,
            rho,
            init: match &warm {
                Some(c) => Init::Warm(c.clone()),
                None => Init::Zeros,
            },
            freeze_beta: false,
            ..config.clone()
        };
        match fit(train, &cfg) {
            Ok(result) => {
                warm = Some(result.coeffs.clone());
                let vnll = validation_nll(&result.coeffs, validation).ok();
                points.push(PathPoint {
                    lambda,
                    rho,
                    fit: Some(result),
                    validation_nll: vnll,
                    error: None,
                });
            }
            Err(e) => {
                points.push(PathPoint {
                    lambda,
                    rho,
                    fit: None,
                    validation_nll: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(points)
}
