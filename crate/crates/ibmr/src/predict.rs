//! Prediction on new data.
//!
//! New observations carry no batch covariates, so every mode evaluates the
//! model with `gamma = 0`: the linear predictor is `alpha + x' beta`. Argmax
//! ties resolve to the lowest canonical index / earliest support label.

use ndarray::Array2;

use crate::binning::{BinningSpec, CategorySet};
use crate::error::{Error, Result};
use crate::likelihood::{conditional_from_eta, softmax_rows_inplace, Coefficients, ProbKind, ProbMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    /// Argmax over the fine category probabilities.
    Fine,
    /// Argmax over the fine probabilities renormalized within the observed
    /// label's bin.
    Conditional,
    /// Argmax over bin-summed probabilities, restricted to the labels
    /// actually observed in the test annotations.
    Coarse,
}

/// Predicted labels plus the probabilities the argmax ran over. `probs`
/// columns correspond to `support`; `indices[i]` indexes into `support`.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub mode: PredictionMode,
    pub support: Vec<String>,
    pub labels: Vec<String>,
    pub indices: Vec<usize>,
    pub probs: ProbMatrix,
}

/// The distinct labels observed in a test annotation, in the canonical order
/// of the dataset's label list.
#[derive(Debug, Clone)]
pub struct ObservedTestLabelSet {
    /// Indices into the dataset's label list.
    pub label_indices: Vec<usize>,
    pub labels: Vec<String>,
}

impl ObservedTestLabelSet {
    pub fn from_observations(
        spec: &BinningSpec,
        dataset_index: usize,
        y: &[usize],
    ) -> Result<Self> {
        let binning = spec.dataset(dataset_index);
        let mut seen = vec![false; binning.label_count()];
        for &label in y {
            if label >= binning.label_count() {
                return Err(Error::InvalidArgument(format!(
                    "label index {label} out of range for {} labels",
                    binning.label_count()
                )));
            }
            seen[label] = true;
        }
        let label_indices: Vec<usize> =
            (0..binning.label_count()).filter(|&l| seen[l]).collect();
        let labels = label_indices
            .iter()
            .map(|&l| binning.labels()[l].clone())
            .collect();
        Ok(ObservedTestLabelSet {
            label_indices,
            labels,
        })
    }
}

fn eta_no_batch(coeffs: &Coefficients, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != coeffs.p() {
        return Err(Error::DimensionMismatch {
            axis: "features",
            expected: coeffs.p(),
            actual: x.ncols(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite entries in test covariates".to_string(),
        ));
    }
    let mut eta = x.dot(&coeffs.beta);
    eta += &coeffs.alpha;
    Ok(eta)
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fine-category prediction: softmax over the full category set, argmax.
pub fn predict_fine(
    coeffs: &Coefficients,
    x: &Array2<f64>,
    categories: &CategorySet,
) -> Result<PredictionSet> {
    if categories.len() != coeffs.n_categories() {
        return Err(Error::DimensionMismatch {
            axis: "categories",
            expected: coeffs.n_categories(),
            actual: categories.len(),
        });
    }
    let mut eta = eta_no_batch(coeffs, x)?;
    softmax_rows_inplace(&mut eta);
    let indices: Vec<usize> = eta
        .rows()
        .into_iter()
        .map(|row| argmax_row(row.as_slice().unwrap()))
        .collect();
    let labels = indices
        .iter()
        .map(|&j| categories.name(j).to_string())
        .collect();
    Ok(PredictionSet {
        mode: PredictionMode::Fine,
        support: categories.names().to_vec(),
        labels,
        indices,
        probs: ProbMatrix {
            values: eta,
            kind: ProbKind::Unconditional,
        },
    })
}

/// Conditional prediction given observed (possibly coarse) labels: the
/// fine-category probabilities are renormalized within each observation's bin
/// before the argmax. Observations with fine labels predict that label.
pub fn predict_conditional(
    coeffs: &Coefficients,
    x: &Array2<f64>,
    y: &[usize],
    spec: &BinningSpec,
    dataset_index: usize,
) -> Result<PredictionSet> {
    if spec.fine().len() != coeffs.n_categories() {
        return Err(Error::DimensionMismatch {
            axis: "categories",
            expected: coeffs.n_categories(),
            actual: spec.fine().len(),
        });
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            axis: "rows",
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let binning = spec.dataset(dataset_index);
    if let Some(&bad) = y.iter().find(|&&l| l >= binning.label_count()) {
        return Err(Error::InvalidArgument(format!(
            "label index {bad} out of range for {} labels",
            binning.label_count()
        )));
    }
    let eta = eta_no_batch(coeffs, x)?;
    let values = conditional_from_eta(&eta, y, binning);
    let indices: Vec<usize> = values
        .rows()
        .into_iter()
        .map(|row| argmax_row(row.as_slice().unwrap()))
        .collect();
    let labels = indices
        .iter()
        .map(|&j| spec.fine().name(j).to_string())
        .collect();
    Ok(PredictionSet {
        mode: PredictionMode::Conditional,
        support: spec.fine().names().to_vec(),
        labels,
        indices,
        probs: ProbMatrix {
            values,
            kind: ProbKind::Conditional,
        },
    })
}

/// Coarse prediction over the labels observed in the test annotations: each
/// candidate label's probability is the sum of its bin's fine probabilities,
/// renormalized over the observed label set.
pub fn predict_coarse(
    coeffs: &Coefficients,
    x: &Array2<f64>,
    spec: &BinningSpec,
    dataset_index: usize,
    observed: &ObservedTestLabelSet,
) -> Result<PredictionSet> {
    if spec.fine().len() != coeffs.n_categories() {
        return Err(Error::DimensionMismatch {
            axis: "categories",
            expected: coeffs.n_categories(),
            actual: spec.fine().len(),
        });
    }
    if observed.label_indices.is_empty() {
        return Err(Error::InvalidArgument(
            "empty observed test label set".to_string(),
        ));
    }
    let binning = spec.dataset(dataset_index);
    let mut eta = eta_no_batch(coeffs, x)?;
    softmax_rows_inplace(&mut eta);
    let n = eta.nrows();
    let mut values = Array2::zeros((n, observed.label_indices.len()));
    for i in 0..n {
        let row = eta.row(i);
        let mut total = 0.0;
        for (c, &label) in observed.label_indices.iter().enumerate() {
            let mass: f64 = binning.members(label).iter().map(|&l| row[l]).sum();
            values[[i, c]] = mass;
            total += mass;
        }
        if total > 0.0 {
            for c in 0..observed.label_indices.len() {
                values[[i, c]] /= total;
            }
        }
    }
    let indices: Vec<usize> = values
        .rows()
        .into_iter()
        .map(|row| argmax_row(row.as_slice().unwrap()))
        .collect();
    let labels = indices.iter().map(|&c| observed.labels[c].clone()).collect();
    Ok(PredictionSet {
        mode: PredictionMode::Coarse,
        support: observed.labels.clone(),
        labels,
        indices,
        probs: ProbMatrix {
            values,
            kind: ProbKind::Unconditional,
        },
    })
}

/// Ranks features per category by `|beta_jl| * sd_j`, descending, ties toward
/// the lower feature index. Returns up to `top_n` feature indices per
/// category.
pub fn standardized_coefficient_ranking(
    coeffs: &Coefficients,
    feature_sds: &[f64],
    top_n: usize,
) -> Result<Vec<Vec<usize>>> {
    if feature_sds.len() != coeffs.p() {
        return Err(Error::DimensionMismatch {
            axis: "features",
            expected: coeffs.p(),
            actual: feature_sds.len(),
        });
    }
    if let Some(&bad) = feature_sds.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "feature standard deviations must be positive and finite, got {bad}"
        )));
    }
    let mut out = Vec::with_capacity(coeffs.n_categories());
    for l in 0..coeffs.n_categories() {
        let mut scored: Vec<(usize, f64)> = (0..coeffs.p())
            .map(|j| (j, coeffs.beta[[j, l]].abs() * feature_sds[j]))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out.push(scored.into_iter().take(top_n).map(|(j, _)| j).collect());
    }
    Ok(out)
}
