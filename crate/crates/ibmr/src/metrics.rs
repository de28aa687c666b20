//! Evaluation metrics for predicted labels and probability estimates.

use crate::error::{Error, Result};
use crate::likelihood::ProbMatrix;
use crate::predict::PredictionSet;

/// Floor applied to estimated probabilities inside the KL logarithm.
const KL_CLAMP: f64 = 1e-12;

/// Fraction of observations whose predicted label differs from the observed
/// one. Errors if an observed label lies outside the prediction's support.
pub fn error_rate(pred: &PredictionSet, observed: &[String]) -> Result<f64> {
    if observed.len() != pred.labels.len() {
        return Err(Error::DimensionMismatch {
            axis: "rows",
            expected: pred.labels.len(),
            actual: observed.len(),
        });
    }
    if observed.is_empty() {
        return Err(Error::InvalidArgument(
            "error rate of an empty label set".to_string(),
        ));
    }
    for label in observed {
        if !pred.support.contains(label) {
            return Err(Error::InvalidArgument(format!(
                "observed label `{label}` not in prediction support"
            )));
        }
    }
    let wrong = pred
        .labels
        .iter()
        .zip(observed)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / observed.len() as f64)
}

fn check_prob_shapes(truth: &ProbMatrix, estimate: &ProbMatrix) -> Result<()> {
    if truth.values.dim() != estimate.values.dim() {
        return Err(Error::DimensionMismatch {
            axis: "rows",
            expected: truth.values.nrows(),
            actual: estimate.values.nrows(),
        });
    }
    if truth.values.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "probability matrices have no rows".to_string(),
        ));
    }
    Ok(())
}

/// Mean over rows of `KL(truth || estimate)`. Zero truth entries contribute
/// nothing; estimated probabilities are clamped below at 1e-12 inside the
/// logarithm, so the result is always finite.
pub fn kl_divergence(truth: &ProbMatrix, estimate: &ProbMatrix) -> Result<f64> {
    check_prob_shapes(truth, estimate)?;
    let n = truth.values.nrows();
    let mut total = 0.0;
    for (t_row, e_row) in truth.values.rows().into_iter().zip(estimate.values.rows()) {
        for (&t, &e) in t_row.iter().zip(e_row.iter()) {
            if t > 0.0 {
                total += t * (t / e.max(KL_CLAMP)).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean over rows of the Hellinger distance
/// `sqrt(1 - sum_l sqrt(p_l q_l))`; bounded in `[0, 1]`.
pub fn hellinger_distance(truth: &ProbMatrix, estimate: &ProbMatrix) -> Result<f64> {
    check_prob_shapes(truth, estimate)?;
    let n = truth.values.nrows();
    let mut total = 0.0;
    for (t_row, e_row) in truth.values.rows().into_iter().zip(estimate.values.rows()) {
        let affinity: f64 = t_row
            .iter()
            .zip(e_row.iter())
            .map(|(&t, &e)| (t * e).sqrt())
            .sum();
        total += (1.0 - affinity).max(0.0).sqrt();
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::ProbKind;
    use crate::predict::PredictionMode;
    use ndarray::array;

    fn probs(values: ndarray::Array2<f64>) -> ProbMatrix {
        ProbMatrix {
            values,
            kind: ProbKind::Unconditional,
        }
    }

    fn pred(labels: &[&str], support: &[&str]) -> PredictionSet {
        let support: Vec<String> = support.iter().map(|s| s.to_string()).collect();
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let indices = labels
            .iter()
            .map(|l| support.iter().position(|s| s == l).unwrap())
            .collect();
        let n = labels.len();
        let c = support.len();
        PredictionSet {
            mode: PredictionMode::Fine,
            support,
            labels,
            indices,
            probs: probs(ndarray::Array2::zeros((n, c))),
        }
    }

    #[test]
    fn error_rate_counts_mismatches() {
        let p = pred(&["a", "b", "a", "c"], &["a", "b", "c"]);
        let obs: Vec<String> = ["a", "c", "a", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(error_rate(&p, &obs).unwrap(), 0.25);
    }

    #[test]
    fn error_rate_rejects_foreign_labels() {
        let p = pred(&["a"], &["a", "b"]);
        let obs = vec!["z".to_string()];
        assert!(error_rate(&p, &obs).is_err());
    }

    #[test]
    fn kl_zero_for_identical_distributions() {
        let q = probs(array![[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]]);
        assert_eq!(kl_divergence(&q, &q.clone()).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_hand_computation() {
        let t = probs(array![[0.5, 0.5]]);
        let e = probs(array![[0.25, 0.75]]);
        let expect = 0.5 * (0.5_f64 / 0.25).ln() + 0.5 * (0.5_f64 / 0.75).ln();
        assert!((kl_divergence(&t, &e).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn kl_finite_when_estimate_has_zeros() {
        let t = probs(array![[1.0, 0.0]]);
        let e = probs(array![[0.0, 1.0]]);
        let v = kl_divergence(&t, &e).unwrap();
        assert!(v.is_finite());
        assert!((v - (1.0_f64 / 1e-12).ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_ignores_zero_truth_entries() {
        let t = probs(array![[1.0, 0.0]]);
        let e = probs(array![[1.0, 0.0]]);
        assert_eq!(kl_divergence(&t, &e).unwrap(), 0.0);
    }

    #[test]
    fn hellinger_bounds() {
        let t = probs(array![[1.0, 0.0], [0.5, 0.5]]);
        // disjoint support: distance 1
        let e1 = probs(array![[0.0, 1.0], [0.5, 0.5]]);
        let v = hellinger_distance(&t, &e1).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        // identical: distance 0
        assert!(hellinger_distance(&t, &t.clone()).unwrap() < 1e-7);
    }

    #[test]
    fn hellinger_matches_hand_computation() {
        let t = probs(array![[0.5, 0.5]]);
        let e = probs(array![[0.25, 0.75]]);
        let affinity = (0.5_f64 * 0.25).sqrt() + (0.5_f64 * 0.75).sqrt();
        let expect = (1.0 - affinity).sqrt();
        assert!((hellinger_distance(&t, &e).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let t = probs(array![[0.5, 0.5]]);
        let e = probs(array![[0.2, 0.3, 0.5]]);
        assert!(kl_divergence(&t, &e).is_err());
        assert!(hellinger_distance(&t, &e).is_err());
    }
}
