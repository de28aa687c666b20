//! Binned negative log-likelihood, probability matrices, and their gradients.
//!
//! Probabilities follow the multinomial logistic link with linear predictor
//! `alpha_l + x' beta_l + z' gamma_(k)l`. A coarse observation contributes the
//! log of the summed fine-category probabilities within its bin. All softmax
//! evaluations subtract the rowwise maximum before exponentiating.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::binning::{AnnotatedDataset, BinningSpec, DatasetBinning, DatasetCollection};
use crate::error::{Error, Result};

/// The parameter triple of the model: intercepts, shared feature coefficients,
/// and per-dataset batch coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// Length `|C|`.
    pub alpha: Array1<f64>,
    /// `p x |C|`.
    pub beta: Array2<f64>,
    /// One `r x |C|` matrix per dataset.
    pub gamma: Vec<Array2<f64>>,
}

impl Coefficients {
    pub fn zeros(n_categories: usize, p: usize, r: usize, k: usize) -> Self {
        Coefficients {
            alpha: Array1::zeros(n_categories),
            beta: Array2::zeros((p, n_categories)),
            gamma: vec![Array2::zeros((r, n_categories)); k],
        }
    }

    pub fn n_categories(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.beta.nrows()
    }

    pub fn r(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.nrows())
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Applies the sum-to-zero gauge: centers `alpha` and every row of `beta`
    /// and the `gamma_(k)` across categories. Leaves probabilities unchanged.
    pub fn center(&mut self) {
        let c = self.alpha.len() as f64;
        let mean = self.alpha.sum() / c;
        self.alpha.mapv_inplace(|v| v - mean);
        for mut row in self.beta.rows_mut() {
            let m = row.sum() / c;
            if m != 0.0 {
                row.mapv_inplace(|v| v - m);
            }
        }
        for g in &mut self.gamma {
            for mut row in g.rows_mut() {
                let m = row.sum() / c;
                if m != 0.0 {
                    row.mapv_inplace(|v| v - m);
                }
            }
        }
    }

    pub(crate) fn check_dataset(&self, ds: &AnnotatedDataset, k: usize) -> Result<()> {
        if ds.p() != self.p() {
            return Err(Error::DimensionMismatch {
                axis: "features",
                expected: self.p(),
                actual: ds.p(),
            });
        }
        let gamma = self.gamma.get(k).ok_or(Error::DimensionMismatch {
            axis: "gamma blocks",
            expected: k + 1,
            actual: self.gamma.len(),
        })?;
        if ds.r() != gamma.nrows() {
            return Err(Error::DimensionMismatch {
                axis: "covariates",
                expected: gamma.nrows(),
                actual: ds.r(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbKind {
    Unconditional,
    Conditional,
}

/// `n x |C|` category probabilities, one row per observation.
#[derive(Debug, Clone)]
pub struct ProbMatrix {
    pub values: Array2<f64>,
    pub kind: ProbKind,
}

/// Linear predictors `eta = 1 alpha' + X beta + Z gamma_(k)` for one dataset.
pub(crate) fn linear_predictors(
    coeffs: &Coefficients,
    ds: &AnnotatedDataset,
    dataset_index: usize,
) -> Array2<f64> {
    let mut eta = ds.x.dot(&coeffs.beta);
    if ds.r() > 0 {
        eta += &ds.z.dot(&coeffs.gamma[dataset_index]);
    }
    eta += &coeffs.alpha;
    eta
}

/// Row softmax with max subtraction, in place.
pub(crate) fn softmax_rows_inplace(eta: &mut Array2<f64>) {
    for mut row in eta.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Eq.-style unconditional probability matrix: softmax of the linear
/// predictors over the full fine category set.
pub fn unconditional_probs(
    coeffs: &Coefficients,
    ds: &AnnotatedDataset,
    dataset_index: usize,
) -> Result<ProbMatrix> {
    coeffs.check_dataset(ds, dataset_index)?;
    let mut eta = linear_predictors(coeffs, ds, dataset_index);
    softmax_rows_inplace(&mut eta);
    Ok(ProbMatrix {
        values: eta,
        kind: ProbKind::Unconditional,
    })
}

pub(crate) fn conditional_from_eta(
    eta: &Array2<f64>,
    y: &[usize],
    binning: &DatasetBinning,
) -> Array2<f64> {
    let n = eta.nrows();
    let c = eta.ncols();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        let members = binning.members(y[i]);
        if members.len() == 1 {
            out[[i, members[0]]] = 1.0;
            continue;
        }
        let row = eta.row(i);
        let m = members
            .iter()
            .map(|&l| row[l])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &l in members {
            let e = (row[l] - m).exp();
            out[[i, l]] = e;
            sum += e;
        }
        for &l in members {
            out[[i, l]] /= sum;
        }
    }
    out
}

/// Conditional probability matrix: the softmax restricted to the observed
/// label's bin and renormalized; exact 0/1 indicator rows for fine labels.
pub fn conditional_probs(
    coeffs: &Coefficients,
    ds: &AnnotatedDataset,
    dataset_index: usize,
    spec: &BinningSpec,
) -> Result<ProbMatrix> {
    coeffs.check_dataset(ds, dataset_index)?;
    let eta = linear_predictors(coeffs, ds, dataset_index);
    let values = conditional_from_eta(&eta, &ds.y, spec.dataset(dataset_index));
    Ok(ProbMatrix {
        values,
        kind: ProbKind::Conditional,
    })
}

/// Negative log-likelihood of one dataset given its linear predictors,
/// unscaled (summed over rows).
///
/// The observed-bin probability is the literal sum of the stabilized softmax
/// entries, the same quantities [`unconditional_probs`] emits. When that sum
/// underflows to zero the row falls back to a log-domain evaluation, which is
/// always finite.
pub(crate) fn nll_from_eta(eta: &Array2<f64>, y: &[usize], binning: &DatasetBinning) -> f64 {
    let mut total = 0.0;
    for (i, row) in eta.rows().into_iter().enumerate() {
        total += row_neg_log_bin_prob(row, binning.members(y[i]));
    }
    total
}

fn row_neg_log_bin_prob(row: ArrayView1<'_, f64>, members: &[usize]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for &v in row.iter() {
        denom += (v - m).exp();
    }
    let mut bin_prob = 0.0;
    for &l in members {
        bin_prob += (row[l] - m).exp() / denom;
    }
    if bin_prob > 0.0 {
        -bin_prob.ln()
    } else {
        let mb = members
            .iter()
            .map(|&l| row[l])
            .fold(f64::NEG_INFINITY, f64::max);
        let sb: f64 = members.iter().map(|&l| (row[l] - mb).exp()).sum();
        (m + denom.ln()) - (mb + sb.ln())
    }
}

/// The scaled negative log-likelihood `(1/N) sum_k sum_i -log P(Y = y_i | x_i)`.
pub fn negative_log_likelihood(coeffs: &Coefficients, collection: &DatasetCollection) -> Result<f64> {
    let mut total = 0.0;
    for (k, ds) in collection.datasets.iter().enumerate() {
        coeffs.check_dataset(ds, k)?;
        let eta = linear_predictors(coeffs, ds, k);
        total += nll_from_eta(&eta, &ds.y, collection.binning.dataset(k));
    }
    Ok(total / collection.n_total() as f64)
}

/// Gradients of the scaled negative log-likelihood with respect to all three
/// parameter blocks.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub alpha: Array1<f64>,
    pub beta: Array2<f64>,
    pub gamma: Vec<Array2<f64>>,
}

/// `grad_beta = (1/N) sum_k X_(k)' (P_(k) - C_(k))`, and analogously for
/// `alpha` (column sums) and each `gamma_(k)` (through `Z_(k)`).
pub fn gradients(coeffs: &Coefficients, collection: &DatasetCollection) -> Result<Gradients> {
    let c = coeffs.n_categories();
    let n_total = collection.n_total() as f64;
    let mut grad_alpha = Array1::zeros(c);
    let mut grad_beta = Array2::zeros((coeffs.p(), c));
    let mut grad_gamma = Vec::with_capacity(collection.k());
    for (k, ds) in collection.datasets.iter().enumerate() {
        coeffs.check_dataset(ds, k)?;
        let eta = linear_predictors(coeffs, ds, k);
        let cond = conditional_from_eta(&eta, &ds.y, collection.binning.dataset(k));
        let mut resid = eta;
        softmax_rows_inplace(&mut resid);
        resid -= &cond;
        grad_alpha += &resid.sum_axis(Axis(0));
        grad_beta += &ds.x.t().dot(&resid);
        if ds.r() > 0 {
            grad_gamma.push(ds.z.t().dot(&resid) / n_total);
        } else {
            grad_gamma.push(Array2::zeros((0, c)));
        }
    }
    grad_alpha /= n_total;
    grad_beta /= n_total;
    Ok(Gradients {
        alpha: grad_alpha,
        beta: grad_beta,
        gamma: grad_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_coefficients, random_instance};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_probs_for_zero_coefficients() {
        let (coll, _) = random_instance(&mut ChaCha8Rng::seed_from_u64(0), 5, 3, 4, 2, 1);
        let coeffs = Coefficients::zeros(4, 3, 1, 2);
        let probs = unconditional_probs(&coeffs, &coll.datasets[0], 0).unwrap();
        for &v in probs.values.iter() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_category_intercept_probs() {
        let x = Array2::zeros((3, 1));
        let z = Array2::zeros((3, 0));
        let ds = AnnotatedDataset::new(x, z, vec![0, 0, 0]).unwrap();
        let mut coeffs = Coefficients::zeros(2, 1, 0, 1);
        coeffs.alpha = array![0.0, 3.0_f64.ln()];
        let probs = unconditional_probs(&coeffs, &ds, 0).unwrap();
        for row in probs.values.rows() {
            assert_abs_diff_eq!(row[0], 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(row[1], 0.75, epsilon = 1e-15);
        }
    }

    // Direct per-entry evaluation of the softmax without stabilization, as an
    // independent arithmetic route.
    fn direct_probs(coeffs: &Coefficients, ds: &AnnotatedDataset, k: usize) -> Array2<f64> {
        let n = ds.n();
        let c = coeffs.n_categories();
        let mut out = Array2::zeros((n, c));
        for i in 0..n {
            let mut denom = 0.0;
            for v in 0..c {
                let mut lp = coeffs.alpha[v];
                for j in 0..ds.p() {
                    lp += ds.x[[i, j]] * coeffs.beta[[j, v]];
                }
                for j in 0..ds.r() {
                    lp += ds.z[[i, j]] * coeffs.gamma[k][[j, v]];
                }
                out[[i, v]] = lp.exp();
                denom += out[[i, v]];
            }
            for v in 0..c {
                out[[i, v]] /= denom;
            }
        }
        out
    }

    #[test]
    fn unconditional_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (coll, _) = random_instance(&mut rng, 5, 3, 4, 1, 1);
        let coeffs = random_coefficients(&mut rng, 4, 3, 1, 1, 0.8);
        let probs = unconditional_probs(&coeffs, &coll.datasets[0], 0).unwrap();
        let oracle = direct_probs(&coeffs, &coll.datasets[0], 0);
        for (a, b) in probs.values.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        for row in probs.values.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_is_masked_renormalized_unconditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (coll, _) = random_instance(&mut rng, 8, 3, 4, 2, 1);
        let coeffs = random_coefficients(&mut rng, 4, 3, 1, 2, 0.8);
        for k in 0..coll.k() {
            let ds = &coll.datasets[k];
            let uncond = unconditional_probs(&coeffs, ds, k).unwrap();
            let cond = conditional_probs(&coeffs, ds, k, &coll.binning).unwrap();
            let db = coll.binning.dataset(k);
            for i in 0..ds.n() {
                let members = db.members(ds.y[i]);
                let mass: f64 = members.iter().map(|&l| uncond.values[[i, l]]).sum();
                for l in 0..4 {
                    if members.contains(&l) {
                        if members.len() == 1 {
                            assert_eq!(cond.values[[i, l]], 1.0);
                        } else {
                            assert_abs_diff_eq!(
                                cond.values[[i, l]],
                                uncond.values[[i, l]] / mass,
                                epsilon = 1e-12
                            );
                        }
                    } else {
                        assert_eq!(cond.values[[i, l]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn singleton_bin_rows_are_indicators() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (coll, _) = random_instance(&mut rng, 10, 3, 4, 2, 1);
        let coeffs = random_coefficients(&mut rng, 4, 3, 1, 2, 5.0);
        // dataset 1 of the test instance is all-fine
        let cond = conditional_probs(&coeffs, &coll.datasets[1], 1, &coll.binning).unwrap();
        let db = coll.binning.dataset(1);
        for (i, &y) in coll.datasets[1].y.iter().enumerate() {
            let l = db.members(y)[0];
            assert_eq!(cond.values[[i, l]], 1.0);
            assert_eq!(cond.values.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn nll_log4_for_uniform_fine_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (coll, _) = random_instance(&mut rng, 10, 3, 4, 2, 1);
        // restrict to the all-fine dataset only
        let fine = coll.binning.fine().clone();
        let spec = BinningSpec::identity(fine, 1);
        let ds = coll.datasets[1].clone();
        let coll1 = DatasetCollection::new(vec![ds], spec).unwrap();
        let coeffs = Coefficients::zeros(4, 3, 1, 1);
        let nll = negative_log_likelihood(&coeffs, &coll1).unwrap();
        assert_abs_diff_eq!(nll, 4.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn label_binning_everything_contributes_zero() {
        let fine = CategorySet::new(["A1", "A2", "B1"]).unwrap();
        let assignment = vec!["all".to_string(); 3];
        let spec = BinningSpec::new(fine, vec![assignment]).unwrap();
        let x = Array2::zeros((4, 2));
        let z = Array2::zeros((4, 0));
        let ds = AnnotatedDataset::new(x, z, vec![0; 4]).unwrap();
        let coll = DatasetCollection::new(vec![ds], spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs = random_coefficients(&mut rng, 3, 2, 0, 1, 1.0);
        let nll = negative_log_likelihood(&coeffs, &coll).unwrap();
        assert_abs_diff_eq!(nll, 0.0, epsilon = 1e-14);
    }

    use crate::binning::CategorySet;

    #[test]
    fn nll_matches_summed_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (coll, _) = random_instance(&mut rng, 12, 4, 4, 2, 1);
        let coeffs = random_coefficients(&mut rng, 4, 4, 1, 2, 0.7);
        let nll = negative_log_likelihood(&coeffs, &coll).unwrap();
        let mut oracle = 0.0;
        for (k, ds) in coll.datasets.iter().enumerate() {
            let probs = direct_probs(&coeffs, ds, k);
            let db = coll.binning.dataset(k);
            for i in 0..ds.n() {
                let mass: f64 = db.members(ds.y[i]).iter().map(|&l| probs[[i, l]]).sum();
                oracle -= mass.ln();
            }
        }
        oracle /= coll.n_total() as f64;
        assert_abs_diff_eq!(nll, oracle, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (coll, _) = random_instance(&mut rng, 40, 6, 4, 2, 1);
            let coeffs = random_coefficients(&mut rng, 4, 6, 1, 2, 0.5);
            check_gradients(&coeffs, &coll, 1e-5, 1e-5);
        }
    }

    pub(crate) fn check_gradients(
        coeffs: &Coefficients,
        coll: &DatasetCollection,
        step: f64,
        rel_tol: f64,
    ) {
        let grads = gradients(coeffs, coll).unwrap();
        let f = |c: &Coefficients| negative_log_likelihood(c, coll).unwrap();
        let check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * step);
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / scale < rel_tol,
                "gradient mismatch: analytic {analytic}, numeric {numeric}"
            );
        };
        for l in 0..coeffs.n_categories() {
            let mut up = coeffs.clone();
            up.alpha[l] += step;
            let mut dn = coeffs.clone();
            dn.alpha[l] -= step;
            check(grads.alpha[l], f(&up), f(&dn));
        }
        for j in 0..coeffs.p() {
            for l in 0..coeffs.n_categories() {
                let mut up = coeffs.clone();
                up.beta[[j, l]] += step;
                let mut dn = coeffs.clone();
                dn.beta[[j, l]] -= step;
                check(grads.beta[[j, l]], f(&up), f(&dn));
            }
        }
        for k in 0..coll.k() {
            for j in 0..coeffs.r() {
                for l in 0..coeffs.n_categories() {
                    let mut up = coeffs.clone();
                    up.gamma[k][[j, l]] += step;
                    let mut dn = coeffs.clone();
                    dn.gamma[k][[j, l]] -= step;
                    check(grads.gamma[k][[j, l]], f(&up), f(&dn));
                }
            }
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (coll, _) = random_instance(&mut rng, 30, 5, 4, 2, 1);
        let coeffs = random_coefficients(&mut rng, 4, 5, 1, 2, 0.6);
        let grads = gradients(&coeffs, &coll).unwrap();
        assert_abs_diff_eq!(grads.alpha.sum(), 0.0, epsilon = 1e-12);
        for row in grads.beta.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
        }
        for g in &grads.gamma {
            for row in g.rows() {
                assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradients_vanish_at_indicator_fit() {
        // All labels fine and unconditional rows equal to the label indicator:
        // drive the correct category's predictor far above the others.
        let fine = CategorySet::new(["c0", "c1"]).unwrap();
        let spec = BinningSpec::identity(fine, 1);
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let z = Array2::zeros((3, 0));
        let ds = AnnotatedDataset::new(x, z, vec![0, 1, 0]).unwrap();
        let coll = DatasetCollection::new(vec![ds], spec).unwrap();
        let mut coeffs = Coefficients::zeros(2, 2, 0, 1);
        coeffs.beta = array![[40.0, -40.0], [-40.0, 40.0]];
        let grads = gradients(&coeffs, &coll).unwrap();
        for &v in grads.alpha.iter().chain(grads.beta.iter()) {
            assert!(v.abs() < 1e-8, "residual gradient {v}");
        }
    }

    #[test]
    fn shift_invariance_of_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (coll, _) = random_instance(&mut rng, 25, 4, 4, 2, 1);
        let coeffs = random_coefficients(&mut rng, 4, 4, 1, 2, 0.9);
        let nll = negative_log_likelihood(&coeffs, &coll).unwrap();
        let mut shifted = coeffs.clone();
        shifted.alpha += 1.7;
        for mut row in shifted.beta.rows_mut() {
            row += 0.4;
        }
        for g in &mut shifted.gamma {
            for mut row in g.rows_mut() {
                row -= 2.3;
            }
        }
        let nll2 = negative_log_likelihood(&shifted, &coll).unwrap();
        assert_abs_diff_eq!(nll, nll2, epsilon = 1e-10);
    }

    #[test]
    fn centering_preserves_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (coll, _) = random_instance(&mut rng, 25, 4, 4, 2, 1);
        let mut coeffs = random_coefficients(&mut rng, 4, 4, 1, 2, 0.9);
        let nll = negative_log_likelihood(&coeffs, &coll).unwrap();
        coeffs.center();
        assert_abs_diff_eq!(coeffs.alpha.sum(), 0.0, epsilon = 1e-12);
        for row in coeffs.beta.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
        }
        let nll2 = negative_log_likelihood(&coeffs, &coll).unwrap();
        assert_abs_diff_eq!(nll, nll2, epsilon = 1e-10);
    }

    #[test]
    fn nll_finite_for_extreme_predictors() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (coll, _) = random_instance(&mut rng, 10, 3, 4, 2, 1);
        let mut coeffs = random_coefficients(&mut rng, 4, 3, 1, 2, 1.0);
        coeffs.alpha *= 1e4;
        coeffs.beta *= 1e4;
        let nll = negative_log_likelihood(&coeffs, &coll).unwrap();
        assert!(nll.is_finite(), "nll not finite: {nll}");
        let probs = unconditional_probs(&coeffs, &coll.datasets[0], 0).unwrap();
        for row in probs.values.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (coll, _) = random_instance(&mut rng, 5, 3, 4, 2, 1);
        let coeffs = Coefficients::zeros(4, 7, 1, 2);
        let err = unconditional_probs(&coeffs, &coll.datasets[0], 0).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                axis: "features",
                ..
            }
        ));
    }
}
