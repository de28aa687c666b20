//! Comparison estimators built by transforming the training data.
//!
//! Each baseline reduces to the same solver on a modified collection:
//! intercept-only batch covariates, no batch term at all, the fine-labeled
//! subset, relabeled coarse observations, or oracle fine labels.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::binning::{
    validate_binning, AnnotatedDataset, BinningSpec, DatasetCollection,
};
use crate::error::{Error, Result};
use crate::likelihood::{conditional_from_eta, Coefficients};
use crate::solver::SolverConfig;
use crate::tuning::{build_grid, fit_path, PathResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// The full model as supplied.
    Ibmr,
    /// Batch covariates replaced by a per-dataset intercept column.
    IbmrInt,
    /// Batch term removed entirely.
    IbmrNg,
    /// Only observations with finest-resolution labels, no batch term.
    Subset,
    /// Coarse labels replaced by the conditional argmax of a subset fit,
    /// then refit on all observations with no batch term.
    Relabel,
    /// True fine labels with a per-dataset intercept column.
    IbmrIntOrc,
    /// True fine labels, no batch term (plain group lasso).
    GlOrc,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ibmr,
        Method::IbmrInt,
        Method::IbmrNg,
        Method::Subset,
        Method::Relabel,
        Method::IbmrIntOrc,
        Method::GlOrc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ibmr => "IBMR",
            Method::IbmrInt => "IBMR-int",
            Method::IbmrNg => "IBMR-NG",
            Method::Subset => "subset",
            Method::Relabel => "relabel",
            Method::IbmrIntOrc => "IBMR-int-ORC",
            Method::GlOrc => "GL-ORC",
        }
    }

    /// Whether the transformed problem carries a batch term; without one the
    /// ridge weight has no effect and a single grid value suffices.
    pub fn has_batch_term(&self) -> bool {
        matches!(self, Method::Ibmr | Method::IbmrInt | Method::IbmrIntOrc)
    }

    /// Whether the method needs the true fine labels.
    pub fn is_oracle(&self) -> bool {
        matches!(self, Method::IbmrIntOrc | Method::GlOrc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

fn with_intercept_z(ds: &AnnotatedDataset) -> AnnotatedDataset {
    AnnotatedDataset::new(ds.x.clone(), Array2::ones((ds.n(), 1)), ds.y.clone()).unwrap()
}

fn without_z(ds: &AnnotatedDataset) -> AnnotatedDataset {
    AnnotatedDataset::new(ds.x.clone(), Array2::zeros((ds.n(), 0)), ds.y.clone()).unwrap()
}

/// Batch covariates replaced with a single all-ones column per dataset.
pub fn make_ibmr_int(coll: &DatasetCollection) -> DatasetCollection {
    let datasets = coll.datasets.iter().map(with_intercept_z).collect();
    DatasetCollection::new(datasets, coll.binning.clone()).unwrap()
}

/// Batch covariates removed (zero columns); the ridge weight becomes inert.
pub fn make_ibmr_ng(coll: &DatasetCollection) -> DatasetCollection {
    let datasets = coll.datasets.iter().map(without_z).collect();
    DatasetCollection::new(datasets, coll.binning.clone()).unwrap()
}

/// Keeps only observations whose label is a singleton bin, relabeled to the
/// fine category index under an identity binning. Datasets left with no rows
/// are dropped. Errors if some category is then never observed.
pub fn make_subset(coll: &DatasetCollection) -> Result<DatasetCollection> {
    let fine = coll.binning.fine().clone();
    let mut datasets = Vec::new();
    for (k, ds) in coll.datasets.iter().enumerate() {
        let binning = coll.binning.dataset(k);
        let keep: Vec<usize> = (0..ds.n())
            .filter(|&i| binning.is_fine_label(ds.y[i]))
            .collect();
        if keep.is_empty() {
            continue;
        }
        let x = ds.x.select(ndarray::Axis(0), &keep);
        let y: Vec<usize> = keep
            .iter()
            .map(|&i| binning.members(ds.y[i])[0])
            .collect();
        datasets.push(AnnotatedDataset::new(x, Array2::zeros((keep.len(), 0)), y)?);
    }
    if datasets.is_empty() {
        return Err(Error::Coverage(
            "no observations carry a finest-resolution label".to_string(),
        ));
    }
    let spec = BinningSpec::identity(fine, datasets.len());
    let coll = DatasetCollection::new(datasets, spec)?;
    let missing: Vec<String> = validate_binning(&coll)
        .into_iter()
        .filter_map(|v| match v {
            crate::binning::BinningViolation::CategoryNeverObservedFine { category } => {
                Some(category)
            }
            _ => None,
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(format!(
            "categories never observed after subsetting: {}",
            missing.join(", ")
        )));
    }
    Ok(coll)
}

/// Replaces every observation's label with the conditional-argmax fine
/// category under `coeffs` (batch term zeroed), yielding an all-fine
/// collection with no batch covariates.
pub fn make_relabel(
    coll: &DatasetCollection,
    coeffs: &Coefficients,
) -> Result<DatasetCollection> {
    let fine = coll.binning.fine().clone();
    if coeffs.n_categories() != fine.len() || coeffs.p() != coll.p() {
        return Err(Error::DimensionMismatch {
            axis: "features",
            expected: coll.p(),
            actual: coeffs.p(),
        });
    }
    let mut datasets = Vec::with_capacity(coll.k());
    for (k, ds) in coll.datasets.iter().enumerate() {
        let mut eta = ds.x.dot(&coeffs.beta);
        eta += &coeffs.alpha;
        let cond = conditional_from_eta(&eta, &ds.y, coll.binning.dataset(k));
        let y: Vec<usize> = cond
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (l, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = l;
                    }
                }
                best
            })
            .collect();
        datasets.push(AnnotatedDataset::new(
            ds.x.clone(),
            Array2::zeros((ds.n(), 0)),
            y,
        )?);
    }
    let spec = BinningSpec::identity(fine, datasets.len());
    DatasetCollection::new(datasets, spec)
}

/// Replaces labels with the true fine categories under an identity binning.
/// `intercept_z` selects between a per-dataset intercept column and no batch
/// term at all.
pub fn make_oracle(
    coll: &DatasetCollection,
    fine_labels: &[Vec<usize>],
    intercept_z: bool,
) -> Result<DatasetCollection> {
    if fine_labels.len() != coll.k() {
        return Err(Error::DimensionMismatch {
            axis: "datasets",
            expected: coll.k(),
            actual: fine_labels.len(),
        });
    }
    let fine = coll.binning.fine().clone();
    let mut datasets = Vec::with_capacity(coll.k());
    for (ds, labels) in coll.datasets.iter().zip(fine_labels) {
        if labels.len() != ds.n() {
            return Err(Error::DimensionMismatch {
                axis: "rows",
                expected: ds.n(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= fine.len()) {
            return Err(Error::InvalidArgument(format!(
                "fine label index {bad} out of range"
            )));
        }
        let z = if intercept_z {
            Array2::ones((ds.n(), 1))
        } else {
            Array2::zeros((ds.n(), 0))
        };
        datasets.push(AnnotatedDataset::new(ds.x.clone(), z, labels.clone())?);
    }
    let spec = BinningSpec::identity(fine, datasets.len());
    DatasetCollection::new(datasets, spec)
}

/// Grid and solver settings shared by a benchmark run.
#[derive(Debug, Clone)]
pub struct PathSettings {
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub rhos: Vec<f64>,
    pub solver: SolverConfig,
}

impl Default for PathSettings {
    fn default() -> Self {
        PathSettings {
            n_lambda: crate::tuning::DEFAULT_N_LAMBDA,
            lambda_min_ratio: crate::tuning::DEFAULT_LAMBDA_MIN_RATIO,
            rhos: crate::tuning::DEFAULT_RHOS.to_vec(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    pub path: PathResult,
}

impl MethodFit {
    pub fn coeffs(&self) -> &Coefficients {
        &self.path.selected_fit().coeffs
    }
}

/// Runs one method end to end: transform the data, build its own tuning grid,
/// fit the path, select by validation NLL. Oracle methods require the true
/// fine labels of both splits.
pub fn fit_method(
    method: Method,
    train: &DatasetCollection,
    validation: &DatasetCollection,
    oracle_fine: Option<(&[Vec<usize>], &[Vec<usize>])>,
    settings: &PathSettings,
) -> Result<MethodFit> {
    let rhos: Vec<f64> = if method.has_batch_term() {
        settings.rhos.clone()
    } else {
        vec![settings.rhos[0]]
    };
    let run = |train_t: &DatasetCollection, validation_t: &DatasetCollection| -> Result<PathResult> {
        let grid = build_grid(train_t, settings.n_lambda, settings.lambda_min_ratio, &rhos)?;
        fit_path(train_t, validation_t, &grid, &settings.solver)
    };
    let path = match method {
        Method::Ibmr => run(train, validation)?,
        Method::IbmrInt => run(&make_ibmr_int(train), validation)?,
        Method::IbmrNg => run(&make_ibmr_ng(train), validation)?,
        Method::Subset => run(&make_subset(train)?, validation)?,
        Method::Relabel => {
            let subset = make_subset(train)?;
            let stage1 = run(&subset, validation)?;
            let relabeled = make_relabel(train, &stage1.selected_fit().coeffs)?;
            run(&relabeled, validation)?
        }
        Method::IbmrIntOrc | Method::GlOrc => {
            let (train_fine, validation_fine) = oracle_fine.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "method {method} requires true fine labels"
                ))
            })?;
            let intercept = method == Method::IbmrIntOrc;
            let train_t = make_oracle(train, train_fine, intercept)?;
            let validation_t = make_oracle(validation, validation_fine, false)?;
            run(&train_t, &validation_t)?
        }
    };
    Ok(MethodFit { method, path })
}

/// Test-set quality of a fitted model against simulation ground truth.
#[derive(Debug, Clone, Copy)]
pub struct TestEvaluation {
    pub kl: f64,
    pub hellinger: f64,
    pub error_rate: f64,
}

/// Evaluates fine predictions on a simulated test set: KL and Hellinger
/// against the true category probabilities, error rate against the true fine
/// labels.
pub fn evaluate_on_test(
    coeffs: &Coefficients,
    sim: &crate::sim::SimOutput,
) -> Result<TestEvaluation> {
    let fine = sim.test_binning.fine();
    let pred = crate::predict::predict_fine(coeffs, &sim.test.x, fine)?;
    let truth = crate::likelihood::ProbMatrix {
        values: sim.truth.test_probs.clone(),
        kind: crate::likelihood::ProbKind::Unconditional,
    };
    let kl = crate::metrics::kl_divergence(&truth, &pred.probs)?;
    let hellinger = crate::metrics::hellinger_distance(&truth, &pred.probs)?;
    let observed: Vec<String> = sim.test.y.iter().map(|&l| fine.name(l).to_string()).collect();
    let error_rate = crate::metrics::error_rate(&pred, &observed)?;
    Ok(TestEvaluation {
        kl,
        hellinger,
        error_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fit, SolverConfig};
    use crate::testutil::random_instance;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> DatasetCollection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_instance(&mut rng, 30, 5, 4, 3, 2).0
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn intercept_variant_replaces_z_with_ones() {
        let coll = instance(1);
        let t = make_ibmr_int(&coll);
        for (orig, ds) in coll.datasets.iter().zip(&t.datasets) {
            assert_eq!(ds.r(), 1);
            assert!(ds.z.iter().all(|&v| v == 1.0));
            assert_eq!(ds.x, orig.x);
            assert_eq!(ds.y, orig.y);
        }
    }

    #[test]
    fn no_gamma_variant_drops_z_and_ignores_rho() {
        let coll = instance(2);
        let t = make_ibmr_ng(&coll);
        assert_eq!(t.r(), 0);
        let fit_at = |rho: f64| {
            let cfg = SolverConfig {
                lambda: 0.05,
                rho,
                ..SolverConfig::default()
            };
            fit(&t, &cfg).unwrap()
        };
        let a = fit_at(0.01);
        let b = fit_at(10.0);
        assert_eq!(a.coeffs.beta, b.coeffs.beta);
        assert_eq!(a.coeffs.alpha, b.coeffs.alpha);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn subset_keeps_only_fine_rows() {
        let coll = instance(3);
        let sub = make_subset(&coll).unwrap();
        assert_eq!(sub.r(), 0);
        let expected_rows: usize = coll
            .datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                let b = coll.binning.dataset(k);
                ds.y.iter().filter(|&&y| b.is_fine_label(y)).count()
            })
            .sum();
        assert_eq!(sub.n_total(), expected_rows);
        // all labels fine under identity binning
        for (k, ds) in sub.datasets.iter().enumerate() {
            let b = sub.binning.dataset(k);
            assert!(ds.y.iter().all(|&y| b.is_fine_label(y)));
        }
        // row content preserved: check dataset 1 (all-fine) is intact
        assert_eq!(sub.datasets[1].x, coll.datasets[1].x);
        assert_eq!(sub.datasets[1].y, coll.datasets[1].y);
    }

    #[test]
    fn subset_errors_when_coverage_is_lost() {
        // single dataset where category c3 only ever appears inside a bin
        let fine = crate::binning::CategorySet::new(["c0", "c1", "c2", "c3"]).unwrap();
        let spec = BinningSpec::new(
            fine,
            vec![vec![
                "c0".to_string(),
                "c1".to_string(),
                "g".to_string(),
                "g".to_string(),
            ]],
        )
        .unwrap();
        let x = array![[0.1], [0.2], [0.3], [0.4]];
        let z = Array2::zeros((4, 0));
        let b = spec.dataset(0);
        let y = vec![
            b.label_index("c0").unwrap(),
            b.label_index("c1").unwrap(),
            b.label_index("g").unwrap(),
            b.label_index("g").unwrap(),
        ];
        let coll = DatasetCollection::new(
            vec![AnnotatedDataset::new(x, z, y).unwrap()],
            spec,
        )
        .unwrap();
        assert!(matches!(make_subset(&coll), Err(Error::Coverage(_))));
    }

    #[test]
    fn relabel_respects_bins_and_keeps_fine_labels() {
        let fine = crate::binning::CategorySet::new(["c0", "c1", "c2"]).unwrap();
        let spec = BinningSpec::new(
            fine,
            vec![vec!["g".to_string(), "g".to_string(), "c2".to_string()]],
        )
        .unwrap();
        let x = array![[1.0], [-1.0], [0.0]];
        let b = spec.dataset(0);
        let g = b.label_index("g").unwrap();
        let c2 = b.label_index("c2").unwrap();
        let coll = DatasetCollection::new(
            vec![AnnotatedDataset::new(x, Array2::zeros((3, 0)), vec![g, g, c2]).unwrap()],
            spec,
        )
        .unwrap();
        // beta makes c0 win at positive x and c1 at negative x; c2 dominates
        // everywhere but must not be predicted for bin-g observations
        let coeffs = Coefficients {
            alpha: array![0.0, 0.0, 5.0],
            beta: array![[2.0, -2.0, 0.0]],
            gamma: vec![],
        };
        let relabeled = make_relabel(&coll, &coeffs).unwrap();
        assert_eq!(relabeled.datasets[0].y, vec![0, 1, 2]);
        assert_eq!(relabeled.r(), 0);
        assert!(relabeled
            .binning
            .dataset(0)
            .is_fine_label(relabeled.datasets[0].y[0]));
    }

    #[test]
    fn oracle_restores_fine_labels() {
        let coll = instance(4);
        let fine_labels: Vec<Vec<usize>> = coll
            .datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                let b = coll.binning.dataset(k);
                ds.y.iter().map(|&y| b.members(y)[0]).collect()
            })
            .collect();
        let orc = make_oracle(&coll, &fine_labels, true).unwrap();
        assert_eq!(orc.r(), 1);
        assert_eq!(orc.datasets[0].y, fine_labels[0]);
        assert!(orc
            .binning
            .dataset(0)
            .labels()
            .iter()
            .eq(coll.binning.fine().names()));

        let gl = make_oracle(&coll, &fine_labels, false).unwrap();
        assert_eq!(gl.r(), 0);

        let short = vec![vec![0]; coll.k()];
        assert!(make_oracle(&coll, &short, true).is_err());
    }

    #[test]
    fn fit_method_runs_every_method_on_a_small_instance() {
        let train = instance(10);
        let validation = instance(11);
        let fine_of = |coll: &DatasetCollection| -> Vec<Vec<usize>> {
            coll.datasets
                .iter()
                .enumerate()
                .map(|(k, ds)| {
                    let b = coll.binning.dataset(k);
                    ds.y.iter().map(|&y| b.members(y)[0]).collect()
                })
                .collect()
        };
        let train_fine = fine_of(&train);
        let validation_fine = fine_of(&validation);
        let settings = PathSettings {
            n_lambda: 4,
            lambda_min_ratio: 0.1,
            rhos: vec![0.1, 1.0],
            ..PathSettings::default()
        };
        for method in Method::ALL {
            let oracle = method
                .is_oracle()
                .then_some((train_fine.as_slice(), validation_fine.as_slice()));
            let result = fit_method(method, &train, &validation, oracle, &settings).unwrap();
            let expected_points = if method.has_batch_term() { 8 } else { 4 };
            assert_eq!(result.path.points.len(), expected_points, "{method}");
            assert!(result.coeffs().is_finite());
        }
        // oracle methods refuse to run without fine labels
        assert!(fit_method(Method::GlOrc, &train, &validation, None, &settings).is_err());
    }
}
