//! Synthetic data generator for the benchmark study.
//!
//! Twelve fine categories arranged as six pairs (A1/A2 through F1/F2). Six
//! training and six validation datasets are generated the same way: the first
//! four observe pairs A through E as coarse bins (F1 and F2 stay fine), the
//! last two observe every category at the finest resolution. A held-out test
//! set has fine labels and no batch effect.
//!
//! Covariates are AR(1) rows (lag-one correlation 0.5, unit marginal
//! variance). A rank-one batch shift `a * 1 u'` is added per training and
//! validation dataset, with `a` calibrated so the relative Frobenius
//! perturbation is exactly the configured batch magnitude `b`.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binning::{AnnotatedDataset, BinningSpec, CategorySet, DatasetCollection};
use crate::error::{Error, Result};
use crate::likelihood::softmax_rows_inplace;

pub const CATEGORY_NAMES: [&str; 12] = [
    "A1", "A2", "B1", "B2", "C1", "C2", "D1", "D2", "E1", "E2", "F1", "F2",
];
const N_DATASETS: usize = 6;
const N_NONZERO: usize = 100;
const AR_LAG: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Total training observations, split evenly over the six datasets.
    pub n: usize,
    pub p: usize,
    /// Number of nonzero coefficient rows whose within-pair entries are
    /// shared.
    pub s: usize,
    /// Relative Frobenius magnitude of the per-dataset batch perturbation.
    pub b: f64,
    pub seed: u64,
    pub test_n: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 4800,
            p: 500,
            s: 40,
            b: 0.1,
            seed: 1,
            test_n: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % N_DATASETS != 0 {
            return Err(Error::InvalidArgument(format!(
                "n must be a positive multiple of {N_DATASETS}, got {}",
                self.n
            )));
        }
        if self.p < N_NONZERO {
            return Err(Error::InvalidArgument(format!(
                "p must be at least {N_NONZERO}, got {}",
                self.p
            )));
        }
        if self.s > N_NONZERO {
            return Err(Error::InvalidArgument(format!(
                "s must be at most {N_NONZERO}, got {}",
                self.s
            )));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "b must be finite and nonnegative, got {}",
                self.b
            )));
        }
        if self.test_n == 0 {
            return Err(Error::InvalidArgument(
                "test_n must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Ground truth retained alongside the generated datasets.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub alpha_star: Array1<f64>,
    pub beta_star: Array2<f64>,
    /// Sorted indices of the rows of `beta_star` that are nonzero.
    pub nonzero_rows: Vec<usize>,
    /// Sorted subset of `nonzero_rows` whose paired-category entries are
    /// equal.
    pub shared_rows: Vec<usize>,
    /// True category probabilities at the test covariates.
    pub test_probs: Array2<f64>,
    /// Fine category of every observation, before binning.
    pub train_fine_labels: Vec<Vec<usize>>,
    pub validation_fine_labels: Vec<Vec<usize>>,
    /// Pre-batch covariates of each training / validation dataset.
    pub train_x_tilde: Vec<Array2<f64>>,
    pub validation_x_tilde: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub train: DatasetCollection,
    pub validation: DatasetCollection,
    pub test: AnnotatedDataset,
    pub test_binning: BinningSpec,
    pub truth: SimTruth,
}

fn fine_categories() -> CategorySet {
    CategorySet::new(CATEGORY_NAMES).unwrap()
}

fn study_binning() -> BinningSpec {
    let fine = fine_categories();
    let mut assignments = Vec::with_capacity(N_DATASETS);
    for k in 0..N_DATASETS {
        let a: Vec<String> = if k < 4 {
            CATEGORY_NAMES
                .iter()
                .map(|name| {
                    // pairs A..E collapse to their letter; F1/F2 stay fine
                    if name.starts_with('F') {
                        name.to_string()
                    } else {
                        name[..1].to_string()
                    }
                })
                .collect()
        } else {
            CATEGORY_NAMES.iter().map(|s| s.to_string()).collect()
        };
        assignments.push(a);
    }
    BinningSpec::new(fine, assignments).unwrap()
}

fn stream(seed: u64, idx: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx);
    rng
}

/// AR(1) rows: unit marginal variance, lag-one correlation 0.5.
fn ar1_matrix<R: Rng>(rng: &mut R, n: usize, p: usize) -> Array2<f64> {
    let innovation_sd = (1.0 - AR_LAG * AR_LAG).sqrt();
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let mut prev: f64 = StandardNormal.sample(rng);
        x[[i, 0]] = prev;
        for j in 1..p {
            let e: f64 = StandardNormal.sample(rng);
            prev = AR_LAG * prev + innovation_sd * e;
            x[[i, j]] = prev;
        }
    }
    x
}

fn draw_beta<R: Rng>(rng: &mut R, p: usize, s: usize) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
    let sd = 2.0_f64.sqrt();
    let mut beta = Array2::zeros((p, 12));
    let picked = sample(rng, p, N_NONZERO).into_vec();
    let shared: Vec<usize> = picked[..s].to_vec();
    for (pos, &j) in picked.iter().enumerate() {
        if pos < s {
            // pairs A..E share one draw; F1 and F2 are drawn separately
            for pair in 0..5 {
                let v: f64 = StandardNormal.sample(rng);
                beta[[j, 2 * pair]] = sd * v;
                beta[[j, 2 * pair + 1]] = sd * v;
            }
            for l in 10..12 {
                let v: f64 = StandardNormal.sample(rng);
                beta[[j, l]] = sd * v;
            }
        } else {
            for l in 0..12 {
                let v: f64 = StandardNormal.sample(rng);
                beta[[j, l]] = sd * v;
            }
        }
    }
    let mut nonzero = picked;
    let mut shared = shared;
    nonzero.sort_unstable();
    shared.sort_unstable();
    (beta, nonzero, shared)
}

fn sample_labels<R: Rng>(rng: &mut R, probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut label = row.len() - 1;
            for (l, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    label = l;
                    break;
                }
            }
            label
        })
        .collect()
}

struct GeneratedDataset {
    dataset: AnnotatedDataset,
    fine_labels: Vec<usize>,
    x_tilde: Array2<f64>,
}

fn generate_dataset<R: Rng>(
    rng: &mut R,
    n: usize,
    beta: &Array2<f64>,
    spec: &BinningSpec,
    dataset_index: usize,
    b: f64,
) -> GeneratedDataset {
    let p = beta.nrows();
    let x_tilde = ar1_matrix(rng, n, p);
    let mut probs = x_tilde.dot(beta);
    softmax_rows_inplace(&mut probs);
    let fine_labels = sample_labels(rng, &probs);
    let binning = spec.dataset(dataset_index);
    let y: Vec<usize> = fine_labels.iter().map(|&l| binning.bin_of(l)).collect();

    let mut x = x_tilde.clone();
    if b > 0.0 {
        let u: Array1<f64> = Array1::from_shape_fn(p, |_| StandardNormal.sample(rng));
        let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_norm = x_tilde.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = b * x_norm / ((n as f64).sqrt() * u_norm);
        let shift = u.mapv(|v| a * v);
        for mut row in x.rows_mut() {
            row += &shift;
        }
    }
    let z = Array2::ones((n, 1));
    GeneratedDataset {
        dataset: AnnotatedDataset::new(x, z, y).unwrap(),
        fine_labels,
        x_tilde,
    }
}

/// Relative Frobenius size of the batch perturbation actually present in a
/// dataset's covariates: `||X - X_tilde||_F / ||X_tilde||_F`.
pub fn empirical_batch_ratio(x: &Array2<f64>, x_tilde: &Array2<f64>) -> Result<f64> {
    if x.dim() != x_tilde.dim() {
        return Err(Error::DimensionMismatch {
            axis: "rows",
            expected: x_tilde.nrows(),
            actual: x.nrows(),
        });
    }
    let diff = x - x_tilde;
    let num = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = x_tilde.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "reference covariates are all zero".to_string(),
        ));
    }
    Ok(num / den)
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let spec = study_binning();
    let n_k = config.n / N_DATASETS;

    let (beta_star, nonzero_rows, shared_rows) =
        draw_beta(&mut stream(config.seed, 0), config.p, config.s);

    let gen_split = |base: u64| -> (Vec<AnnotatedDataset>, Vec<Vec<usize>>, Vec<Array2<f64>>) {
        let mut datasets = Vec::with_capacity(N_DATASETS);
        let mut fine = Vec::with_capacity(N_DATASETS);
        let mut x_tildes = Vec::with_capacity(N_DATASETS);
        for k in 0..N_DATASETS {
            let mut rng = stream(config.seed, base + k as u64);
            let g = generate_dataset(&mut rng, n_k, &beta_star, &spec, k, config.b);
            datasets.push(g.dataset);
            fine.push(g.fine_labels);
            x_tildes.push(g.x_tilde);
        }
        (datasets, fine, x_tildes)
    };
    let (train_ds, train_fine_labels, train_x_tilde) = gen_split(1);
    let (val_ds, validation_fine_labels, validation_x_tilde) = gen_split(1 + N_DATASETS as u64);

    let train = DatasetCollection::new(train_ds, spec.clone())?;
    let validation = DatasetCollection::new(val_ds, spec)?;

    let mut test_rng = stream(config.seed, 1 + 2 * N_DATASETS as u64);
    let test_x = ar1_matrix(&mut test_rng, config.test_n, config.p);
    let mut test_probs = test_x.dot(&beta_star);
    softmax_rows_inplace(&mut test_probs);
    let test_y = sample_labels(&mut test_rng, &test_probs);
    let test = AnnotatedDataset::new(
        test_x,
        Array2::zeros((config.test_n, 0)),
        test_y,
    )?;
    let test_binning = BinningSpec::identity(fine_categories(), 1);

    Ok(SimOutput {
        train,
        validation,
        test,
        test_binning,
        truth: SimTruth {
            alpha_star: Array1::zeros(12),
            beta_star,
            nonzero_rows,
            shared_rows,
            test_probs,
            train_fine_labels,
            validation_fine_labels,
            train_x_tilde,
            validation_x_tilde,
        },
    })
}
