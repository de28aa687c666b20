//! Label sets, per-dataset binning functions, and the datasets they annotate.
//!
//! A `BinningSpec` records, for each dataset, how the finest-resolution
//! categories were collapsed into the (possibly coarser) labels actually used
//! when annotating that dataset. The inverse map ("unbinning") gives the set
//! of fine categories compatible with an observed label.

use std::collections::HashMap;
use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Ordered set of finest-resolution category names. Position encodes the
/// canonical numeric index used for all coefficient and probability columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl CategorySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 categories, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidArgument(
                    "empty category name".to_string(),
                ));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate category name `{name}`"
                )));
            }
        }
        Ok(CategorySet { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Binning for a single dataset: the forward map (fine index -> coarse label)
/// and its inverse image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBinning {
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    fine_to_coarse: Vec<usize>,
    bins: Vec<Vec<usize>>,
}

impl DatasetBinning {
    fn new(fine_count: usize, assignment: &[String]) -> Result<Self> {
        if assignment.len() != fine_count {
            return Err(Error::DimensionMismatch {
                axis: "binning assignment",
                expected: fine_count,
                actual: assignment.len(),
            });
        }
        let mut labels: Vec<String> = Vec::new();
        let mut label_index: HashMap<String, usize> = HashMap::new();
        let mut fine_to_coarse = Vec::with_capacity(fine_count);
        for coarse in assignment {
            if coarse.is_empty() {
                return Err(Error::InvalidArgument("empty coarse label".to_string()));
            }
            let idx = *label_index.entry(coarse.clone()).or_insert_with(|| {
                labels.push(coarse.clone());
                labels.len() - 1
            });
            fine_to_coarse.push(idx);
        }
        let mut bins = vec![Vec::new(); labels.len()];
        for (fine, &coarse) in fine_to_coarse.iter().enumerate() {
            bins[coarse].push(fine);
        }
        Ok(DatasetBinning {
            labels,
            label_index,
            fine_to_coarse,
            bins,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    /// Forward binning map: fine category index to coarse label index.
    pub fn bin_of(&self, fine: usize) -> usize {
        self.fine_to_coarse[fine]
    }

    /// Inverse image of a coarse label: the fine category indices it collects,
    /// in canonical order.
    pub fn members(&self, coarse: usize) -> &[usize] {
        &self.bins[coarse]
    }

    pub fn is_fine_label(&self, coarse: usize) -> bool {
        self.bins[coarse].len() == 1
    }
}

/// Binning functions for all `K` datasets over a shared fine category set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinningSpec {
    fine: CategorySet,
    per_dataset: Vec<DatasetBinning>,
}

impl BinningSpec {
    /// `assignments[k][l]` is the coarse label used by dataset `k` for fine
    /// category `l`. Coarse labels are ordered by first appearance.
    pub fn new(fine: CategorySet, assignments: Vec<Vec<String>>) -> Result<Self> {
        let per_dataset = assignments
            .iter()
            .map(|a| DatasetBinning::new(fine.len(), a))
            .collect::<Result<Vec<_>>>()?;
        Ok(BinningSpec { fine, per_dataset })
    }

    /// All datasets observe every category at the finest resolution.
    pub fn identity(fine: CategorySet, n_datasets: usize) -> Self {
        let assignment: Vec<String> = fine.names().to_vec();
        let per_dataset = (0..n_datasets)
            .map(|_| DatasetBinning::new(fine.len(), &assignment).expect("identity binning"))
            .collect();
        BinningSpec { fine, per_dataset }
    }

    pub fn fine(&self) -> &CategorySet {
        &self.fine
    }

    pub fn n_datasets(&self) -> usize {
        self.per_dataset.len()
    }

    pub fn dataset(&self, k: usize) -> &DatasetBinning {
        &self.per_dataset[k]
    }

    /// Unbinning function g_k by label name.
    pub fn unbin(&self, dataset_index: usize, coarse_label: &str) -> Result<&[usize]> {
        let db = self
            .per_dataset
            .get(dataset_index)
            .ok_or_else(|| Error::InvalidArgument(format!("no dataset {dataset_index}")))?;
        let idx = db
            .label_index(coarse_label)
            .ok_or_else(|| Error::UnknownLabel {
                dataset: dataset_index,
                label: coarse_label.to_string(),
            })?;
        Ok(db.members(idx))
    }
}

/// One dataset's features, batch covariates, and observed coarse labels.
///
/// `y` holds indices into the dataset's coarse label list. `z` may have zero
/// columns when the model carries no batch term.
#[derive(Debug, Clone)]
pub struct AnnotatedDataset {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub y: Vec<usize>,
}

impl AnnotatedDataset {
    pub fn new(x: Array2<f64>, z: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        if z.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                axis: "Z rows",
                expected: x.nrows(),
                actual: z.nrows(),
            });
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                axis: "y length",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite value in feature or covariate matrix".to_string(),
            ));
        }
        Ok(AnnotatedDataset { x, z, y })
    }

    /// Build from label strings, resolved against the dataset's binning.
    pub fn from_labels(
        x: Array2<f64>,
        z: Array2<f64>,
        labels: &[String],
        binning: &DatasetBinning,
        dataset_index: usize,
    ) -> Result<Self> {
        let y = labels
            .iter()
            .map(|l| {
                binning.label_index(l).ok_or_else(|| Error::UnknownLabel {
                    dataset: dataset_index,
                    label: l.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(x, z, y)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.z.ncols()
    }
}

/// A violation reported by [`validate_binning`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinningViolation {
    /// Fine category never observed as a singleton-bin label in any dataset.
    CategoryNeverObservedFine { category: String },
    /// A label index in `y` outside the dataset's label set.
    LabelOutOfRange { dataset: usize, row: usize },
    /// Feature/covariate column counts differ across datasets.
    InconsistentShape { dataset: usize, detail: String },
}

impl fmt::Display for BinningViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinningViolation::CategoryNeverObservedFine { category } => write!(
                f,
                "category `{category}` is never observed at the finest resolution in any dataset"
            ),
            BinningViolation::LabelOutOfRange { dataset, row } => {
                write!(f, "dataset {dataset}, row {row}: label index out of range")
            }
            BinningViolation::InconsistentShape { dataset, detail } => {
                write!(f, "dataset {dataset}: {detail}")
            }
        }
    }
}

/// All `K` datasets together with the binning functions relating their labels.
#[derive(Debug, Clone)]
pub struct DatasetCollection {
    pub datasets: Vec<AnnotatedDataset>,
    pub binning: BinningSpec,
}

impl DatasetCollection {
    pub fn new(datasets: Vec<AnnotatedDataset>, binning: BinningSpec) -> Result<Self> {
        if datasets.len() != binning.n_datasets() {
            return Err(Error::DimensionMismatch {
                axis: "datasets",
                expected: binning.n_datasets(),
                actual: datasets.len(),
            });
        }
        let collection = DatasetCollection { datasets, binning };
        let violations = validate_binning(&collection);
        // Coverage is checked separately by callers that need it; structural
        // violations are hard errors here.
        let structural: Vec<_> = violations
            .iter()
            .filter(|v| !matches!(v, BinningViolation::CategoryNeverObservedFine { .. }))
            .collect();
        if !structural.is_empty() {
            let msg = structural
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("\n");
            return Err(Error::InvalidCollection(msg));
        }
        Ok(collection)
    }

    pub fn k(&self) -> usize {
        self.datasets.len()
    }

    pub fn n_total(&self) -> usize {
        self.datasets.iter().map(|d| d.n()).sum()
    }

    pub fn p(&self) -> usize {
        self.datasets.first().map_or(0, |d| d.p())
    }

    pub fn r(&self) -> usize {
        self.datasets.first().map_or(0, |d| d.r())
    }

    pub fn n_categories(&self) -> usize {
        self.binning.fine().len()
    }
}

/// Checks every structural and coverage invariant relating datasets to their
/// binning functions. An empty report means the collection is valid.
pub fn validate_binning(collection: &DatasetCollection) -> Vec<BinningViolation> {
    let mut report = Vec::new();
    let spec = &collection.binning;
    let p = collection.p();
    let r = collection.r();

    for (k, ds) in collection.datasets.iter().enumerate() {
        if ds.p() != p {
            report.push(BinningViolation::InconsistentShape {
                dataset: k,
                detail: format!("{} feature columns, expected {p}", ds.p()),
            });
        }
        if ds.r() != r {
            report.push(BinningViolation::InconsistentShape {
                dataset: k,
                detail: format!("{} covariate columns, expected {r}", ds.r()),
            });
        }
        let n_labels = spec.dataset(k).label_count();
        for (i, &label) in ds.y.iter().enumerate() {
            if label >= n_labels {
                report.push(BinningViolation::LabelOutOfRange { dataset: k, row: i });
            }
        }
    }

    // Resolution coverage: every fine category must carry at least one
    // observation under a singleton-bin label somewhere.
    for fine in 0..spec.fine().len() {
        let covered = collection.datasets.iter().enumerate().any(|(k, ds)| {
            let db = spec.dataset(k);
            let coarse = db.bin_of(fine);
            db.is_fine_label(coarse) && ds.y.iter().any(|&y| y == coarse)
        });
        if !covered {
            report.push(BinningViolation::CategoryNeverObservedFine {
                category: spec.fine().name(fine).to_string(),
            });
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn two_cat_dataset(labels: &[&str], binning: &DatasetBinning, k: usize) -> AnnotatedDataset {
        let n = labels.len();
        let x = Array2::zeros((n, 2));
        let z = Array2::zeros((n, 0));
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        AnnotatedDataset::from_labels(x, z, &labels, binning, k).unwrap()
    }

    fn pair_spec(coarse_second: bool) -> BinningSpec {
        let fine = CategorySet::new(["A1", "A2"]).unwrap();
        let d1 = vec!["A".to_string(), "A".to_string()];
        let d2 = if coarse_second {
            vec!["A".to_string(), "A".to_string()]
        } else {
            vec!["A1".to_string(), "A2".to_string()]
        };
        BinningSpec::new(fine, vec![d1, d2]).unwrap()
    }

    #[test]
    fn coverage_satisfied_when_second_dataset_is_fine() {
        let spec = pair_spec(false);
        let d1 = two_cat_dataset(&["A", "A"], spec.dataset(0), 0);
        let d2 = two_cat_dataset(&["A1", "A2"], spec.dataset(1), 1);
        let coll = DatasetCollection::new(vec![d1, d2], spec).unwrap();
        assert!(validate_binning(&coll).is_empty());
    }

    #[test]
    fn coverage_violated_when_all_datasets_bin() {
        let spec = pair_spec(true);
        let d1 = two_cat_dataset(&["A", "A"], spec.dataset(0), 0);
        let d2 = two_cat_dataset(&["A", "A"], spec.dataset(1), 1);
        let coll = DatasetCollection::new(vec![d1, d2], spec).unwrap();
        let report = validate_binning(&coll);
        let names: Vec<_> = report
            .iter()
            .filter_map(|v| match v {
                BinningViolation::CategoryNeverObservedFine { category } => Some(category.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(names, vec!["A1", "A2"]);
    }

    #[test]
    fn unbin_coarse_and_fine() {
        let spec = pair_spec(false);
        assert_eq!(spec.unbin(0, "A").unwrap(), &[0, 1]);
        assert_eq!(spec.unbin(1, "A1").unwrap(), &[0]);
        assert!(matches!(
            spec.unbin(0, "B"),
            Err(Error::UnknownLabel { dataset: 0, .. })
        ));
    }

    #[test]
    fn unbin_nested_membership() {
        let fine = CategorySet::new(["naive CD4+", "effector memory CD4+", "central memory CD4+"])
            .unwrap();
        let assignment = vec!["CD4+".to_string(); 3];
        let spec = BinningSpec::new(fine, vec![assignment]).unwrap();
        assert_eq!(spec.unbin(0, "CD4+").unwrap(), &[0, 1, 2]);
        // l ∈ g_k(f_k(l)) for every fine category
        let db = spec.dataset(0);
        for l in 0..3 {
            assert!(db.members(db.bin_of(l)).contains(&l));
        }
    }

    #[test]
    fn bins_partition_fine_set() {
        let fine = CategorySet::new(["A1", "A2", "B1", "B2", "C"]).unwrap();
        let assignment: Vec<String> = ["A", "A", "B1", "B2", "C"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let spec = BinningSpec::new(fine, vec![assignment]).unwrap();
        let db = spec.dataset(0);
        let mut seen = vec![0usize; 5];
        for j in 0..db.label_count() {
            for &l in db.members(j) {
                seen[l] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn duplicate_category_rejected() {
        assert!(CategorySet::new(["A", "A"]).is_err());
        assert!(CategorySet::new(["A"]).is_err());
    }
}
