//! File formats: binning tables, dataset directories, model artifacts, and
//! report tables. All formats are tab-delimited UTF-8 text; floating-point
//! values are written with 17 significant digits so every file reloads
//! bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::binning::{
    AnnotatedDataset, BinningSpec, CategorySet, DatasetCollection,
};
use crate::error::{Error, Result};
use crate::likelihood::Coefficients;
use crate::predict::PredictionSet;
use crate::sim::{SimConfig, SimOutput};
use crate::tuning::PathResult;

/// 17 significant digits: enough to reproduce any `f64` exactly on reparse.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(cell: &str, path: &Path, line: usize) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("not a number: `{cell}`")))
}

/// Reads a whole tab-delimited file into rows of cells. Trailing newline
/// optional; empty lines are skipped.
pub fn read_tsv(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').map(str::to_string).collect()))
        .collect())
}

// ---------------------------------------------------------------------------
// binning table

/// Reads a binning table: header = corner cell + fine category names, then
/// one row per dataset (dataset id, coarse label per fine category).
pub fn read_binning(path: &Path) -> Result<BinningSpec> {
    let rows = read_tsv(path)?;
    if rows.len() < 2 {
        return Err(parse_err(path, 1, "expected a header row and at least one dataset row"));
    }
    let (_, header) = &rows[0];
    if header.len() < 3 {
        return Err(parse_err(path, 1, "expected at least two fine category columns"));
    }
    let fine = CategorySet::new(header[1..].to_vec())?;
    let n_cat = fine.len();
    let mut assignments = Vec::with_capacity(rows.len() - 1);
    for (line, row) in &rows[1..] {
        if row.len() != n_cat + 1 {
            return Err(parse_err(
                path,
                *line,
                format!("expected {} cells, got {}", n_cat + 1, row.len()),
            ));
        }
        assignments.push(row[1..].to_vec());
    }
    BinningSpec::new(fine, assignments)
}

pub fn write_binning(spec: &BinningSpec, path: &Path) -> Result<()> {
    let mut out = String::from("dataset");
    for name in spec.fine().names() {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..spec.n_datasets() {
        let binning = spec.dataset(k);
        let _ = write!(out, "{}", k + 1);
        for fine in 0..spec.fine().len() {
            out.push('\t');
            out.push_str(&binning.labels()[binning.bin_of(fine)]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dataset directories

/// One dataset read from disk, before labels are resolved against a binning.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub feature_names: Vec<String>,
    pub x: Array2<f64>,
    pub labels: Vec<String>,
    /// `None` when the directory has no `Z.tsv`.
    pub z: Option<Array2<f64>>,
}

fn read_matrix(path: &Path, header: bool) -> Result<(Vec<String>, Array2<f64>)> {
    let rows = read_tsv(path)?;
    let mut iter = rows.iter();
    let names: Vec<String> = if header {
        let (_, h) = iter
            .next()
            .ok_or_else(|| parse_err(path, 1, "empty file"))?;
        h.clone()
    } else {
        Vec::new()
    };
    let body: Vec<&(usize, Vec<String>)> = iter.collect();
    let ncols = if header {
        names.len()
    } else {
        body.first().map_or(0, |(_, r)| r.len())
    };
    let mut values = Vec::with_capacity(body.len() * ncols);
    for (line, row) in &body {
        if row.len() != ncols {
            return Err(parse_err(
                path,
                *line,
                format!("expected {ncols} cells, got {}", row.len()),
            ));
        }
        for cell in row {
            values.push(parse_f64(cell, path, *line)?);
        }
    }
    let matrix = Array2::from_shape_vec((body.len(), ncols), values)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    Ok((names, matrix))
}

fn write_matrix(path: &Path, header: Option<&[String]>, matrix: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    if let Some(names) = header {
        out.push_str(&names.join("\t"));
        out.push('\n');
    }
    for row in matrix.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push('\t');
            }
            out.push_str(&fmt_f64(*v));
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads one label per line.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Loads `X.tsv` (feature-name header), `y.tsv` (one label per line), and
/// `Z.tsv` if present (headerless numeric matrix) from a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let x_path = dir.join("X.tsv");
    let (feature_names, x) = read_matrix(&x_path, true)?;
    let y_path = dir.join("y.tsv");
    let labels = read_labels(&y_path)?;
    if labels.len() != x.nrows() {
        return Err(parse_err(
            &y_path,
            labels.len() + 1,
            format!("expected {} labels, got {}", x.nrows(), labels.len()),
        ));
    }
    let z_path = dir.join("Z.tsv");
    let z = if z_path.exists() {
        let (_, z) = read_matrix(&z_path, false)?;
        if z.nrows() != x.nrows() {
            return Err(parse_err(
                &z_path,
                z.nrows() + 1,
                format!("expected {} rows, got {}", x.nrows(), z.nrows()),
            ));
        }
        Some(z)
    } else {
        None
    };
    Ok(LoadedDataset {
        feature_names,
        x,
        labels,
        z,
    })
}

pub fn save_dataset(
    dir: &Path,
    feature_names: &[String],
    x: &Array2<f64>,
    labels: &[String],
    z: Option<&Array2<f64>>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("X.tsv"), Some(feature_names), x)?;
    let mut out = String::new();
    for label in labels {
        out.push_str(label);
        out.push('\n');
    }
    fs::write(dir.join("y.tsv"), out)?;
    if let Some(z) = z {
        write_matrix(&dir.join("Z.tsv"), None, z)?;
    }
    Ok(())
}

/// What to use for a dataset's batch covariates when `Z.tsv` is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingZ {
    /// A single all-ones column (per-dataset intercept).
    Ones,
    /// No batch term.
    Empty,
}

/// Assembles a collection from per-dataset directories and a binning table,
/// resolving label strings through each dataset's binning.
pub fn load_collection(
    dirs: &[impl AsRef<Path>],
    spec: BinningSpec,
    missing_z: MissingZ,
) -> Result<(DatasetCollection, Vec<String>)> {
    if dirs.len() != spec.n_datasets() {
        return Err(Error::DimensionMismatch {
            axis: "datasets",
            expected: spec.n_datasets(),
            actual: dirs.len(),
        });
    }
    let mut datasets = Vec::with_capacity(dirs.len());
    let mut feature_names = Vec::new();
    for (k, dir) in dirs.iter().enumerate() {
        let loaded = load_dataset(dir.as_ref())?;
        if k == 0 {
            feature_names = loaded.feature_names.clone();
        }
        let n = loaded.x.nrows();
        let z = match loaded.z {
            Some(z) => z,
            None => match missing_z {
                MissingZ::Ones => Array2::ones((n, 1)),
                MissingZ::Empty => Array2::zeros((n, 0)),
            },
        };
        datasets.push(AnnotatedDataset::from_labels(
            loaded.x,
            z,
            &loaded.labels,
            spec.dataset(k),
            k,
        )?);
    }
    Ok((DatasetCollection::new(datasets, spec)?, feature_names))
}

// ---------------------------------------------------------------------------
// model artifact

const MODEL_FORMAT: &str = "ibmr-model";
const MODEL_VERSION: &str = "1";

#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub categories: CategorySet,
    pub feature_names: Vec<String>,
    pub feature_sds: Vec<f64>,
    pub coeffs: Coefficients,
    pub lambda: f64,
    pub rho: f64,
}

impl ModelArtifact {
    fn validate(&self) -> Result<()> {
        if self.categories.len() != self.coeffs.n_categories() {
            return Err(Error::DimensionMismatch {
                axis: "categories",
                expected: self.coeffs.n_categories(),
                actual: self.categories.len(),
            });
        }
        if self.feature_names.len() != self.coeffs.p() {
            return Err(Error::DimensionMismatch {
                axis: "features",
                expected: self.coeffs.p(),
                actual: self.feature_names.len(),
            });
        }
        if self.feature_sds.len() != self.coeffs.p() {
            return Err(Error::DimensionMismatch {
                axis: "features",
                expected: self.coeffs.p(),
                actual: self.feature_sds.len(),
            });
        }
        Ok(())
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    artifact.validate()?;
    let c = &artifact.coeffs;
    let mut out = String::new();
    let _ = writeln!(out, "format\t{MODEL_FORMAT}\t{MODEL_VERSION}");
    let _ = writeln!(out, "categories\t{}", artifact.categories.names().join("\t"));
    let _ = writeln!(out, "features\t{}", artifact.feature_names.join("\t"));
    let sds: Vec<String> = artifact.feature_sds.iter().map(|&v| fmt_f64(v)).collect();
    let _ = writeln!(out, "feature_sds\t{}", sds.join("\t"));
    let _ = writeln!(out, "lambda\t{}", fmt_f64(artifact.lambda));
    let _ = writeln!(out, "rho\t{}", fmt_f64(artifact.rho));
    let alpha: Vec<String> = c.alpha.iter().map(|&v| fmt_f64(v)).collect();
    let _ = writeln!(out, "alpha\t{}", alpha.join("\t"));
    let _ = writeln!(out, "beta\t{}\t{}", c.p(), c.n_categories());
    for row in c.beta.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    let _ = writeln!(out, "gamma\t{}\t{}\t{}", c.gamma.len(), c.r(), c.n_categories());
    for g in &c.gamma {
        for row in g.rows() {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let rows = read_tsv(path)?;
    let mut iter = rows.iter().peekable();
    let mut take = |key: &str| -> Result<&(usize, Vec<String>)> {
        let row = iter
            .next()
            .ok_or_else(|| Error::ModelFormat(format!("missing `{key}` section")))?;
        if row.1.first().map(String::as_str) != Some(key) {
            return Err(Error::ModelFormat(format!(
                "expected `{key}` at line {}, found `{}`",
                row.0,
                row.1.first().cloned().unwrap_or_default()
            )));
        }
        Ok(row)
    };
    let (line, format_row) = take("format")?;
    if format_row.get(1).map(String::as_str) != Some(MODEL_FORMAT)
        || format_row.get(2).map(String::as_str) != Some(MODEL_VERSION)
    {
        return Err(Error::ModelFormat(format!(
            "unsupported format declaration at line {line}"
        )));
    }
    let categories = CategorySet::new(take("categories")?.1[1..].to_vec())?;
    let feature_names = take("features")?.1[1..].to_vec();
    let (line, sds_row) = take("feature_sds")?;
    let feature_sds = sds_row[1..]
        .iter()
        .map(|c| parse_f64(c, path, *line))
        .collect::<Result<Vec<_>>>()?;
    let scalar = |row: &(usize, Vec<String>)| -> Result<f64> {
        row.1
            .get(1)
            .ok_or_else(|| Error::ModelFormat("missing scalar value".to_string()))
            .and_then(|c| parse_f64(c, path, row.0))
    };
    let lambda = scalar(take("lambda")?)?;
    let rho = scalar(take("rho")?)?;
    let (line, alpha_row) = take("alpha")?;
    let alpha = alpha_row[1..]
        .iter()
        .map(|c| parse_f64(c, path, *line))
        .collect::<Result<Vec<_>>>()?;

    let dims = |row: &(usize, Vec<String>), n: usize| -> Result<Vec<usize>> {
        row.1[1..]
            .iter()
            .take(n)
            .map(|c| {
                c.parse::<usize>()
                    .map_err(|_| parse_err(path, row.0, format!("not a count: `{c}`")))
            })
            .collect()
    };
    let beta_head = take("beta")?.clone();
    let bd = dims(&beta_head, 2)?;
    if bd.len() != 2 {
        return Err(Error::ModelFormat("beta header needs two counts".to_string()));
    }
    let (p, n_cat) = (bd[0], bd[1]);
    let mut read_block = |rows_needed: usize, ncols: usize| -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(rows_needed * ncols);
        for _ in 0..rows_needed {
            let (line, row) = iter
                .next()
                .ok_or_else(|| Error::ModelFormat("truncated matrix block".to_string()))?;
            if row.len() != ncols {
                return Err(parse_err(
                    path,
                    *line,
                    format!("expected {ncols} cells, got {}", row.len()),
                ));
            }
            for cell in row {
                values.push(parse_f64(cell, path, *line)?);
            }
        }
        Ok(values)
    };
    let beta = Array2::from_shape_vec((p, n_cat), read_block(p, n_cat)?).unwrap();

    let gamma_head = {
        let row = iter
            .next()
            .ok_or_else(|| Error::ModelFormat("missing `gamma` section".to_string()))?;
        if row.1.first().map(String::as_str) != Some("gamma") {
            return Err(Error::ModelFormat("missing `gamma` section".to_string()));
        }
        row.clone()
    };
    let gd = dims(&gamma_head, 3)?;
    if gd.len() != 3 || gd[2] != n_cat {
        return Err(Error::ModelFormat("inconsistent gamma header".to_string()));
    }
    let (k, r) = (gd[0], gd[1]);
    let mut read_block = |rows_needed: usize, ncols: usize| -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(rows_needed * ncols);
        for _ in 0..rows_needed {
            let (line, row) = iter
                .next()
                .ok_or_else(|| Error::ModelFormat("truncated matrix block".to_string()))?;
            if row.len() != ncols {
                return Err(parse_err(
                    path,
                    *line,
                    format!("expected {ncols} cells, got {}", row.len()),
                ));
            }
            for cell in row {
                values.push(parse_f64(cell, path, *line)?);
            }
        }
        Ok(values)
    };
    let mut gamma = Vec::with_capacity(k);
    for _ in 0..k {
        gamma.push(Array2::from_shape_vec((r, n_cat), read_block(r, n_cat)?).unwrap());
    }

    let artifact = ModelArtifact {
        categories,
        feature_names,
        feature_sds,
        coeffs: Coefficients {
            alpha: ndarray::Array1::from_vec(alpha),
            beta,
            gamma,
        },
        lambda,
        rho,
    };
    artifact.validate()?;
    if artifact.coeffs.alpha.len() != n_cat {
        return Err(Error::ModelFormat("alpha length disagrees with beta".to_string()));
    }
    Ok(artifact)
}

// ---------------------------------------------------------------------------
// reports

/// Tab-delimited path report: one row per grid point.
pub fn write_path_report(result: &PathResult, path: &Path) -> Result<()> {
    let mut out = String::from(
        "lambda\trho\tconverged\titerations\tobjective\tvalidation_nll\tactive_rows\tselected\terror\n",
    );
    for (i, pt) in result.points.iter().enumerate() {
        let (converged, iterations, objective, active) = match &pt.fit {
            Some(f) => (
                f.converged.to_string(),
                f.iterations.to_string(),
                fmt_f64(f.objective()),
                f.active_rows.len().to_string(),
            ),
            None => ("".into(), "".into(), "".into(), "".into()),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            fmt_f64(pt.lambda),
            fmt_f64(pt.rho),
            converged,
            iterations,
            objective,
            pt.validation_nll.map(fmt_f64).unwrap_or_default(),
            active,
            (i == result.selected) as u8,
            pt.error.clone().unwrap_or_default(),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Prediction export: observation id, mode, predicted label, then one
/// probability column per support label.
pub fn write_predictions(pred: &PredictionSet, path: &Path) -> Result<()> {
    let mut out = String::from("id\tmode\tlabel");
    for s in &pred.support {
        out.push('\t');
        out.push_str(s);
    }
    out.push('\n');
    let mode = match pred.mode {
        crate::predict::PredictionMode::Fine => "fine",
        crate::predict::PredictionMode::Conditional => "conditional",
        crate::predict::PredictionMode::Coarse => "coarse",
    };
    for (i, label) in pred.labels.iter().enumerate() {
        let _ = write!(out, "{}\t{}\t{}", i + 1, mode, label);
        for v in pred.probs.values.row(i) {
            out.push('\t');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Confusion matrix: rows = observed labels, columns = predicted labels,
/// cells = percentage within the observed label's row.
pub fn write_confusion_matrix(
    pred: &PredictionSet,
    observed: &[String],
    path: &Path,
) -> Result<()> {
    if observed.len() != pred.labels.len() {
        return Err(Error::DimensionMismatch {
            axis: "rows",
            expected: pred.labels.len(),
            actual: observed.len(),
        });
    }
    // observed labels in support order, then any extras by first appearance
    let mut row_labels: Vec<String> = pred
        .support
        .iter()
        .filter(|s| observed.contains(s))
        .cloned()
        .collect();
    for o in observed {
        if !row_labels.contains(o) {
            row_labels.push(o.clone());
        }
    }
    let mut counts = vec![vec![0usize; pred.support.len()]; row_labels.len()];
    let mut totals = vec![0usize; row_labels.len()];
    for (obs, idx) in observed.iter().zip(&pred.indices) {
        let row = row_labels.iter().position(|l| l == obs).unwrap();
        counts[row][*idx] += 1;
        totals[row] += 1;
    }
    let mut out = String::from("observed");
    for s in &pred.support {
        out.push('\t');
        out.push_str(s);
    }
    out.push('\n');
    for (row, label) in row_labels.iter().enumerate() {
        out.push_str(label);
        for col in 0..pred.support.len() {
            let pct = 100.0 * counts[row][col] as f64 / totals[row] as f64;
            out.push('\t');
            out.push_str(&fmt_f64(pct));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulation configs and outputs

/// Key-value file mirroring the simulation config: `key = value` or
/// `key<tab>value`, one per line; `#` starts a comment.
pub fn read_sim_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path)?;
    let mut config = SimConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once('\t'))
            .or_else(|| line.split_once(' '))
            .ok_or_else(|| parse_err(path, i + 1, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        let as_usize = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("not an integer: `{value}`")))
        };
        match key {
            "n" => config.n = as_usize()?,
            "p" => config.p = as_usize()?,
            "s" => config.s = as_usize()?,
            "test_n" => config.test_n = as_usize()?,
            "seed" => {
                config.seed = value
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, format!("not an integer: `{value}`")))?
            }
            "b" => config.b = parse_f64(value, path, i + 1)?,
            other => {
                return Err(parse_err(path, i + 1, format!("unknown key `{other}`")));
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn default_feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn save_collection_split(
    dir: &Path,
    collection: &DatasetCollection,
    feature_names: &[String],
) -> Result<()> {
    for (k, ds) in collection.datasets.iter().enumerate() {
        let binning = collection.binning.dataset(k);
        let labels: Vec<String> = ds.y.iter().map(|&y| binning.labels()[y].clone()).collect();
        let z = (ds.r() > 0).then_some(&ds.z);
        save_dataset(
            &dir.join(format!("dataset_{}", k + 1)),
            feature_names,
            &ds.x,
            &labels,
            z,
        )?;
    }
    Ok(())
}

/// Writes a simulated study to disk in the standard dataset layout:
/// `binning.tsv`, `train/dataset_k/`, `validation/dataset_k/`, `test/`, and
/// the generating truth under `truth/`.
pub fn write_sim_output(output: &SimOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let feature_names = default_feature_names(output.train.p());
    write_binning(&output.train.binning, &dir.join("binning.tsv"))?;
    save_collection_split(&dir.join("train"), &output.train, &feature_names)?;
    save_collection_split(&dir.join("validation"), &output.validation, &feature_names)?;

    let fine = output.test_binning.fine();
    let test_labels: Vec<String> = output
        .test
        .y
        .iter()
        .map(|&y| fine.name(y).to_string())
        .collect();
    save_dataset(
        &dir.join("test"),
        &feature_names,
        &output.test.x,
        &test_labels,
        None,
    )?;
    write_binning(&output.test_binning, &dir.join("test").join("binning.tsv"))?;

    let truth_dir = dir.join("truth");
    fs::create_dir_all(&truth_dir)?;
    let cat_names: Vec<String> = fine.names().to_vec();
    write_matrix(
        &truth_dir.join("beta_star.tsv"),
        Some(&cat_names),
        &output.truth.beta_star,
    )?;
    write_matrix(
        &truth_dir.join("test_probs.tsv"),
        Some(&cat_names),
        &output.truth.test_probs,
    )?;
    for (name, split_labels) in [
        ("train", &output.truth.train_fine_labels),
        ("validation", &output.truth.validation_fine_labels),
    ] {
        for (k, labels) in split_labels.iter().enumerate() {
            let mut out = String::new();
            for &l in labels {
                out.push_str(fine.name(l));
                out.push('\n');
            }
            fs::write(
                truth_dir.join(format!("{name}_fine_{}.tsv", k + 1)),
                out,
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// benchmark tables

/// One scenario of a benchmark run: simulation settings minus the seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub b: f64,
    pub test_n: usize,
}

/// Reads a scenario table: header with columns among {n, p, s, b, test_n},
/// one scenario per row; omitted columns take the simulation defaults.
pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let rows = read_tsv(path)?;
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(parse_err(path, 1, "empty scenario file"));
    };
    for col in header {
        if !matches!(col.as_str(), "n" | "p" | "s" | "b" | "test_n") {
            return Err(parse_err(path, 1, format!("unknown column `{col}`")));
        }
    }
    let defaults = SimConfig::default();
    let mut scenarios = Vec::with_capacity(body.len());
    for (line, row) in body {
        if row.len() != header.len() {
            return Err(parse_err(
                path,
                *line,
                format!("expected {} cells, got {}", header.len(), row.len()),
            ));
        }
        let mut sc = Scenario {
            n: defaults.n,
            p: defaults.p,
            s: defaults.s,
            b: defaults.b,
            test_n: defaults.test_n,
        };
        for (col, cell) in header.iter().zip(row) {
            let as_usize = || -> Result<usize> {
                cell.parse()
                    .map_err(|_| parse_err(path, *line, format!("not an integer: `{cell}`")))
            };
            match col.as_str() {
                "n" => sc.n = as_usize()?,
                "p" => sc.p = as_usize()?,
                "s" => sc.s = as_usize()?,
                "test_n" => sc.test_n = as_usize()?,
                "b" => sc.b = parse_f64(cell, path, *line)?,
                _ => unreachable!(),
            }
        }
        scenarios.push(sc);
    }
    Ok(scenarios)
}

/// One method evaluation on one simulated replicate.
#[derive(Debug, Clone)]
pub struct BenchmarkRecord {
    pub scenario: Scenario,
    pub method: String,
    pub replicate: usize,
    pub kl: f64,
    pub hellinger: f64,
    pub error_rate: f64,
}

/// A method/replicate combination that failed to fit.
#[derive(Debug, Clone)]
pub struct BenchmarkFailure {
    pub scenario: Scenario,
    pub method: String,
    pub replicate: usize,
    pub message: String,
}

pub fn write_benchmark_long(records: &[BenchmarkRecord], path: &Path) -> Result<()> {
    let mut out =
        String::from("n\tp\ts\tb\tmethod\treplicate\tkl\thellinger\terror_rate\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.scenario.n,
            r.scenario.p,
            r.scenario.s,
            fmt_f64(r.scenario.b),
            r.method,
            r.replicate,
            fmt_f64(r.kl),
            fmt_f64(r.hellinger),
            fmt_f64(r.error_rate),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_benchmark_summary(
    records: &[BenchmarkRecord],
    failures: &[BenchmarkFailure],
    path: &Path,
) -> Result<()> {
    // group by (scenario, method) preserving first-appearance order
    let mut keys: Vec<(usize, usize, usize, f64, String)> = Vec::new();
    for r in records {
        let key = (
            r.scenario.n,
            r.scenario.p,
            r.scenario.s,
            r.scenario.b,
            r.method.clone(),
        );
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = String::from(
        "n\tp\ts\tb\tmethod\treplicates\tkl_mean\tkl_se\thellinger_mean\thellinger_se\terror_mean\terror_se\tfailures\n",
    );
    for (n, p, s, b, method) in keys {
        let group: Vec<&BenchmarkRecord> = records
            .iter()
            .filter(|r| {
                r.scenario.n == n
                    && r.scenario.p == p
                    && r.scenario.s == s
                    && r.scenario.b == b
                    && r.method == method
            })
            .collect();
        let failed = failures
            .iter()
            .filter(|f| {
                f.scenario.n == n
                    && f.scenario.p == p
                    && f.scenario.s == s
                    && f.scenario.b == b
                    && f.method == method
            })
            .count();
        let kl: Vec<f64> = group.iter().map(|r| r.kl).collect();
        let hl: Vec<f64> = group.iter().map(|r| r.hellinger).collect();
        let er: Vec<f64> = group.iter().map(|r| r.error_rate).collect();
        let (kl_m, kl_s) = mean_se(&kl);
        let (hl_m, hl_s) = mean_se(&hl);
        let (er_m, er_s) = mean_se(&er);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            n,
            p,
            s,
            fmt_f64(b),
            method,
            group.len(),
            fmt_f64(kl_m),
            fmt_f64(kl_s),
            fmt_f64(hl_m),
            fmt_f64(hl_s),
            fmt_f64(er_m),
            fmt_f64(er_s),
            failed,
        );
    }
    fs::write(path, out)?;
    Ok(())
}
