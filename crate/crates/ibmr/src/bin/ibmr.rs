//! Command-line pipeline: fit, path, predict, simulate, benchmark.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/validation error,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rayon::prelude::*;

use ibmr::baselines::{self, evaluate_on_test, fit_method, Method, PathSettings};
use ibmr::binning::DatasetCollection;
use ibmr::error::Error;
use ibmr::io::{
    self, BenchmarkFailure, BenchmarkRecord, MissingZ, ModelArtifact, Scenario,
};
use ibmr::likelihood::Coefficients;
use ibmr::predict::{self, ObservedTestLabelSet};
use ibmr::sim::{simulate, SimConfig};
use ibmr::solver::{fit, SolverConfig};
use ibmr::tuning;

#[derive(Parser)]
#[command(name = "ibmr", version, about = "Binned multinomial regression across datasets")]
struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model at fixed penalty weights.
    Fit(FitArgs),
    /// Fit a full tuning grid with warm starts and select by validation NLL.
    Path(PathArgs),
    /// Predict labels for new observations from a saved model.
    Predict(PredictArgs),
    /// Generate a synthetic study and write it in the dataset layout.
    Simulate(SimulateArgs),
    /// Run the simulation benchmark across scenarios, replicates, methods.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Training dataset directories, one per dataset, in binning-row order.
    #[arg(long, num_args = 1.., required = true)]
    train: Vec<PathBuf>,

    /// Binning table relating each dataset's labels to the fine categories.
    #[arg(long)]
    binning: PathBuf,

    /// Estimation method.
    #[arg(long, default_value = "IBMR")]
    method: String,

    /// Keep only this many rows per training dataset (sampled).
    #[arg(long)]
    subsample: Option<usize>,

    /// Sampling weights, one per line, concatenated over the training
    /// datasets in order; uniform when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,

    /// Seed for subsampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long)]
    lambda: f64,

    #[arg(long, default_value_t = 0.1)]
    rho: f64,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Validation dataset directories, same binning as training.
    #[arg(long, num_args = 1.., required = true)]
    validation: Vec<PathBuf>,

    #[arg(long, default_value_t = tuning::DEFAULT_N_LAMBDA)]
    n_lambda: usize,

    #[arg(long, default_value_t = tuning::DEFAULT_LAMBDA_MIN_RATIO)]
    lambda_min_ratio: f64,

    /// Comma-separated ridge weights.
    #[arg(long, value_delimiter = ',', default_values_t = tuning::DEFAULT_RHOS)]
    rhos: Vec<f64>,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Fine,
    Conditional,
    Coarse,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,

    /// Directory with X.tsv and (for conditional mode) y.tsv.
    #[arg(long)]
    data: PathBuf,

    #[arg(long, value_enum, default_value_t = Mode::Fine)]
    mode: Mode,

    /// Binning table whose first dataset row describes the test labels;
    /// required for conditional and coarse modes.
    #[arg(long)]
    binning: Option<PathBuf>,

    /// Coarse mode: labels defining the prediction support, one per line;
    /// defaults to the distinct labels of the data directory's y.tsv.
    #[arg(long)]
    observed_labels: Option<PathBuf>,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Key-value file with fields n, p, s, b, seed, test_n.
    #[arg(long)]
    config: PathBuf,

    #[arg(long)]
    out: PathBuf,

    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Scenario table with header columns among n, p, s, b, test_n.
    #[arg(long)]
    scenarios: PathBuf,

    #[arg(long, default_value_t = 10)]
    replicates: usize,

    /// Base seed; replicate i uses seed + i - 1.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Comma-separated method names.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "IBMR-int,IBMR-NG,subset,relabel,IBMR-int-ORC,GL-ORC"
    )]
    methods: Vec<String>,

    #[arg(long, default_value_t = tuning::DEFAULT_N_LAMBDA)]
    n_lambda: usize,

    #[arg(long, default_value_t = tuning::DEFAULT_LAMBDA_MIN_RATIO)]
    lambda_min_ratio: f64,

    #[arg(long, value_delimiter = ',', default_values_t = tuning::DEFAULT_RHOS)]
    rhos: Vec<f64>,

    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("ibmr: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ibmr: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Numerical(_) | Error::PathFailed => 4,
        _ => 3,
    }
}

fn run(command: Command) -> ibmr::Result<()> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Path(args) => cmd_path(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    }
}

fn parse_method(name: &str) -> ibmr::Result<Method> {
    let method: Method = name.parse()?;
    if method.is_oracle() {
        return Err(Error::InvalidArgument(format!(
            "method {method} needs simulation truth; use the benchmark command"
        )));
    }
    Ok(method)
}

/// Pooled per-feature standard deviation over all training rows.
fn pooled_feature_sds(collection: &DatasetCollection) -> Vec<f64> {
    let p = collection.p();
    let n = collection.n_total() as f64;
    let mut mean = vec![0.0; p];
    for ds in &collection.datasets {
        for row in ds.x.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
    }
    let mut var = vec![0.0; p];
    for ds in &collection.datasets {
        for row in ds.x.rows() {
            for (j, &v) in row.iter().enumerate() {
                var[j] += (v - mean[j]).powi(2) / n;
            }
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

fn subsample(
    collection: DatasetCollection,
    keep: usize,
    weights_path: Option<&Path>,
    seed: u64,
) -> ibmr::Result<DatasetCollection> {
    use rand::seq::index;
    let weights: Option<Vec<f64>> = match weights_path {
        Some(path) => {
            let lines = io::read_labels(path)?;
            let parsed = lines
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    l.trim().parse::<f64>().map_err(|_| Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: format!("not a number: `{l}`"),
                    })
                })
                .collect::<ibmr::Result<Vec<_>>>()?;
            if parsed.len() != collection.n_total() {
                return Err(Error::DimensionMismatch {
                    axis: "rows",
                    expected: collection.n_total(),
                    actual: parsed.len(),
                });
            }
            Some(parsed)
        }
        None => None,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    let mut datasets = Vec::with_capacity(collection.k());
    for ds in &collection.datasets {
        let n = ds.n();
        let take = keep.min(n);
        let mut picked: Vec<usize> = match &weights {
            Some(w) => index::sample_weighted(&mut rng, n, |i| w[offset + i], take)
                .map_err(|e| Error::InvalidArgument(format!("bad weights: {e}")))?
                .into_vec(),
            None => index::sample(&mut rng, n, take).into_vec(),
        };
        picked.sort_unstable();
        let x = ds.x.select(ndarray::Axis(0), &picked);
        let z = ds.z.select(ndarray::Axis(0), &picked);
        let y = picked.iter().map(|&i| ds.y[i]).collect();
        datasets.push(ibmr::AnnotatedDataset::new(x, z, y)?);
        offset += n;
    }
    DatasetCollection::new(datasets, collection.binning)
}

struct LoadedTraining {
    collection: DatasetCollection,
    feature_names: Vec<String>,
    feature_sds: Vec<f64>,
    method: Method,
}

fn load_training(data: &DataArgs) -> ibmr::Result<LoadedTraining> {
    let method = parse_method(&data.method)?;
    let spec = io::read_binning(&data.binning)?;
    let missing_z = if method == Method::IbmrInt {
        MissingZ::Ones
    } else {
        MissingZ::Empty
    };
    let (mut collection, feature_names) = io::load_collection(&data.train, spec, missing_z)?;
    if let Some(keep) = data.subsample {
        collection = subsample(collection, keep, data.weights.as_deref(), data.seed)?;
    }
    let feature_sds = pooled_feature_sds(&collection);
    Ok(LoadedTraining {
        collection,
        feature_names,
        feature_sds,
        method,
    })
}

fn apply_method(method: Method, collection: &DatasetCollection) -> ibmr::Result<DatasetCollection> {
    Ok(match method {
        Method::Ibmr => collection.clone(),
        Method::IbmrInt => baselines::make_ibmr_int(collection),
        Method::IbmrNg => baselines::make_ibmr_ng(collection),
        Method::Subset => baselines::make_subset(collection)?,
        Method::Relabel | Method::IbmrIntOrc | Method::GlOrc => unreachable!(),
    })
}

fn write_model(
    out_dir: &Path,
    training: &LoadedTraining,
    coeffs: &Coefficients,
    lambda: f64,
    rho: f64,
) -> ibmr::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let artifact = ModelArtifact {
        categories: training.collection.binning.fine().clone(),
        feature_names: training.feature_names.clone(),
        feature_sds: training.feature_sds.clone(),
        coeffs: coeffs.clone(),
        lambda,
        rho,
    };
    io::save_model(&artifact, &out_dir.join("model.tsv"))
}

fn cmd_fit(args: FitArgs) -> ibmr::Result<()> {
    if !(args.lambda >= 0.0) || !(args.rho >= 0.0) {
        return Err(Error::InvalidArgument(
            "lambda and rho must be nonnegative".to_string(),
        ));
    }
    let training = load_training(&args.data)?;
    let config = SolverConfig {
        lambda: args.lambda,
        rho: args.rho,
        ..SolverConfig::default()
    };
    let result = match training.method {
        Method::Relabel => {
            let subset = baselines::make_subset(&training.collection)?;
            let stage1 = fit(&subset, &config)?;
            let relabeled = baselines::make_relabel(&training.collection, &stage1.coeffs)?;
            fit(&relabeled, &config)?
        }
        method => fit(&apply_method(method, &training.collection)?, &config)?,
    };
    write_model(&args.out, &training, &result.coeffs, args.lambda, args.rho)?;
    println!(
        "method={} lambda={} rho={} converged={} iterations={} objective={} active_rows={}",
        training.method,
        args.lambda,
        args.rho,
        result.converged,
        result.iterations,
        result.objective(),
        result.active_rows.len()
    );
    Ok(())
}

fn cmd_path(args: PathArgs) -> ibmr::Result<()> {
    let training = load_training(&args.data)?;
    let spec = io::read_binning(&args.data.binning)?;
    let (validation, _) = io::load_collection(&args.validation, spec, MissingZ::Empty)?;
    let settings = PathSettings {
        n_lambda: args.n_lambda,
        lambda_min_ratio: args.lambda_min_ratio,
        rhos: args.rhos.clone(),
        solver: SolverConfig::default(),
    };
    let method_fit = fit_method(
        training.method,
        &training.collection,
        &validation,
        None,
        &settings,
    )?;
    std::fs::create_dir_all(&args.out)?;
    io::write_path_report(&method_fit.path, &args.out.join("path_report.tsv"))?;
    let (lambda, rho) = method_fit.path.selected_lambda_rho();
    write_model(&args.out, &training, method_fit.coeffs(), lambda, rho)?;
    println!(
        "method={} selected lambda={lambda} rho={rho} grid_points={}",
        training.method,
        method_fit.path.points.len()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> ibmr::Result<()> {
    let artifact = io::load_model(&args.model)?;
    let data = io::load_dataset(&args.data)?;
    if data.feature_names != artifact.feature_names {
        return Err(Error::InvalidCollection(
            "feature names in data do not match the model".to_string(),
        ));
    }
    let need_binning = || -> ibmr::Result<ibmr::BinningSpec> {
        let path = args.binning.as_ref().ok_or_else(|| {
            Error::InvalidArgument("this mode requires --binning".to_string())
        })?;
        let spec = io::read_binning(path)?;
        if spec.fine() != &artifact.categories {
            return Err(Error::InvalidCollection(
                "binning fine categories do not match the model".to_string(),
            ));
        }
        Ok(spec)
    };
    let resolve_labels = |spec: &ibmr::BinningSpec, labels: &[String]| -> ibmr::Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                spec.dataset(0).label_index(l).ok_or_else(|| Error::UnknownLabel {
                    dataset: 0,
                    label: l.clone(),
                })
            })
            .collect()
    };
    let pred = match args.mode {
        Mode::Fine => predict::predict_fine(&artifact.coeffs, &data.x, &artifact.categories)?,
        Mode::Conditional => {
            let spec = need_binning()?;
            let y = resolve_labels(&spec, &data.labels)?;
            predict::predict_conditional(&artifact.coeffs, &data.x, &y, &spec, 0)?
        }
        Mode::Coarse => {
            let spec = need_binning()?;
            let support_labels = match &args.observed_labels {
                Some(path) => io::read_labels(path)?,
                None => data.labels.clone(),
            };
            let y = resolve_labels(&spec, &support_labels)?;
            let observed = ObservedTestLabelSet::from_observations(&spec, 0, &y)?;
            predict::predict_coarse(&artifact.coeffs, &data.x, &spec, 0, &observed)?
        }
    };
    std::fs::create_dir_all(&args.out)?;
    io::write_predictions(&pred, &args.out.join("predictions.tsv"))?;
    if !data.labels.is_empty() {
        io::write_confusion_matrix(
            &pred,
            &data.labels,
            &args.out.join("confusion_matrix.tsv"),
        )?;
    }
    println!("predicted {} observations", pred.labels.len());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> ibmr::Result<()> {
    let mut config = io::read_sim_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output = simulate(&config)?;
    io::write_sim_output(&output, &args.out)?;
    println!(
        "simulated n={} p={} s={} b={} seed={} into {}",
        config.n,
        config.p,
        config.s,
        config.b,
        config.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> ibmr::Result<()> {
    if args.replicates == 0 {
        return Err(Error::InvalidArgument(
            "replicates must be positive".to_string(),
        ));
    }
    let scenarios = io::read_scenarios(&args.scenarios)?;
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<ibmr::Result<Vec<_>>>()?;
    let settings = PathSettings {
        n_lambda: args.n_lambda,
        lambda_min_ratio: args.lambda_min_ratio,
        rhos: args.rhos.clone(),
        solver: SolverConfig::default(),
    };

    let jobs: Vec<(Scenario, usize)> = scenarios
        .iter()
        .flat_map(|sc| (1..=args.replicates).map(move |rep| (sc.clone(), rep)))
        .collect();
    let results: Vec<(Vec<BenchmarkRecord>, Vec<BenchmarkFailure>)> = jobs
        .par_iter()
        .map(|(sc, rep)| run_replicate(sc, *rep, args.seed, &methods, &settings))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        records.extend(r);
        failures.extend(f);
    }
    std::fs::create_dir_all(&args.out)?;
    io::write_benchmark_long(&records, &args.out.join("benchmark_long.tsv"))?;
    io::write_benchmark_summary(
        &records,
        &failures,
        &args.out.join("benchmark_summary.tsv"),
    )?;
    for f in &failures {
        eprintln!(
            "ibmr: benchmark failure: n={} b={} method={} replicate={}: {}",
            f.scenario.n, f.scenario.b, f.method, f.replicate, f.message
        );
    }
    println!(
        "benchmark complete: {} records, {} failures",
        records.len(),
        failures.len()
    );
    Ok(())
}

fn run_replicate(
    scenario: &Scenario,
    replicate: usize,
    base_seed: u64,
    methods: &[Method],
    settings: &PathSettings,
) -> (Vec<BenchmarkRecord>, Vec<BenchmarkFailure>) {
    let config = SimConfig {
        n: scenario.n,
        p: scenario.p,
        s: scenario.s,
        b: scenario.b,
        seed: base_seed + replicate as u64 - 1,
        test_n: scenario.test_n,
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let sim = match simulate(&config) {
        Ok(sim) => sim,
        Err(e) => {
            for method in methods {
                failures.push(BenchmarkFailure {
                    scenario: scenario.clone(),
                    method: method.name().to_string(),
                    replicate,
                    message: e.to_string(),
                });
            }
            return (records, failures);
        }
    };
    for &method in methods {
        let oracle = method.is_oracle().then(|| {
            (
                sim.truth.train_fine_labels.as_slice(),
                sim.truth.validation_fine_labels.as_slice(),
            )
        });
        let outcome = fit_method(method, &sim.train, &sim.validation, oracle, settings)
            .and_then(|mf| evaluate_on_test(mf.coeffs(), &sim));
        match outcome {
            Ok(eval) => records.push(BenchmarkRecord {
                scenario: scenario.clone(),
                method: method.name().to_string(),
                replicate,
                kl: eval.kl,
                hellinger: eval.hellinger,
                error_rate: eval.error_rate,
            }),
            Err(e) => failures.push(BenchmarkFailure {
                scenario: scenario.clone(),
                method: method.name().to_string(),
                replicate,
                message: e.to_string(),
            }),
        }
    }
    (records, failures)
}
