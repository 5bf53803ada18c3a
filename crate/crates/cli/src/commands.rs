use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use ndarray::{Array1, Array2};
use supersparse::baselines::{self, SelectionMethod};
use supersparse::dataio::{self, SyntheticKind};
use supersparse::metrics::{self, LossKind};
use supersparse::selection::{self, GridConfig};
use supersparse::{trainer, BoxConstraint, Dataset, Similarity, SparseModel, TrainConfig};

use crate::args::*;
use crate::manifest::RunManifest;
use crate::UsageError;

const TEST_SEED_OFFSET: u64 = 1000;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_data(args: &DataArgs, seed: u64, manifest: &mut RunManifest) -> Result<Dataset> {
    manifest.set("target", args.target.clone());
    if let Some(g) = &args.group_column {
        manifest.set("group_column", g.clone());
    }
    match (&args.data, args.synthetic) {
        (Some(path), _) => {
            manifest.input("data", path);
            dataio::load_csv(path, &args.target, args.group_column.as_deref())
                .with_context(|| format!("loading {}", path.display()))
        }
        (None, Some(kind)) => synthetic(kind, args.n, seed, manifest),
        (None, None) => Err(UsageError("one of --data or --synthetic is required".into()).into()),
    }
}

fn synthetic(kind: SyntheticKind, n: Option<u64>, seed: u64, manifest: &mut RunManifest) -> Result<Dataset> {
    let n = n.map_or(kind.default_size(), |n| n as usize);
    manifest.set_serialized("synthetic", &kind)?;
    manifest.set("n", n as i64);
    Ok(dataio::gen_synthetic(kind, n, seed)?)
}

fn build_similarity(args: &SimilarityArgs, dim: usize, manifest: &mut RunManifest) -> Result<Similarity> {
    let sim = match args.similarity {
        SimilarityKind::Rbf => match args.gamma {
            Some(g) => Similarity::rbf(g)?,
            None => Similarity::rbf_default(dim)?,
        },
        SimilarityKind::Linear => Similarity::linear(),
        SimilarityKind::Blackbox => {
            let cmd = args.scorer.as_deref().ok_or_else(|| UsageError("--scorer is required".into()))?;
            dataio::blackbox_bridge(cmd)?
        }
    };
    manifest.set_serialized("similarity", sim.spec())?;
    Ok(sim)
}

fn parse_box(text: &str) -> Result<BoxConstraint> {
    match text.trim() {
        "none" => Ok(BoxConstraint::Unbounded),
        "hull" => Ok(BoxConstraint::DataHull),
        list => list
            .split(',')
            .map(|pair| {
                let (lo, hi) = pair
                    .split_once(':')
                    .ok_or_else(|| UsageError(format!("--box entry `{pair}` is not `lo:hi`")))?;
                let parse = |s: &str| {
                    s.trim().parse::<f64>().map_err(|_| UsageError(format!("--box bound `{s}` is not a number")))
                };
                Ok((parse(lo)?, parse(hi)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(BoxConstraint::Bounds),
    }
}

fn train_config(args: &OptimArgs, seed: u64, data: &Dataset, manifest: &mut RunManifest) -> Result<TrainConfig> {
    let config = TrainConfig {
        lambda: args.lambda,
        eta: args.eta,
        epsilon: args.epsilon,
        max_sweeps: args.max_sweeps as usize,
        penalty_enabled: !args.no_penalty,
        bounds: parse_box(&args.bounds)?,
        seed,
        grad_mode: args.grad_mode,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    config.bounds.resolve(data).map_err(|e| UsageError(format!("--box: {e}")))?;
    manifest.set_serialized("train", &config)?;
    Ok(config)
}

fn save_model(model: &SparseModel, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join("model.toml");
    dataio::save_model(model, &path).with_context(|| format!("writing {}", path.display()))?;
    manifest.output("model", &path);
    manifest.result("m", model.num_prototypes() as i64);
    Ok(())
}

/// Training-set predictions with targets and residuals.
fn save_fitted(model: &SparseModel, data: &Dataset, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join("fitted.csv");
    let pred = model.predict_batch(data.features())?;
    let mut out = create_file(&path)?;
    dataio::write_predictions_csv(pred.view(), Some(data.targets()), &mut out)?;
    manifest.output("fitted", &path);
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("train", args.seed);
    let data = load_data(&args.data, args.seed, &mut manifest)?;
    let sim = build_similarity(&args.similarity, data.dim(), &mut manifest)?;
    let config = train_config(&args.optim, args.seed, &data, &mut manifest)?;
    let m = args.m as usize;
    manifest.set("m", m as i64);
    if m > data.len() {
        return Err(UsageError(format!("--m {m} exceeds the {} training rows", data.len())).into());
    }
    create_dir(&args.out)?;

    let (model, trace) = trainer::fit(&data, m, &sim, &config)?;
    manifest.similarity_evaluations = sim.evaluations();
    save_model(&model, &args.out, &mut manifest)?;
    let trace_path = args.out.join("trace.csv");
    dataio::write_trace_csv(&trace, &mut create_file(&trace_path)?)?;
    manifest.output("trace", &trace_path);
    save_fitted(&model, &data, &args.out, &mut manifest)?;

    manifest.result("initial_objective", trace.initial_objective);
    manifest.result("final_objective", trace.final_objective());
    manifest.result("iterations", trace.iterations() as i64);
    manifest.result("termination", format!("{:?}", trace.termination));
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

pub fn select_m(args: &SelectArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("select-m", args.seed);
    let data = load_data(&args.data, args.seed, &mut manifest)?;
    let sim = build_similarity(&args.similarity, data.dim(), &mut manifest)?;
    let config = train_config(&args.optim, args.seed, &data, &mut manifest)?;
    let grid = GridConfig {
        grid: args.grid.clone().unwrap_or_else(|| selection::default_grid(data.len())),
        rho: args.rho.unwrap_or_else(|| selection::default_rho(args.loss)),
        loss: args.loss,
        folds: args.folds,
    };
    grid.validate().map_err(|e| UsageError(e.to_string()))?;
    manifest.set_serialized("grid", &grid)?;
    create_dir(&args.out)?;

    let (model, trace) = selection::select_m(&data, &grid, &sim, &config)?;
    manifest.similarity_evaluations = sim.evaluations();
    save_model(&model, &args.out, &mut manifest)?;
    let sel_path = args.out.join("selection.csv");
    dataio::write_selection_csv(&trace, &mut create_file(&sel_path)?)?;
    manifest.output("selection", &sel_path);
    save_fitted(&model, &data, &args.out, &mut manifest)?;

    manifest.result("chosen_m", trace.chosen as i64);
    manifest.result("refit_on_all_data", trace.refit_on_all_data);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

/// Data for evaluation: an explicit test file, a fresh synthetic draw, or
/// the training set.
fn load_test(args: &DataArgs, test: Option<&PathBuf>, seed: u64, train: &Dataset, manifest: &mut RunManifest) -> Result<Dataset> {
    if let Some(path) = test {
        if !path.is_file() {
            anyhow::bail!("test file not found: {}", path.display());
        }
        manifest.input("test", path);
        manifest.set("evaluated_on", "test_file");
        return dataio::load_csv(path, &args.target, args.group_column.as_deref())
            .with_context(|| format!("loading {}", path.display()));
    }
    match (&args.data, args.synthetic) {
        (None, Some(kind)) => {
            let n = args.n.map_or(kind.default_size(), |n| n as usize);
            manifest.set("evaluated_on", "synthetic_draw");
            manifest.set("test_seed", (seed + TEST_SEED_OFFSET) as i64);
            Ok(dataio::gen_synthetic(kind, n, seed + TEST_SEED_OFFSET)?)
        }
        _ => {
            manifest.set("evaluated_on", "training_data");
            Ok(train.clone())
        }
    }
}

pub struct MethodResult {
    pub method: Method,
    pub model: SparseModel,
    pub train_seconds: f64,
    pub train_evaluations: u64,
}

pub fn run_method(
    method: Method,
    data: &Dataset,
    m: usize,
    sim: &Similarity,
    opts: &BaselineOpts,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<MethodResult> {
    let sim = sim.detached();
    let start = Instant::now();
    let model = match method {
        Method::Sparse => {
            let config = TrainConfig { lambda: opts.lambda, seed, ..TrainConfig::default() };
            trainer::fit(data, m, &sim, &config)?.0
        }
        Method::PsR => baselines::baseline_pipeline(data, SelectionMethod::Random, m, opts.lambda, &sim, seed)?,
        Method::PsB => baselines::baseline_pipeline(data, SelectionMethod::Border, m, opts.lambda, &sim, seed)?,
        Method::PsS => baselines::baseline_pipeline(data, SelectionMethod::Spanning, m, opts.lambda, &sim, seed)?,
        Method::PsKm => baselines::baseline_pipeline(data, SelectionMethod::KMedians, m, opts.lambda, &sim, seed)?,
        Method::Ridge => baselines::kernel_ridge_full(data, opts.lambda, &sim)?,
        Method::Lasso => match opts.lambda1 {
            Some(l1) => baselines::lasso_similarity(data, l1, &sim)?,
            None => {
                let (model, l1) = baselines::lasso_for_size(data, m, &sim)?;
                manifest.result("lasso_lambda1", l1);
                model
            }
        },
    };
    Ok(MethodResult { method, model, train_seconds: start.elapsed().as_secs_f64(), train_evaluations: sim.evaluations() })
}

pub struct Score {
    pub loss: LossKind,
    pub value: f64,
    pub evals_per_prediction: u64,
}

pub fn score(model: &SparseModel, test: &Dataset, loss: LossKind) -> Result<Score> {
    let pred = model.predict_batch(test.features())?;
    Ok(Score {
        loss,
        value: loss.eval(pred.view(), test.targets())?,
        evals_per_prediction: metrics::eval_cost(model)?,
    })
}

/// Error rate for ±1 labels, MAE otherwise.
fn bench_loss(data: &Dataset) -> LossKind {
    if data.is_binary_labeled() {
        LossKind::ErrorRate
    } else {
        LossKind::Mae
    }
}

const METRIC_HEADER: [&str; 6] = ["method", "metric", "value", "m", "evals_per_prediction", "train_seconds"];

fn metric_row(r: &MethodResult, s: &Score) -> [String; 6] {
    [
        r.method.name().to_string(),
        s.loss.name().to_string(),
        s.value.to_string(),
        r.model.num_prototypes().to_string(),
        s.evals_per_prediction.to_string(),
        format!("{:.6}", r.train_seconds),
    ]
}

fn check_m(m: usize, data: &Dataset) -> Result<()> {
    if m > data.len() {
        return Err(UsageError(format!("--m {m} exceeds the {} training rows", data.len())).into());
    }
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("baseline", args.seed);
    let data = load_data(&args.data, args.seed, &mut manifest)?;
    let sim = build_similarity(&args.similarity, data.dim(), &mut manifest)?;
    let m = args.m as usize;
    check_m(m, &data)?;
    manifest.set("method", args.method.name());
    manifest.set("m", m as i64);
    manifest.set("lambda", args.opts.lambda);
    if let Some(l1) = args.opts.lambda1 {
        manifest.set("lambda1", l1);
    }
    let test = load_test(&args.data, args.opts.test.as_ref(), args.seed, &data, &mut manifest)?;
    create_dir(&args.out)?;

    let result = run_method(args.method, &data, m, &sim, &args.opts, args.seed, &mut manifest)?;
    manifest.similarity_evaluations = result.train_evaluations;
    save_model(&result.model, &args.out, &mut manifest)?;
    let s = score(&result.model, &test, bench_loss(&data))?;
    let metrics_path = args.out.join("metrics.csv");
    let mut w = csv::Writer::from_writer(create_file(&metrics_path)?);
    w.write_record(METRIC_HEADER)?;
    w.write_record(metric_row(&result, &s))?;
    w.flush()?;
    manifest.output("metrics", &metrics_path);
    manifest.result(s.loss.name(), s.value);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("bench", args.seed);
    let mut data_args = args.data.clone();
    if data_args.data.is_none() && data_args.synthetic.is_none() {
        data_args.synthetic = Some(SyntheticKind::SineRegression);
    }
    let data = load_data(&data_args, args.seed, &mut manifest)?;
    let sim = build_similarity(&args.similarity, data.dim(), &mut manifest)?;
    let m = args.m as usize;
    check_m(m, &data)?;
    manifest.set("m", m as i64);
    manifest.set("lambda", args.opts.lambda);
    manifest.set("methods", args.methods.iter().map(|m| m.name()).collect::<Vec<_>>());
    let test = load_test(&data_args, args.opts.test.as_ref(), args.seed, &data, &mut manifest)?;
    create_dir(&args.out)?;

    let loss = bench_loss(&data);
    let table_path = args.out.join("bench.csv");
    let mut w = csv::Writer::from_writer(create_file(&table_path)?);
    w.write_record(METRIC_HEADER)?;
    let mut evaluations = 0;
    for &method in &args.methods {
        let result = run_method(method, &data, m, &sim, &args.opts, args.seed, &mut manifest)?;
        evaluations += result.train_evaluations;
        let s = score(&result.model, &test, loss)?;
        w.write_record(metric_row(&result, &s))?;
    }
    w.flush()?;
    manifest.output("table", &table_path);
    manifest.similarity_evaluations = evaluations;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

/// Features (and targets, when the target column exists) from a CSV that
/// may have no data rows.
fn read_features(path: &Path, target: &str, group: Option<&str>) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let target_col = headers.iter().position(|h| h.trim() == target);
    let group_col = group.and_then(|g| headers.iter().position(|h| h.trim() == g));
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&c| Some(c) != target_col && Some(c) != group_col).collect();
    let (mut values, mut targets, mut rows) = (Vec::new(), Vec::new(), 0);
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.with_context(|| format!("{}: line {line}", path.display()))?;
        let cell = |c: usize| -> Result<f64> {
            record[c]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: line {line}, column `{}`", path.display(), &headers[c]))
        };
        for &c in &feature_cols {
            values.push(cell(c)?);
        }
        if let Some(t) = target_col {
            targets.push(cell(t)?);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, feature_cols.len()), values).expect("row-major shape");
    Ok((x, target_col.map(|_| Array1::from(targets))))
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("predict", 0);
    manifest.input("model", &args.model);
    manifest.input("data", &args.data);
    manifest.set("target", args.target.clone());
    let model = dataio::load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    manifest.seed = model.metadata.seed;
    let (x, truth) = read_features(&args.data, &args.target, args.group_column.as_deref())?;
    if x.ncols() != model.dim() {
        anyhow::bail!("model expects {} features but {} has {}", model.dim(), args.data.display(), x.ncols());
    }
    let before = model.similarity().evaluations();
    let pred = model.predict_batch(x.view())?;
    manifest.similarity_evaluations = model.similarity().evaluations() - before;

    let dir = match args.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    let mut out = create_file(&args.out)?;
    dataio::write_predictions_csv(pred.view(), truth.as_ref().map(|t| t.view()), &mut out)?;
    drop(out);
    manifest.output("predictions", &args.out);
    manifest.result("rows", pred.len() as i64);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write_beside(&args.out)?;
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("generate", args.seed);
    let data = synthetic(args.kind, args.n, args.seed, &mut manifest)?;
    let dir = match args.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    dataio::write_dataset_csv(&data, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    manifest.output("data", &args.out);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write_beside(&args.out)?;
    Ok(())
}
