use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use rpdml::data::{
    generate_labeled_split, generate_panel, normalize_features, FeatureStats, LabeledDataset, PanelSpec, SyntheticSpec,
};
use rpdml::eval::{
    backtest as run_backtest, knn_accuracy, knn_predict_batch, mahalanobis_metric, spearman_ic, BacktestOptions,
    EuclideanSource, KnnPredictor, MahalanobisSource, MetricSource, PanelDataset, PortfolioResult, RpdmlSource,
};
use rpdml::rpdml::{train_observed, MetricModel, ModelJson, RpdmlConfig};
use rpdml::solver::toy::{grid_search_optimum, ToyProblem, ToyStudy};
use rpdml::solver::{corollary1_sums, step_sums, SolverConfig, DEFAULT_INNER_MAX_ITERS, DEFAULT_INNER_TOLERANCE};
use rpdml::{Error, Execution, SpdMatrix};

use crate::config::{env_out_dir, require_file, resolve, snapshot};
use crate::{create_dir, open, plots, read_json, write_file, write_json, CliError, CliResult};

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| {
        CliError::Usage(format!("--{flag} is required (or set `{}` in the config file)", flag.replace('-', "_")))
    })
}

fn out_dir_or_default(dir: &mut Option<PathBuf>, command: &str) -> PathBuf {
    dir.get_or_insert_with(|| Path::new("runs").join(command)).clone()
}

fn finish_run<T: Serialize>(command: &str, dir: &Path, config: &T) -> CliResult<()> {
    write_file(dir, "config.toml", snapshot(command, config)?)?;
    plots::export(dir)?;
    Ok(())
}

// ---------------------------------------------------------------- flags ----

/// Overrides for the metric-learning settings (`[rpdml]` in the config file).
#[derive(Debug, Default, Args, Serialize)]
pub struct RpdmlFlags {
    /// Slack penalty.
    #[arg(long)]
    pub c1: Option<f64>,
    /// Dual regularization.
    #[arg(long)]
    pub c2: Option<f64>,
    /// Base step size.
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Outer iterations.
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub inner_tolerance: Option<f64>,
    #[arg(long)]
    pub inner_max_iters: Option<usize>,
    /// Percentile of reference distances used as the similar-pair bound.
    #[arg(long)]
    pub percentile_lo: Option<f64>,
    /// Percentile of reference distances used as the dissimilar-pair bound.
    #[arg(long)]
    pub percentile_hi: Option<f64>,
    #[arg(long, value_parser = ["include", "omit"])]
    pub prox_term_mode: Option<String>,
    #[arg(long, value_parser = ["identity", "inverse_covariance"])]
    pub w0_mode: Option<String>,
    #[arg(long)]
    pub max_pairs_per_class: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Labeled,
    Panel,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: Option<DataKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/gen-data].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Training rows (labeled).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Held-out rows (labeled).
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub assets: Option<usize>,
    /// Feature dimension [default: 20 labeled, 10 panel].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Dimensions carrying signal [default: 4 labeled, 3 panel].
    #[arg(long)]
    pub informative_dims: Option<usize>,
    /// Variance multiplier of the distractor dimensions.
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Distance between class centres (labeled).
    #[arg(long)]
    pub class_sep: Option<f64>,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct TrainArgs {
    /// Labeled CSV (`label,f_0,…,target`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/train].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Standardize features first and save the statistics.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub normalize: Option<bool>,
    #[command(flatten)]
    pub rpdml: RpdmlFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    Mahalanobis,
    Learned,
}

impl MetricKind {
    fn name(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::Mahalanobis => "mahalanobis",
            MetricKind::Learned => "learned",
        }
    }
}

#[derive(Debug, Default, Args, Serialize)]
pub struct EvalArgs {
    /// Labeled CSV the neighbours come from.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Labeled CSV to score.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory [default: runs/eval].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Metrics to compare [default: euclidean,mahalanobis, plus learned with --model].
    #[arg(long = "metric", value_enum, value_delimiter = ',')]
    #[serde(rename = "metrics")]
    pub metrics: Option<Vec<MetricKind>>,
    /// `model.json` written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `normalization.json` to apply to both sets [default: the one next to --model, if any].
    #[arg(long)]
    pub normalization: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Euclidean,
    Mahalanobis,
    Rpdml,
}

/// Overrides for the portfolio settings (`[backtest]` in the config file).
#[derive(Debug, Default, Args, Serialize)]
pub struct PortfolioFlags {
    /// Assets held each period.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Trailing window of the rolling drawdown, in periods.
    #[arg(long)]
    pub mdd_window: Option<usize>,
    #[arg(long)]
    pub periods_per_year: Option<usize>,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct BacktestArgs {
    /// Panel CSV (`period,asset_id,f_0,…,next_return`).
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/backtest].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Metric sources [default: euclidean,mahalanobis,rpdml].
    #[arg(long = "source", value_enum, value_delimiter = ',')]
    #[serde(rename = "sources")]
    pub sources: Option<Vec<SourceKind>>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Standardize each training period and apply its statistics to the next.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub normalize: Option<bool>,
    #[command(flatten)]
    pub backtest: PortfolioFlags,
    #[command(flatten)]
    pub rpdml: RpdmlFlags,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct BenchArgs {
    /// Output directory [default: runs/bench-convergence].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Outer iterations T.
    #[arg(long = "T", visible_alias = "iters")]
    pub iters: Option<usize>,
    /// Minimize (x − target)².
    #[arg(long)]
    pub target: Option<f64>,
    /// Constraint x ≤ cap.
    #[arg(long)]
    pub cap: Option<f64>,
    /// Drop the constraint.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub unconstrained: Option<bool>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub inner_tolerance: Option<f64>,
    #[arg(long)]
    pub inner_max_iters: Option<usize>,
    /// Grid spacing of the reference optimum search.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Upper end of the reference grid (0, grid_hi].
    #[arg(long)]
    pub grid_hi: Option<f64>,
}

// ------------------------------------------------------------- gen-data ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub kind: DataKind,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub classes: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub periods: usize,
    pub assets: usize,
    pub dim: Option<usize>,
    pub informative_dims: Option<usize>,
    pub noise_scale: f64,
    pub class_sep: f64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            kind: DataKind::Labeled,
            seed: None,
            out_dir: None,
            classes: 2,
            samples: 200,
            test_samples: 1000,
            periods: 12,
            assets: 100,
            dim: None,
            informative_dims: None,
            noise_scale: 3.0,
            class_sep: 2.0,
        }
    }
}

pub fn gen_data(file: Option<&Path>, args: &GenDataArgs) -> CliResult<()> {
    let mut cfg: GenDataConfig = resolve(file, env_out_dir(), args)?;
    let seed = required(cfg.seed, "seed")?;
    let dir = out_dir_or_default(&mut cfg.out_dir, "gen-data");
    let (dim, inf) = match cfg.kind {
        DataKind::Labeled => (20, 4),
        DataKind::Panel => (10, 3),
    };
    let dim = *cfg.dim.get_or_insert(dim);
    let informative_dims = *cfg.informative_dims.get_or_insert(inf);
    create_dir(&dir)?;
    match cfg.kind {
        DataKind::Labeled => {
            let spec = SyntheticSpec {
                classes: cfg.classes,
                samples: cfg.samples,
                dim,
                informative_dims,
                noise_scale: cfg.noise_scale,
                class_sep: cfg.class_sep,
                seed,
            };
            let (train, test) = generate_labeled_split(&spec, cfg.test_samples)?;
            write_labeled(&dir, "train.csv", &train)?;
            write_labeled(&dir, "test.csv", &test)?;
            println!("wrote {} training and {} test rows to {}", train.len(), test.len(), dir.display());
        }
        DataKind::Panel => {
            let spec = PanelSpec {
                periods: cfg.periods,
                assets: cfg.assets,
                dim,
                informative_dims,
                noise_scale: cfg.noise_scale,
                seed,
            };
            let panel = generate_panel(&spec)?;
            let mut buf = Vec::new();
            panel.write_csv(&mut buf)?;
            write_file(&dir, "panel.csv", buf)?;
            println!("wrote {} periods × {} assets to {}", spec.periods, spec.assets, dir.display());
        }
    }
    write_file(&dir, "config.toml", snapshot("gen-data", &cfg)?)?;
    Ok(())
}

fn write_labeled(dir: &Path, name: &str, ds: &LabeledDataset) -> CliResult<()> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    write_file(dir, name, buf)?;
    Ok(())
}

fn read_labeled(path: &Path) -> CliResult<LabeledDataset> {
    require_file("dataset", path)?;
    Ok(LabeledDataset::read_csv(open(path)?)?)
}

// ---------------------------------------------------------------- train ----

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub normalize: bool,
    pub rpdml: RpdmlConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub command: String,
    pub samples: usize,
    pub dim: usize,
    pub iterations: usize,
    /// Iterate the solver's selection rule prefers; the model is the last one.
    pub best_index: Option<usize>,
    pub final_objective: f64,
    pub initial_violation: f64,
    pub final_violation: f64,
    /// `final_violation / initial_violation`, absent when nothing was violated.
    pub violation_ratio: Option<f64>,
    pub u: f64,
    pub l: f64,
    /// Smallest λ or γ entry over all iterations.
    pub min_dual: f64,
    /// Smallest ξ entry over all iterations.
    pub min_slack: f64,
}

pub fn train(file: Option<&Path>, args: &TrainArgs) -> CliResult<()> {
    let mut cfg: TrainConfig = resolve(file, env_out_dir(), args)?;
    let seed = required(cfg.seed, "seed")?;
    let data = required(cfg.data.clone(), "data")?;
    let dir = out_dir_or_default(&mut cfg.out_dir, "train");
    if cfg.rpdml.seed != 0 && cfg.rpdml.seed != seed {
        log::warn!("rpdml.seed = {} is replaced by seed = {seed}", cfg.rpdml.seed);
    }
    cfg.rpdml.seed = seed;
    cfg.rpdml.validate()?;
    let ds = read_labeled(&data)?;
    create_dir(&dir)?;

    let features = if cfg.normalize {
        let (x, stats) = normalize_features(&ds.features)?;
        write_json(&dir, "normalization.json", &stats)?;
        x
    } else {
        ds.features.clone()
    };

    let (mut min_dual, mut min_slack) = (f64::INFINITY, f64::INFINITY);
    let result = train_observed(Execution::default(), &features, &ds.labels, &cfg.rpdml, |it| {
        min_dual = min_dual.min(it.dual.min());
        min_slack = it.point.xi.values().iter().fold(min_slack, |m, &v| m.min(v));
    });
    let model = match result {
        Ok(m) => m,
        Err(Error::Diverged { iteration, reason, trace }) => {
            write_file(&dir, "trace.jsonl", trace.to_jsonl())?;
            write_file(&dir, "config.toml", snapshot("train", &cfg)?)?;
            return Err(Error::Diverged { iteration, reason, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&dir, "model.json", &model.to_json())?;
    write_file(&dir, "trace.jsonl", model.trace.to_jsonl())?;
    let final_violation = model.final_violation();
    let metrics = TrainMetrics {
        command: "train".into(),
        samples: ds.len(),
        dim: ds.dim(),
        iterations: model.trace.len(),
        best_index: model.trace.best_index,
        final_objective: model.trace.last().map_or(f64::NAN, |r| r.f),
        initial_violation: model.initial_violation,
        final_violation,
        violation_ratio: (model.initial_violation > 0.0).then(|| final_violation / model.initial_violation),
        u: model.u,
        l: model.l,
        min_dual: if min_dual.is_finite() { min_dual } else { 0.0 },
        min_slack: if min_slack.is_finite() { min_slack } else { 0.0 },
    };
    write_json(&dir, "metrics.json", &metrics)?;
    finish_run("train", &dir, &cfg)?;
    println!(
        "trained {} iterations: violation {:.4} -> {:.4}; wrote {}",
        metrics.iterations,
        metrics.initial_violation,
        metrics.final_violation,
        dir.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- eval ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub metrics: Option<Vec<MetricKind>>,
    pub model: Option<PathBuf>,
    pub normalization: Option<PathBuf>,
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { train: None, test: None, out_dir: None, metrics: None, model: None, normalization: None, k: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: String,
    /// k-NN classification accuracy on the test labels.
    pub accuracy: f64,
    /// Spearman correlation of k-NN target predictions with the test targets.
    pub ic: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub command: String,
    pub k: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub results: Vec<MetricScore>,
}

pub fn eval(file: Option<&Path>, args: &EvalArgs) -> CliResult<()> {
    let mut cfg: EvalConfig = resolve(file, env_out_dir(), args)?;
    let train_path = required(cfg.train.clone(), "train")?;
    let test_path = required(cfg.test.clone(), "test")?;
    let dir = out_dir_or_default(&mut cfg.out_dir, "eval");
    if cfg.normalization.is_none() {
        if let Some(model) = &cfg.model {
            let beside = model.with_file_name("normalization.json");
            if beside.is_file() {
                log::info!("using {}", beside.display());
                cfg.normalization = Some(beside);
            }
        }
    }
    let metrics = cfg
        .metrics
        .get_or_insert_with(|| {
            let mut m = vec![MetricKind::Euclidean, MetricKind::Mahalanobis];
            if cfg.model.is_some() {
                m.push(MetricKind::Learned);
            }
            m
        })
        .clone();
    if metrics.contains(&MetricKind::Learned) && cfg.model.is_none() {
        return Err(CliError::Usage("--metric learned needs --model".into()));
    }

    let train = read_labeled(&train_path)?;
    let test = read_labeled(&test_path)?;
    let (xtr, xte) = match &cfg.normalization {
        Some(p) => {
            require_file("normalization", p)?;
            let stats: FeatureStats = read_json(p)?;
            (stats.apply(&train.features)?, stats.apply(&test.features)?)
        }
        None => (train.features.clone(), test.features.clone()),
    };

    let exec = Execution::default();
    let mut results = Vec::new();
    for kind in metrics {
        let w = match kind {
            MetricKind::Euclidean => SpdMatrix::identity(xtr.ncols()),
            MetricKind::Mahalanobis => mahalanobis_metric(&xtr)?,
            MetricKind::Learned => {
                let path = cfg.model.as_ref().expect("checked above");
                require_file("model", path)?;
                let json: ModelJson = read_json(path)?;
                MetricModel::from_json(&json)?.w
            }
        };
        results.push(score(exec, kind.name(), &w, &xtr, &train, &xte, &test, cfg.k)?);
    }

    create_dir(&dir)?;
    let out =
        EvalMetrics { command: "eval".into(), k: cfg.k, train_samples: train.len(), test_samples: test.len(), results };
    write_json(&dir, "metrics.json", &out)?;
    finish_run("eval", &dir, &cfg)?;
    println!("{:<12} {:>9} {:>9}", "metric", "accuracy", "ic");
    for r in &out.results {
        let ic = r.ic.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("{:<12} {:>9.4} {:>9}", r.metric, r.accuracy, ic);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score(
    exec: Execution,
    name: &str,
    w: &SpdMatrix,
    xtr: &DMatrix<f64>,
    train: &LabeledDataset,
    xte: &DMatrix<f64>,
    test: &LabeledDataset,
    k: usize,
) -> CliResult<MetricScore> {
    let accuracy = knn_accuracy(exec, w, xtr, &train.labels, xte, &test.labels, k)?;
    let pred = knn_predict_batch(exec, w, xtr, &train.targets, xte, k)?;
    let ic = match spearman_ic(&pred, &test.targets) {
        Ok(v) => Some(v),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(MetricScore { metric: name.into(), accuracy, ic })
}

// ------------------------------------------------------------- backtest ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub panel: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub sources: Vec<SourceKind>,
    pub k: usize,
    pub normalize: bool,
    pub backtest: BacktestOptions,
    pub rpdml: RpdmlConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            panel: None,
            seed: None,
            out_dir: None,
            sources: vec![SourceKind::Euclidean, SourceKind::Mahalanobis, SourceKind::Rpdml],
            k: 10,
            normalize: false,
            backtest: BacktestOptions::default(),
            rpdml: RpdmlConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: String,
    pub periods_traded: usize,
    pub skipped: usize,
    pub final_return: f64,
    pub max_drawdown: f64,
    pub ic_mean: Option<f64>,
    pub ic_std: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BacktestMetrics {
    pub command: String,
    pub k: usize,
    pub top_n: usize,
    pub results: Vec<SourceSummary>,
}

pub fn backtest(file: Option<&Path>, args: &BacktestArgs) -> CliResult<()> {
    let mut cfg: BacktestConfig = resolve(file, env_out_dir(), args)?;
    let seed = required(cfg.seed, "seed")?;
    let panel_path = required(cfg.panel.clone(), "panel")?;
    let dir = out_dir_or_default(&mut cfg.out_dir, "backtest");
    cfg.rpdml.seed = seed;
    cfg.rpdml.validate()?;
    if cfg.sources.is_empty() {
        return Err(CliError::Usage("--source needs at least one value".into()));
    }
    require_file("panel", &panel_path)?;
    let data = PanelDataset::read_csv(open(&panel_path)?)?;

    let exec = Execution::default();
    let mut summaries = Vec::new();
    let mut outputs = Vec::new();
    for &kind in &cfg.sources {
        let res = match kind {
            SourceKind::Euclidean => portfolio(exec, &data, EuclideanSource, &cfg)?,
            SourceKind::Mahalanobis => portfolio(exec, &data, MahalanobisSource, &cfg)?,
            SourceKind::Rpdml => portfolio(exec, &data, RpdmlSource { config: cfg.rpdml.clone(), exec }, &cfg)?,
        };
        let ic = res.ic_summary();
        summaries.push(SourceSummary {
            source: res.predictor.clone(),
            periods_traded: res.summary.periods_traded,
            skipped: res.skipped.len(),
            final_return: res.summary.final_return,
            max_drawdown: res.summary.max_drawdown,
            ic_mean: ic.map(|s| s.mean),
            ic_std: ic.map(|s| s.std),
        });
        outputs.push(res);
    }

    create_dir(&dir)?;
    for res in &outputs {
        write_json(&dir, &format!("portfolio_{}.json", res.predictor), res)?;
    }
    let metrics =
        BacktestMetrics { command: "backtest".into(), k: cfg.k, top_n: cfg.backtest.top_n, results: summaries };
    write_json(&dir, "metrics.json", &metrics)?;
    finish_run("backtest", &dir, &cfg)?;
    println!("{:<12} {:>7} {:>10} {:>8} {:>16}", "source", "traded", "return", "mdd", "ic");
    for s in &metrics.results {
        let ic = match (s.ic_mean, s.ic_std) {
            (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
            _ => "n/a".into(),
        };
        println!(
            "{:<12} {:>7} {:>10.4} {:>8.4} {:>16}",
            s.source, s.periods_traded, s.final_return, s.max_drawdown, ic
        );
    }
    Ok(())
}

fn portfolio<S: MetricSource>(
    exec: Execution,
    data: &PanelDataset,
    source: S,
    cfg: &BacktestConfig,
) -> CliResult<PortfolioResult> {
    let predictor = KnnPredictor { source, k: cfg.k, normalize: cfg.normalize, exec };
    Ok(run_backtest(exec, data, &predictor, &cfg.backtest)?)
}

// ---------------------------------------------------- bench-convergence ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub out_dir: Option<PathBuf>,
    pub iters: usize,
    pub target: f64,
    pub cap: f64,
    pub unconstrained: bool,
    pub x0: f64,
    pub eta0: f64,
    pub alpha: f64,
    pub inner_tolerance: f64,
    pub inner_max_iters: usize,
    pub grid_step: f64,
    pub grid_hi: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        use rpdml::solver::toy::{DEFAULT_ALPHA, DEFAULT_CAP, DEFAULT_ETA0, DEFAULT_TARGET, DEFAULT_X0};
        BenchConfig {
            out_dir: None,
            iters: 500,
            target: DEFAULT_TARGET,
            cap: DEFAULT_CAP,
            unconstrained: false,
            x0: DEFAULT_X0,
            eta0: DEFAULT_ETA0,
            alpha: DEFAULT_ALPHA,
            inner_tolerance: DEFAULT_INNER_TOLERANCE,
            inner_max_iters: DEFAULT_INNER_MAX_ITERS,
            grid_step: 1e-4,
            grid_hi: 10.0,
        }
    }
}

/// One trace line of `bench-convergence`: the iteration record plus the
/// bound check at horizon `t + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchLine {
    pub t: usize,
    pub eta: f64,
    pub f: f64,
    pub h_violation: f64,
    pub dual_norm: f64,
    /// `x_{t+1}`.
    pub x: f64,
    pub best_gap: f64,
    pub bound: f64,
    pub bound_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepSumCheck {
    pub sum_eta: f64,
    pub sum_eta_sq: f64,
    /// `2(√T − 1)`.
    pub sum_eta_lower: f64,
    /// `1 + ln T`.
    pub sum_eta_sq_upper: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchMetrics {
    pub command: String,
    pub iters: usize,
    pub x_star: f64,
    pub f_star: f64,
    pub best_x: f64,
    pub best_gap: f64,
    pub bound: f64,
    /// Horizons `t + 1` whose gap exceeded the bound.
    pub bound_failures: Vec<usize>,
    /// `gap · (√T − 1) / ln T`.
    pub rate_statistic: Option<f64>,
    /// Step-size sums for `η_t = 1/√(t+1)`.
    pub step_sums: StepSumCheck,
}

pub fn bench_convergence(file: Option<&Path>, args: &BenchArgs) -> CliResult<()> {
    let mut cfg: BenchConfig = resolve(file, env_out_dir(), args)?;
    let dir = out_dir_or_default(&mut cfg.out_dir, "bench-convergence");
    if cfg.iters == 0 {
        return Err(CliError::Usage("--T must be positive".into()));
    }
    if !(cfg.grid_step > 0.0) || !(cfg.grid_hi > cfg.grid_step) {
        return Err(CliError::Usage("need 0 < grid_step < grid_hi".into()));
    }
    let problem = if cfg.unconstrained {
        ToyProblem::unconstrained(cfg.target)
    } else {
        ToyProblem::constrained(cfg.target, cfg.cap)
    };
    let solver =
        SolverConfig::new(cfg.alpha, cfg.eta0, cfg.iters)?.with_inner(cfg.inner_tolerance, cfg.inner_max_iters)?;
    let (x_star, f_star) = grid_search_optimum(&problem, 0.0, cfg.grid_hi, cfg.grid_step)
        .ok_or_else(|| CliError::Usage("no feasible grid point in (0, grid_hi]".into()))?;
    let study = ToyStudy::run(problem, cfg.x0, &solver)?;

    let mut lines = String::new();
    let mut failures = Vec::new();
    for (i, r) in study.outcome.trace.records.iter().enumerate() {
        let check = study.bound_check(i + 1, f_star)?;
        if !check.holds {
            failures.push(i + 1);
        }
        let line = BenchLine {
            t: r.t,
            eta: r.eta,
            f: r.f,
            h_violation: r.h_violation,
            dual_norm: r.dual_norm,
            x: study.points[i],
            best_gap: check.gap,
            bound: check.bound,
            bound_ok: check.holds,
        };
        lines.push_str(&serde_json::to_string(&line).map_err(Error::from)?);
        lines.push('\n');
    }

    let t = cfg.iters;
    let last = study.bound_check(t, f_star)?;
    let (sum_eta, sum_eta_sq) = step_sums(t, 1.0);
    let (lo, hi) = corollary1_sums(t)?;
    let metrics = BenchMetrics {
        command: "bench-convergence".into(),
        iters: t,
        x_star,
        f_star,
        best_x: study.points[last.best_index],
        best_gap: last.gap,
        bound: last.bound,
        bound_failures: failures,
        rate_statistic: study.rate_statistic(t, f_star),
        step_sums: StepSumCheck {
            sum_eta,
            sum_eta_sq,
            sum_eta_lower: lo,
            sum_eta_sq_upper: hi,
            holds: lo <= sum_eta && sum_eta_sq <= hi,
        },
    };

    create_dir(&dir)?;
    write_file(&dir, "trace.jsonl", lines)?;
    write_json(&dir, "metrics.json", &metrics)?;
    finish_run("bench-convergence", &dir, &cfg)?;
    println!(
        "T = {t}: best gap {:.3e}, bound {:.3e}; bound held at {}/{t} horizons; wrote {}",
        metrics.best_gap,
        metrics.bound,
        t - metrics.bound_failures.len(),
        dir.display()
    );
    if !metrics.bound_failures.is_empty() {
        log::warn!("bound exceeded at horizons {:?}", metrics.bound_failures);
    }
    Ok(())
}
