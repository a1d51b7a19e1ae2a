use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::knn::{knn_predict_batch, mahalanobis_metric};
use super::metrics::{accumulated_return, annual_returns, max_drawdown, rolling_max_drawdown, spearman_ic, IcSummary};
use super::panel::{PanelDataset, PanelPeriod};
use crate::data::normalize_features;
use crate::error::{check_dim, Error, Result};
use crate::par::{map_indexed, Execution};
use crate::rng::derive_seed;
use crate::rpdml::{train_with, RpdmlConfig};
use crate::spd::SpdMatrix;

/// Supplies the metric used for one backtest window.
pub trait MetricSource: Sync {
    fn name(&self) -> String;

    /// Metric fitted on one period's features and realized returns.
    fn metric(&self, window: usize, features: &DMatrix<f64>, returns: &[f64]) -> Result<SpdMatrix>;
}

/// Identity metric.
#[derive(Clone, Copy, Debug, Default)]
pub struct EuclideanSource;

impl MetricSource for EuclideanSource {
    fn name(&self) -> String {
        "euclidean".into()
    }

    fn metric(&self, _: usize, features: &DMatrix<f64>, _: &[f64]) -> Result<SpdMatrix> {
        Ok(SpdMatrix::identity(features.ncols()))
    }
}

/// Inverse covariance of the window's features.
#[derive(Clone, Copy, Debug, Default)]
pub struct MahalanobisSource;

impl MetricSource for MahalanobisSource {
    fn name(&self) -> String {
        "mahalanobis".into()
    }

    fn metric(&self, _: usize, features: &DMatrix<f64>, _: &[f64]) -> Result<SpdMatrix> {
        mahalanobis_metric(features)
    }
}

/// Metric learned on labels "return above the window median".
#[derive(Clone, Debug)]
pub struct RpdmlSource {
    pub config: RpdmlConfig,
    pub exec: Execution,
}

impl MetricSource for RpdmlSource {
    fn name(&self) -> String {
        "rpdml".into()
    }

    fn metric(&self, window: usize, features: &DMatrix<f64>, returns: &[f64]) -> Result<SpdMatrix> {
        let labels = median_labels(returns);
        let config = RpdmlConfig { seed: derive_seed(self.config.seed, window as u64), ..self.config.clone() };
        Ok(train_with(self.exec, features, &labels, &config)?.w)
    }
}

/// `1` for values strictly above the median, else `0`.
pub fn median_labels(values: &[f64]) -> Vec<i64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    values.iter().map(|&v| i64::from(v > median)).collect()
}

/// Predicts next-period returns of one period's assets from the previous period.
pub trait ReturnPredictor: Sync {
    fn name(&self) -> String;

    /// Windows whose training period has fewer assets are skipped.
    fn min_train_assets(&self) -> usize {
        1
    }

    fn predict(&self, window: usize, train: &PanelPeriod, test: &PanelPeriod) -> Result<Vec<f64>>;
}

/// k-NN regression under a per-window metric.
#[derive(Clone, Debug)]
pub struct KnnPredictor<S> {
    pub source: S,
    pub k: usize,
    /// Standardize with statistics fitted on the training period.
    pub normalize: bool,
    pub exec: Execution,
}

impl<S: MetricSource> KnnPredictor<S> {
    pub fn new(source: S, k: usize) -> Self {
        KnnPredictor { source, k, normalize: false, exec: Execution::default() }
    }
}

impl<S: MetricSource> ReturnPredictor for KnnPredictor<S> {
    fn name(&self) -> String {
        self.source.name()
    }

    fn min_train_assets(&self) -> usize {
        self.k
    }

    fn predict(&self, window: usize, train: &PanelPeriod, test: &PanelPeriod) -> Result<Vec<f64>> {
        let (xtr, xte) = if self.normalize {
            let (xtr, stats) = normalize_features(&train.features)?;
            (xtr, stats.apply(&test.features)?)
        } else {
            (train.features.clone(), test.features.clone())
        };
        let w = self.source.metric(window, &xtr, &train.next_returns)?;
        knn_predict_batch(self.exec, &w, &xtr, &train.next_returns, &xte, self.k)
    }
}

/// Predicts the realized returns themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePredictor;

impl ReturnPredictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, _: usize, _: &PanelPeriod, test: &PanelPeriod) -> Result<Vec<f64>> {
        Ok(test.next_returns.clone())
    }
}

/// The same prediction for every asset.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantPredictor(pub f64);

impl ReturnPredictor for ConstantPredictor {
    fn name(&self) -> String {
        "constant".into()
    }

    fn predict(&self, _: usize, _: &PanelPeriod, test: &PanelPeriod) -> Result<Vec<f64>> {
        Ok(vec![self.0; test.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestOptions {
    pub top_n: usize,
    /// Trailing window of the rolling drawdown, in periods.
    pub mdd_window: usize,
    pub periods_per_year: usize,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        BacktestOptions { top_n: 10, mdd_window: 4, periods_per_year: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPeriod {
    pub period: i64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSummary {
    pub periods_traded: usize,
    pub final_return: f64,
    pub max_drawdown: f64,
    pub ic_mean: Option<f64>,
    pub ic_std: Option<f64>,
}

/// Backtest output. Series are indexed by traded period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioResult {
    pub predictor: String,
    pub periods: Vec<i64>,
    pub period_returns: Vec<f64>,
    /// `Π(1 + r_i) − 1`.
    pub cumulative: Vec<f64>,
    pub rolling_max_drawdown: Vec<f64>,
    pub annual_returns: Vec<f64>,
    /// Spearman IC per traded period; `None` when undefined (constant input).
    pub ic: Vec<Option<f64>>,
    pub selections: Vec<Vec<i64>>,
    pub skipped: Vec<SkippedPeriod>,
    pub summary: PortfolioSummary,
}

impl PortfolioResult {
    pub fn ic_summary(&self) -> Option<IcSummary> {
        let v: Vec<f64> = self.ic.iter().flatten().copied().collect();
        IcSummary::of(&v)
    }
}

/// Indices of the `top_n` highest predictions; ties go to the lower asset id.
pub fn select_top(predictions: &[f64], asset_ids: &[i64], top_n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..predictions.len()).collect();
    idx.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(asset_ids[a].cmp(&asset_ids[b])));
    idx.truncate(top_n);
    idx
}

enum Window {
    Traded { period: i64, ret: f64, ic: Option<f64>, selection: Vec<i64> },
    Skipped(SkippedPeriod),
}

/// Train on period `q − 1` (features and their realized next returns),
/// predict period `q`, hold the top `top_n` assets with equal weight.
pub fn backtest<P: ReturnPredictor + ?Sized>(
    exec: Execution,
    data: &PanelDataset,
    predictor: &P,
    options: &BacktestOptions,
) -> Result<PortfolioResult> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument("backtest needs at least 2 periods".into()));
    }
    if options.top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be positive".into()));
    }
    let periods = data.periods();
    if let Some(p) = periods[1..].iter().find(|p| p.len() < options.top_n) {
        return Err(Error::InvalidArgument(format!(
            "period {} has {} assets, fewer than top_n = {}",
            p.period,
            p.len(),
            options.top_n
        )));
    }
    let windows = map_indexed(exec, periods.len() - 1, |i| -> Result<Window> {
        let (train, test) = (&periods[i], &periods[i + 1]);
        if train.len() < predictor.min_train_assets() {
            return Ok(Window::Skipped(SkippedPeriod {
                period: test.period,
                reason: format!(
                    "training period {} has {} assets, need {}",
                    train.period,
                    train.len(),
                    predictor.min_train_assets()
                ),
            }));
        }
        let pred = predictor.predict(i + 1, train, test)?;
        check_dim("predictions", test.len(), pred.len())?;
        let chosen = select_top(&pred, &test.asset_ids, options.top_n);
        let ret = chosen.iter().map(|&a| test.next_returns[a]).sum::<f64>() / chosen.len() as f64;
        let ic = match spearman_ic(&pred, &test.next_returns) {
            Ok(v) => Some(v),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Window::Traded {
            period: test.period,
            ret,
            ic,
            selection: chosen.iter().map(|&a| test.asset_ids[a]).collect(),
        })
    });

    let mut res = PortfolioResult {
        predictor: predictor.name(),
        periods: Vec::new(),
        period_returns: Vec::new(),
        cumulative: Vec::new(),
        rolling_max_drawdown: Vec::new(),
        annual_returns: Vec::new(),
        ic: Vec::new(),
        selections: Vec::new(),
        skipped: Vec::new(),
        summary: PortfolioSummary {
            periods_traded: 0,
            final_return: 0.0,
            max_drawdown: 0.0,
            ic_mean: None,
            ic_std: None,
        },
    };
    for w in windows {
        match w? {
            Window::Traded { period, ret, ic, selection } => {
                res.periods.push(period);
                res.period_returns.push(ret);
                res.ic.push(ic);
                res.selections.push(selection);
            }
            Window::Skipped(s) => {
                log::warn!("skipping period {}: {}", s.period, s.reason);
                res.skipped.push(s);
            }
        }
    }
    res.cumulative = accumulated_return(&res.period_returns)?;
    let mut wealth = vec![1.0];
    wealth.extend(res.cumulative.iter().map(|c| 1.0 + c));
    res.rolling_max_drawdown = rolling_max_drawdown(&wealth, options.mdd_window)?[1..].to_vec();
    res.annual_returns = annual_returns(&res.period_returns, options.periods_per_year)?;
    let ic = res.ic_summary();
    res.summary = PortfolioSummary {
        periods_traded: res.periods.len(),
        final_return: res.cumulative.last().copied().unwrap_or(0.0),
        max_drawdown: max_drawdown(&wealth)?,
        ic_mean: ic.map(|s| s.mean),
        ic_std: ic.map(|s| s.std),
    };
    Ok(res)
}

/// k-NN top-N backtest under `source`'s per-window metric.
pub fn rolling_backtest<S: MetricSource>(
    data: &PanelDataset,
    source: S,
    k: usize,
    top_n: usize,
) -> Result<PortfolioResult> {
    let options = BacktestOptions { top_n, ..BacktestOptions::default() };
    backtest(Execution::default(), data, &KnnPredictor::new(source, k), &options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn period(p: i64, ids: &[i64], x: &[f64], r: &[f64]) -> PanelPeriod {
        PanelPeriod {
            period: p,
            asset_ids: ids.to_vec(),
            features: DMatrix::from_row_slice(ids.len(), 1, x),
            next_returns: r.to_vec(),
        }
    }

    fn fixture() -> PanelDataset {
        PanelDataset::new(vec![
            period(0, &[10, 11, 12], &[0.0, 1.0, 5.0], &[0.05, -0.02, 0.10]),
            period(1, &[10, 11, 12], &[4.0, 0.2, 1.1], &[0.01, 0.03, -0.04]),
            period(2, &[10, 11, 12], &[0.9, 4.6, 0.1], &[0.02, 0.06, 0.00]),
        ])
        .unwrap()
    }

    #[test]
    fn two_window_hand_fixture() {
        // k = 1 under the identity metric:
        // period 1 queries (4.0, 0.2, 1.1) → nearest period-0 rows (5.0, 0.0, 1.0)
        //   → predictions (0.10, 0.05, −0.02) → pick asset 10, return 0.01
        // period 2 queries (0.9, 4.6, 0.1) → nearest period-1 rows (1.1, 4.0, 0.2)
        //   → predictions (−0.04, 0.01, 0.03) → pick asset 12, return 0.00
        let r = rolling_backtest(&fixture(), EuclideanSource, 1, 1).unwrap();
        assert_eq!(r.periods, vec![1, 2]);
        assert_eq!(r.selections, vec![vec![10], vec![12]]);
        assert_eq!(r.period_returns, vec![0.01, 0.0]);
        assert!((r.cumulative[1] - 0.01).abs() <= 1e-12);
        // ranks (3, 2, 1) against (2, 3, 1)
        assert!((r.ic[0].unwrap() - 0.5).abs() <= 1e-12);
        assert_eq!(r.summary.max_drawdown, 0.0);

        let r2 = rolling_backtest(&fixture(), EuclideanSource, 1, 2).unwrap();
        // top 2: period 1 assets 10, 11 → (0.01 + 0.03)/2; period 2 assets 12, 11 → 0.03
        assert_eq!(r2.selections, vec![vec![10, 11], vec![12, 11]]);
        assert!((r2.period_returns[0] - 0.02).abs() <= 1e-12);
        assert!((r2.period_returns[1] - 0.03).abs() <= 1e-12);
        assert!((r2.cumulative[1] - (1.02 * 1.03 - 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn oracle_and_constant_predictors() {
        let data = fixture();
        let opts = BacktestOptions { top_n: 1, ..BacktestOptions::default() };
        let o = backtest(Execution::Sequential, &data, &OraclePredictor, &opts).unwrap();
        assert_eq!(o.period_returns, vec![0.03, 0.06]);
        let c = backtest(Execution::Sequential, &data, &ConstantPredictor(0.0), &opts).unwrap();
        assert_eq!(c.selections, vec![vec![10], vec![10]]);
        assert_eq!(c.ic, vec![None, None]);
        assert!(c.summary.ic_mean.is_none());
        assert!(o.summary.final_return >= c.summary.final_return);
    }

    #[test]
    fn short_windows_are_skipped() {
        let data = PanelDataset::new(vec![
            period(0, &[1, 2], &[0.0, 1.0], &[0.1, 0.2]),
            period(1, &[1, 2, 3], &[0.0, 1.0, 2.0], &[0.1, 0.2, 0.3]),
            period(2, &[1, 2, 3], &[0.0, 1.0, 2.0], &[0.1, 0.2, 0.3]),
        ])
        .unwrap();
        let r = rolling_backtest(&data, EuclideanSource, 3, 1).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].period, 1);
        assert_eq!(r.periods, vec![2]);
        assert_eq!(r.cumulative.len(), 1);
    }

    #[test]
    fn argument_errors() {
        let one = PanelDataset::new(vec![period(0, &[1], &[0.0], &[0.1])]).unwrap();
        assert!(rolling_backtest(&one, EuclideanSource, 1, 1).is_err());
        assert!(rolling_backtest(&fixture(), EuclideanSource, 1, 4).is_err());
        assert!(rolling_backtest(&fixture(), EuclideanSource, 1, 0).is_err());
    }

    #[test]
    fn median_labels_split_evenly() {
        assert_eq!(median_labels(&[0.3, 0.1, 0.2, 0.4]), vec![1, 0, 0, 1]);
        assert_eq!(median_labels(&[0.3, 0.1, 0.2]), vec![1, 0, 0]);
    }

    #[test]
    fn execution_modes_agree() {
        let data = crate::data::generate_panel(&crate::data::PanelSpec {
            periods: 5,
            assets: 30,
            dim: 4,
            informative_dims: 2,
            noise_scale: 2.0,
            seed: 5,
        })
        .unwrap();
        let p = KnnPredictor::new(MahalanobisSource, 5);
        let opts = BacktestOptions { top_n: 5, ..BacktestOptions::default() };
        let a = backtest(Execution::Sequential, &data, &p, &opts).unwrap();
        let b = backtest(Execution::Parallel, &data, &p, &opts).unwrap();
        assert_eq!(a, b);
    }
}
