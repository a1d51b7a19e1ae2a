//! Evaluation: k-NN under a metric, ranking metrics, and the rolling backtest.

mod backtest;
mod knn;
mod metrics;
mod panel;

pub use backtest::{
    backtest, median_labels, rolling_backtest, select_top, BacktestOptions, ConstantPredictor, EuclideanSource,
    KnnPredictor, MahalanobisSource, MetricSource, OraclePredictor, PortfolioResult, PortfolioSummary, ReturnPredictor,
    RpdmlSource, SkippedPeriod,
};
pub use knn::{knn_accuracy, knn_classify, knn_predict, knn_predict_batch, mahalanobis_metric, nearest_neighbors};
pub use metrics::{
    accumulated_return, annual_returns, average_ranks, max_drawdown, rolling_max_drawdown, spearman_ic, IcSummary,
};
pub use panel::{PanelDataset, PanelPeriod};
