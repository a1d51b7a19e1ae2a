//! CSV series for external plotting, derived only from a run's JSON outputs.

use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rpdml::eval::PortfolioResult;

use crate::commands::EvalMetrics;
use crate::{open, read_json, write_file, CliError, CliResult};

#[derive(Deserialize)]
struct Header {
    command: String,
}

/// A trace line from `train` or `bench-convergence`; the bench-only
/// columns are empty for training runs.
#[derive(Debug, Serialize, Deserialize)]
struct ConvergenceRow {
    t: usize,
    eta: f64,
    f: f64,
    h_violation: f64,
    dual_norm: f64,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    best_gap: Option<f64>,
    #[serde(default)]
    bound: Option<f64>,
    #[serde(default)]
    bound_ok: Option<bool>,
}

#[derive(Serialize)]
struct PortfolioRow<'a> {
    source: &'a str,
    period: i64,
    period_return: f64,
    cumulative: f64,
    rolling_max_drawdown: f64,
    ic: Option<f64>,
}

#[derive(Serialize)]
struct AnnualRow<'a> {
    source: &'a str,
    year: usize,
    annual_return: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(rpdml::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("csv buffer: {e}")))
}

/// Write the plot CSVs of the run in `dir` and return their paths.
pub fn export(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let metrics = dir.join("metrics.json");
    if !metrics.is_file() {
        return Err(CliError::Usage(format!("{} is not a run directory (no metrics.json)", dir.display())));
    }
    let header: Header = read_json(&metrics)?;
    match header.command.as_str() {
        "train" | "bench-convergence" => convergence(dir).map(|p| vec![p]),
        "eval" => {
            let m: EvalMetrics = read_json(&metrics)?;
            Ok(vec![write_file(dir, "accuracy_ic.csv", to_csv(&m.results)?)?])
        }
        "backtest" => portfolio(dir),
        other => Err(CliError::Usage(format!("unknown run type `{other}` in {}", metrics.display()))),
    }
}

fn convergence(dir: &Path) -> CliResult<PathBuf> {
    let path = dir.join("trace.jsonl");
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(open(&path)?).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ConvergenceRow =
            serde_json::from_str(&line).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    write_file(dir, "convergence.csv", to_csv(&rows)?)
}

fn portfolio(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("portfolio_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    let results = files.iter().map(|p| read_json::<PortfolioResult>(p)).collect::<CliResult<Vec<_>>>()?;

    let series = results.iter().flat_map(|r| {
        (0..r.periods.len()).map(move |i| PortfolioRow {
            source: &r.predictor,
            period: r.periods[i],
            period_return: r.period_returns[i],
            cumulative: r.cumulative[i],
            rolling_max_drawdown: r.rolling_max_drawdown[i],
            ic: r.ic[i],
        })
    });
    let annual = results.iter().flat_map(|r| {
        r.annual_returns.iter().enumerate().map(move |(y, &v)| AnnualRow {
            source: &r.predictor,
            year: y + 1,
            annual_return: v,
        })
    });
    Ok(vec![
        write_file(dir, "portfolio_series.csv", to_csv(series)?)?,
        write_file(dir, "annual_returns.csv", to_csv(annual)?)?,
    ])
}
