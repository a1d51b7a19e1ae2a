use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Asset ids, row-major features and returns of one period while reading.
type PeriodRows = (Vec<i64>, Vec<f64>, Vec<f64>);

/// Cross-section of assets at one period.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelPeriod {
    pub period: i64,
    pub asset_ids: Vec<i64>,
    /// assets × dims.
    pub features: DMatrix<f64>,
    /// Realized return over the following period.
    pub next_returns: Vec<f64>,
}

impl PanelPeriod {
    pub fn len(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asset_ids.is_empty()
    }
}

/// Periods in strictly increasing order with a common feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    periods: Vec<PanelPeriod>,
}

impl PanelDataset {
    pub fn new(periods: Vec<PanelPeriod>) -> Result<Self> {
        let dim = periods.first().map(|p| p.features.ncols());
        for (i, p) in periods.iter().enumerate() {
            check_dim("feature rows", p.asset_ids.len(), p.features.nrows())?;
            check_dim("returns", p.asset_ids.len(), p.next_returns.len())?;
            check_dim("feature columns", dim.unwrap_or(0), p.features.ncols())?;
            if i > 0 && periods[i - 1].period >= p.period {
                return Err(Error::InvalidArgument(format!(
                    "periods must be strictly increasing, got {} then {}",
                    periods[i - 1].period,
                    p.period
                )));
            }
            let mut ids = p.asset_ids.clone();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("duplicate asset id in period {}", p.period)));
            }
        }
        Ok(PanelDataset { periods })
    }

    pub fn periods(&self) -> &[PanelPeriod] {
        &self.periods
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.periods.first().map_or(0, |p| p.features.ncols())
    }

    /// CSV with header `period,asset_id,f_0,…,f_{d−1},next_return`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header = vec!["period".to_string(), "asset_id".to_string()];
        header.extend((0..d).map(|j| format!("f_{j}")));
        header.push("next_return".into());
        w.write_record(&header)?;
        for p in &self.periods {
            for a in 0..p.len() {
                let mut rec = vec![p.period.to_string(), p.asset_ids[a].to_string()];
                rec.extend((0..d).map(|j| p.features[(a, j)].to_string()));
                rec.push(p.next_returns[a].to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rows are grouped by period; within a period the file order is kept.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 4 || &header[0] != "period" || &header[1] != "asset_id" || &header[cols - 1] != "next_return" {
            return Err(Error::Parse("expected header period,asset_id,f_0,…,next_return".into()));
        }
        let d = cols - 3;
        let mut groups: BTreeMap<i64, PeriodRows> = BTreeMap::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |k: usize, e: &dyn std::fmt::Display| Error::Parse(format!("row {}: column {k}: {e}", line + 1));
            let period: i64 = rec[0].trim().parse().map_err(|e| bad(0, &e))?;
            let asset: i64 = rec[1].trim().parse().map_err(|e| bad(1, &e))?;
            let g = groups.entry(period).or_default();
            g.0.push(asset);
            for k in 2..2 + d {
                g.1.push(rec[k].trim().parse().map_err(|e| bad(k, &e))?);
            }
            g.2.push(rec[cols - 1].trim().parse().map_err(|e| bad(cols - 1, &e))?);
        }
        let periods = groups
            .into_iter()
            .map(|(period, (asset_ids, flat, next_returns))| PanelPeriod {
                period,
                features: DMatrix::from_row_slice(asset_ids.len(), d, &flat),
                asset_ids,
                next_returns,
            })
            .collect();
        PanelDataset::new(periods)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn period(p: i64, ids: &[i64], x: &[f64], r: &[f64]) -> PanelPeriod {
        PanelPeriod {
            period: p,
            asset_ids: ids.to_vec(),
            features: DMatrix::from_row_slice(ids.len(), x.len() / ids.len(), x),
            next_returns: r.to_vec(),
        }
    }

    #[test]
    fn validates_structure() {
        let a = period(1, &[1, 2], &[0.0, 1.0], &[0.1, 0.2]);
        let b = period(2, &[1, 2], &[0.5, 1.5], &[0.0, 0.3]);
        assert!(PanelDataset::new(vec![a.clone(), b.clone()]).is_ok());
        assert!(PanelDataset::new(vec![b.clone(), a.clone()]).is_err());
        assert!(PanelDataset::new(vec![period(1, &[1, 1], &[0.0, 1.0], &[0.1, 0.2])]).is_err());
        let wide = period(3, &[1], &[0.0, 1.0], &[0.1]);
        assert!(PanelDataset::new(vec![a, wide]).is_err());
    }

    #[test]
    fn csv_round_trip_and_grouping() {
        let text = "period,asset_id,f_0,f_1,next_return\n\
                    2,5,1.0,2.0,0.1\n\
                    1,7,0.5,0.25,-0.05\n\
                    2,3,3.0,4.0,0.2\n";
        let ds = PanelDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.periods()[0].period, 1);
        assert_eq!(ds.periods()[1].asset_ids, vec![5, 3]);
        assert_eq!(ds.periods()[1].features[(1, 0)], 3.0);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(PanelDataset::read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn csv_errors() {
        assert!(PanelDataset::read_csv("a,b,c,d\n".as_bytes()).is_err());
        assert!(PanelDataset::read_csv("period,asset_id,f_0,next_return\n1,x,0,0\n".as_bytes()).is_err());
    }
}
