//! Feature normalization and seeded synthetic datasets.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::eval::{PanelDataset, PanelPeriod};
use crate::rng::{derive_seed, stream_rng, Stream};

const DEGENERATE_STD: f64 = 1e-12;

/// Per-column statistics fitted on a training window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Columns that are only centered because their spread is below `1e-12`.
    pub fn degenerate_columns(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.std[j] < DEGENERATE_STD).collect()
    }

    /// Apply the fitted transform to new rows.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("feature columns", self.dim(), x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let c = x[(i, j)] - self.mean[j];
            if self.std[j] < DEGENERATE_STD {
                c
            } else {
                c / self.std[j]
            }
        }))
    }
}

/// Standardize each column to zero mean and unit population variance.
pub fn normalize_features(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, FeatureStats)> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("cannot normalize an empty matrix".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("normalization needs at least 2 samples".into()));
    }
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for j in 0..d {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean.push(m);
        std.push(var.sqrt());
    }
    let stats = FeatureStats { mean, std };
    let degenerate = stats.degenerate_columns();
    if !degenerate.is_empty() {
        log::warn!("columns {degenerate:?} have near-zero spread and are only centered");
    }
    Ok((stats.apply(x)?, stats))
}

/// Labeled samples with a regression target.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<i64>,
    pub targets: Vec<f64>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Split into the first `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (LabeledDataset, LabeledDataset) {
        let n = n.min(self.len());
        let part = |rows: std::ops::Range<usize>| LabeledDataset {
            features: self.features.rows(rows.start, rows.len()).into_owned(),
            labels: self.labels[rows.clone()].to_vec(),
            targets: self.targets[rows].to_vec(),
        };
        (part(0..n), part(n..self.len()))
    }

    /// CSV with header `label,f_0,…,f_{d−1},target`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header = vec!["label".to_string()];
        header.extend((0..d).map(|j| format!("f_{j}")));
        header.push("target".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend((0..d).map(|j| self.features[(i, j)].to_string()));
            rec.push(self.targets[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 3 || &header[0] != "label" || &header[cols - 1] != "target" {
            return Err(Error::Parse("expected header label,f_0,…,target".into()));
        }
        let d = cols - 2;
        let mut labels = Vec::new();
        let mut targets = Vec::new();
        let mut flat = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: column {k}: {e}", line + 1)))
            };
            labels
                .push(rec[0].trim().parse::<i64>().map_err(|e| Error::Parse(format!("row {}: label: {e}", line + 1)))?);
            for k in 1..=d {
                flat.push(field(k)?);
            }
            targets.push(field(cols - 1)?);
        }
        let features = DMatrix::from_row_slice(labels.len(), d, &flat);
        Ok(LabeledDataset { features, labels, targets })
    }
}

/// Gaussian class clusters that differ only in the first `informative_dims`
/// coordinates; the rest are noise with `noise_scale` times the variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples: usize,
    pub dim: usize,
    pub informative_dims: usize,
    /// Variance of the distractor coordinates; the informative ones have
    /// unit within-class variance.
    pub noise_scale: f64,
    /// Smallest distance between class centres.
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    pub seed: u64,
}

fn default_class_sep() -> f64 {
    2.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.dim == 0 || self.informative_dims == 0 || self.informative_dims > self.dim {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ informative_dims ({}) ≤ dim ({})",
                self.informative_dims, self.dim
            )));
        }
        if !(self.noise_scale >= 0.0) || !(self.class_sep > 0.0) {
            return Err(Error::InvalidArgument("noise_scale must be ≥ 0 and class_sep > 0".into()));
        }
        Ok(())
    }
}

/// Class centres and target weights drawn from the model stream.
struct LabeledModel {
    centres: Vec<Vec<f64>>,
    beta: Vec<f64>,
}

fn labeled_model(spec: &SyntheticSpec) -> LabeledModel {
    let k = spec.informative_dims;
    let mut rng = stream_rng(spec.seed, Stream::SyntheticModel);
    let mut centres: Vec<Vec<f64>> =
        (0..spec.classes).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..centres.len() {
        for b in a + 1..centres.len() {
            let d: f64 = centres[a].iter().zip(&centres[b]).map(|(x, y)| (x - y) * (x - y)).sum();
            min_dist = min_dist.min(d.sqrt());
        }
    }
    let s = if min_dist > 0.0 { spec.class_sep / min_dist } else { 1.0 };
    for c in &mut centres {
        c.iter_mut().for_each(|v| *v *= s);
    }
    let beta = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    LabeledModel { centres, beta }
}

/// `spec.samples` rows. Labels are drawn uniformly; targets are `β·x_inf`
/// plus unit noise.
pub fn generate_labeled(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    Ok(generate_labeled_split(spec, 0)?.0)
}

/// Training set of `spec.samples` rows and a held-out set of `test_samples`
/// rows from the same model. The training part equals [`generate_labeled`].
pub fn generate_labeled_split(spec: &SyntheticSpec, test_samples: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let model = labeled_model(spec);
    let (d, k) = (spec.dim, spec.informative_dims);
    let total = spec.samples + test_samples;
    let noise_sd = spec.noise_scale.sqrt();
    let mut rng = stream_rng(spec.seed, Stream::SyntheticSamples);
    let mut features = DMatrix::zeros(total, d);
    let mut labels = Vec::with_capacity(total);
    let mut targets = Vec::with_capacity(total);
    for i in 0..total {
        let c = rng.random_range(0..spec.classes);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            features[(i, j)] = if j < k { model.centres[c][j] + z } else { noise_sd * z };
        }
        let noise: f64 = rng.sample(StandardNormal);
        targets.push((0..k).map(|j| model.beta[j] * features[(i, j)]).sum::<f64>() + noise);
        labels.push(c as i64);
    }
    let all = LabeledDataset { features, labels, targets };
    Ok(all.split_at(spec.samples))
}

/// Panel of assets whose next-period return is linear in the informative
/// coordinates; the remaining coordinates are noise with `noise_scale` times
/// the variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub periods: usize,
    pub assets: usize,
    pub dim: usize,
    pub informative_dims: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl PanelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.periods < 2 || self.assets < 2 {
            return Err(Error::InvalidArgument("need at least 2 periods and 2 assets".into()));
        }
        if self.dim == 0 || self.informative_dims == 0 || self.informative_dims > self.dim {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ informative_dims ({}) ≤ dim ({})",
                self.informative_dims, self.dim
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidArgument("noise_scale must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `r = 0.02 + 0.03·(β·x_inf)/‖β‖ + 0.02·ε` per asset and period, with a
/// fixed `β` across periods. Asset ids are `0..assets`.
pub fn generate_panel(spec: &PanelSpec) -> Result<PanelDataset> {
    spec.validate()?;
    let (d, k) = (spec.dim, spec.informative_dims);
    let mut model_rng = stream_rng(spec.seed, Stream::SyntheticModel);
    let beta: Vec<f64> = (0..k).map(|_| model_rng.sample(StandardNormal)).collect();
    let beta_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let noise_sd = spec.noise_scale.sqrt();
    let mut periods = Vec::with_capacity(spec.periods);
    for p in 0..spec.periods {
        // one substream per period, so the panel can be extended without
        // changing earlier periods
        let mut rng = stream_rng(derive_seed(spec.seed, p as u64), Stream::Panel);
        let mut features = DMatrix::zeros(spec.assets, d);
        let mut returns = Vec::with_capacity(spec.assets);
        for a in 0..spec.assets {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                features[(a, j)] = if j < k { z } else { noise_sd * z };
            }
            let signal: f64 = (0..k).map(|j| beta[j] * features[(a, j)]).sum::<f64>() / beta_norm;
            let eps: f64 = rng.sample(StandardNormal);
            returns.push(0.02 + 0.03 * signal + 0.02 * eps);
        }
        periods.push(PanelPeriod {
            period: p as i64,
            asset_ids: (0..spec.assets as i64).collect(),
            features,
            next_returns: returns,
        });
    }
    PanelDataset::new(periods)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 3.0, 5.0]);
        let (z, stats) = normalize_features(&x).unwrap();
        assert_eq!(z.column(0).as_slice(), &[-1.0, 1.0]);
        assert_eq!(stats.mean, vec![2.0, 5.0]);
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(z.column(1).as_slice(), &[0.0, 0.0]);
        assert_eq!(stats.degenerate_columns(), vec![1]);
        assert!(normalize_features(&DMatrix::zeros(0, 3)).is_err());
        assert!(normalize_features(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn normalize_is_idempotent_on_standardized_data() {
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, 1.0, -1.0, 1.0]);
        let (z, _) = normalize_features(&x).unwrap();
        assert!((z - x).abs().max() < 1e-9);
    }

    #[test]
    fn test_window_uses_training_stats() {
        let spec = SyntheticSpec {
            classes: 2,
            samples: 50,
            dim: 4,
            informative_dims: 2,
            noise_scale: 2.0,
            class_sep: 3.0,
            seed: 1,
        };
        let (train, test) = generate_labeled_split(&spec, 50).unwrap();
        let (_, stats) = normalize_features(&train.features).unwrap();
        let z = stats.apply(&test.features).unwrap();
        let means: Vec<f64> = (0..4).map(|j| z.column(j).mean()).collect();
        assert!(means.iter().all(|m| m.abs() > 1e-12));
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = SyntheticSpec {
            classes: 3,
            samples: 40,
            dim: 6,
            informative_dims: 2,
            noise_scale: 3.0,
            class_sep: 4.0,
            seed: 7,
        };
        assert_eq!(generate_labeled(&spec).unwrap(), generate_labeled(&spec).unwrap());
        let (train, _) = generate_labeled_split(&spec, 25).unwrap();
        assert_eq!(train, generate_labeled(&spec).unwrap());
        let other = generate_labeled(&SyntheticSpec { seed: 8, ..spec.clone() }).unwrap();
        assert_ne!(other, generate_labeled(&spec).unwrap());

        let ps = PanelSpec { periods: 3, assets: 10, dim: 5, informative_dims: 2, noise_scale: 2.0, seed: 3 };
        assert_eq!(generate_panel(&ps).unwrap(), generate_panel(&ps).unwrap());
        let longer = generate_panel(&PanelSpec { periods: 4, ..ps.clone() }).unwrap();
        assert_eq!(longer.periods()[..3], generate_panel(&ps).unwrap().periods()[..]);
    }

    #[test]
    fn centres_have_requested_separation() {
        let spec = SyntheticSpec {
            classes: 4,
            samples: 10,
            dim: 3,
            informative_dims: 3,
            noise_scale: 1.0,
            class_sep: 5.0,
            seed: 2,
        };
        let m = labeled_model(&spec);
        let mut min = f64::INFINITY;
        for a in 0..4 {
            for b in a + 1..4 {
                let d: f64 = m.centres[a].iter().zip(&m.centres[b]).map(|(x, y)| (x - y).powi(2)).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!((min - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let ok = SyntheticSpec {
            classes: 2,
            samples: 10,
            dim: 3,
            informative_dims: 3,
            noise_scale: 0.0,
            class_sep: 1.0,
            seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(SyntheticSpec { informative_dims: 4, ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { classes: 1, ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { noise_scale: -1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let spec = SyntheticSpec {
            classes: 2,
            samples: 12,
            dim: 3,
            informative_dims: 1,
            noise_scale: 1.5,
            class_sep: 2.0,
            seed: 4,
        };
        let ds = generate_labeled(&spec).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,f_0,f_1,f_2,target\n"));
        assert_eq!(LabeledDataset::read_csv(buf.as_slice()).unwrap(), ds);
        assert!(LabeledDataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(LabeledDataset::read_csv("label,f_0,target\nx,1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn normalized_columns_are_standard(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30)) {
            let n = rows.len();
            let x = DMatrix::from_fn(n, 3, |i, j| rows[i][j]);
            let (z, stats) = normalize_features(&x).unwrap();
            for j in 0..3 {
                let m = z.column(j).mean();
                prop_assert!(m.abs() <= 1e-12 * (1.0 + stats.mean[j].abs() / stats.std[j].max(1e-300)));
                if stats.std[j] >= 1e-6 {
                    let v = z.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                    prop_assert!((v.sqrt() - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}
