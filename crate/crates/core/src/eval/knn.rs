use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::par::{map_indexed, Execution};
use crate::spd::{quad_form, spd_inverse, SpdMatrix};

const COVARIANCE_RIDGE: f64 = 1e-6;

/// `(Cov + 1e-6·I)⁻¹` with the unbiased sample covariance.
pub fn mahalanobis_metric(features: &DMatrix<f64>) -> Result<SpdMatrix> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("covariance needs at least 2 samples, got {n}")));
    }
    if n <= d {
        log::warn!("{n} samples for {d} dimensions: covariance is rank deficient, relying on the ridge");
    }
    let mean = features.row_mean();
    let mut centred = features.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64 + DMatrix::identity(d, d) * COVARIANCE_RIDGE;
    spd_inverse(&SpdMatrix::new(cov)?)
}

fn check_training(w: &SpdMatrix, train: &DMatrix<f64>, n_targets: usize, k: usize) -> Result<()> {
    let n = train.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    check_dim("training targets", n, n_targets)?;
    check_dim("training features", w.dim(), train.ncols())?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={n}")));
    }
    Ok(())
}

/// Indices of the `k` training rows nearest to `query` under `W`, nearest
/// first; equal distances go to the lower row index.
pub fn nearest_neighbors(w: &SpdMatrix, train: &DMatrix<f64>, query: &[f64], k: usize) -> Result<Vec<usize>> {
    check_training(w, train, train.nrows(), k)?;
    check_dim("query", w.dim(), query.len())?;
    let d = train.ncols();
    let mut diff = vec![0.0; d];
    let mut dist: Vec<(f64, usize)> = (0..train.nrows())
        .map(|i| {
            for j in 0..d {
                diff[j] = train[(i, j)] - query[j];
            }
            (quad_form(w.as_matrix(), &diff), i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, cmp);
        dist.truncate(k);
    }
    dist.sort_unstable_by(cmp);
    Ok(dist.into_iter().map(|(_, i)| i).collect())
}

/// Unweighted mean target of the `k` nearest training rows.
pub fn knn_predict(w: &SpdMatrix, train: &DMatrix<f64>, targets: &[f64], query: &[f64], k: usize) -> Result<f64> {
    check_training(w, train, targets.len(), k)?;
    let idx = nearest_neighbors(w, train, query, k)?;
    Ok(idx.iter().map(|&i| targets[i]).sum::<f64>() / k as f64)
}

/// [`knn_predict`] for every row of `queries`.
pub fn knn_predict_batch(
    exec: Execution,
    w: &SpdMatrix,
    train: &DMatrix<f64>,
    targets: &[f64],
    queries: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<f64>> {
    check_training(w, train, targets.len(), k)?;
    check_dim("query features", w.dim(), queries.ncols())?;
    map_indexed(exec, queries.nrows(), |q| {
        let row: Vec<f64> = queries.row(q).iter().copied().collect();
        knn_predict(w, train, targets, &row, k)
    })
    .into_iter()
    .collect()
}

/// Majority label among the `k` nearest rows. A tie goes to the tied label
/// whose closest member is nearest.
pub fn knn_classify(w: &SpdMatrix, train: &DMatrix<f64>, labels: &[i64], query: &[f64], k: usize) -> Result<i64> {
    check_training(w, train, labels.len(), k)?;
    let idx = nearest_neighbors(w, train, query, k)?;
    // (label, votes, rank of first occurrence)
    let mut tally: Vec<(i64, usize, usize)> = Vec::new();
    for (rank, &i) in idx.iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == labels[i]) {
            Some(t) => t.1 += 1,
            None => tally.push((labels[i], 1, rank)),
        }
    }
    let best = tally.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2))).expect("k ≥ 1");
    Ok(best.0)
}

/// Fraction of `test` rows whose k-NN label matches `test_labels`.
pub fn knn_accuracy(
    exec: Execution,
    w: &SpdMatrix,
    train: &DMatrix<f64>,
    train_labels: &[i64],
    test: &DMatrix<f64>,
    test_labels: &[i64],
    k: usize,
) -> Result<f64> {
    check_training(w, train, train_labels.len(), k)?;
    check_dim("test labels", test.nrows(), test_labels.len())?;
    check_dim("test features", w.dim(), test.ncols())?;
    if test.nrows() == 0 {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let hits = map_indexed(exec, test.nrows(), |q| {
        let row: Vec<f64> = test.row(q).iter().copied().collect();
        knn_classify(w, train, train_labels, &row, k).map(|l| l == test_labels[q])
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / test.nrows() as f64)
}
