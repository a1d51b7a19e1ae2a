use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (information coefficient).
pub fn spearman_ic(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_dim("actual values", pred.len(), actual.len())?;
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 observations".into()));
    }
    if pred.iter().chain(actual).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in correlation input".into()));
    }
    pearson(&average_ranks(pred), &average_ranks(actual))
        .ok_or_else(|| Error::UndefinedCorrelation("one input is constant".into()))
}

/// Mean and sample standard deviation of per-period ICs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl IcSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(IcSummary { mean, std, count: n })
    }
}

impl std::fmt::Display for IcSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// `c_k = Π_{i≤k}(1 + r_i) − 1`.
pub fn accumulated_return(period_returns: &[f64]) -> Result<Vec<f64>> {
    let mut wealth = 1.0;
    let mut out = Vec::with_capacity(period_returns.len());
    for &r in period_returns {
        if !(r > -1.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!("period return {r} is not above −1")));
        }
        wealth *= 1.0 + r;
        out.push(wealth - 1.0);
    }
    Ok(out)
}

/// Largest relative decline from a running peak.
pub fn max_drawdown(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty value series".into()));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("values must be positive".into()));
    }
    let mut peak = values[0];
    let mut worst: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    Ok(worst)
}

/// `out[t]` is the drawdown of `values[t − window ..= t]` (clipped at 0),
/// i.e. over the last `window` periods of a value series.
pub fn rolling_max_drawdown(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument("rolling window must be positive".into()));
    }
    (0..values.len()).map(|t| max_drawdown(&values[t.saturating_sub(window)..=t])).collect()
}

/// Compounded return of consecutive chunks of `periods_per_year` periods;
/// a trailing partial chunk is included.
pub fn annual_returns(period_returns: &[f64], periods_per_year: usize) -> Result<Vec<f64>> {
    if periods_per_year == 0 {
        return Err(Error::InvalidArgument("periods_per_year must be positive".into()));
    }
    period_returns
        .chunks(periods_per_year)
        .map(|c| accumulated_return(c).map(|a| *a.last().expect("chunks are nonempty")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_ic(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman_ic(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // 1 − 6Σd²/(n(n²−1)) with Σd² = 2
        assert!((spearman_ic(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(spearman_ic(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(spearman_ic(&[1.0], &[1.0]).is_err());
        assert!(spearman_ic(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn ic_summary_uses_sample_std() {
        let s = IcSummary::of(&[0.1, 0.3]).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-15);
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.to_string(), "0.200 ± 0.141");
        assert!(IcSummary::of(&[]).is_none());
    }

    #[test]
    fn accumulated_examples() {
        let a = accumulated_return(&[0.1, 0.1]).unwrap();
        assert!((a[0] - 0.1).abs() <= 1e-12);
        assert!((a[1] - 0.21).abs() <= 1e-12);
        assert_eq!(accumulated_return(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(accumulated_return(&[-0.3]).unwrap(), vec![-0.30000000000000004]);
        assert!(accumulated_return(&[0.1, -1.0]).is_err());
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.5]).unwrap(), 0.0);
        assert!((max_drawdown(&[1.0, 1.2, 0.9, 1.1]).unwrap() - 0.25).abs() <= 1e-12);
        assert_eq!(max_drawdown(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(max_drawdown(&[]).is_err());
        assert!(max_drawdown(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn rolling_drawdown_forgets_old_peaks() {
        let v = [1.0, 2.0, 1.0, 1.0, 1.0, 1.0];
        let r = rolling_max_drawdown(&v, 2).unwrap();
        assert_eq!(r, vec![0.0, 0.0, 0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn annual_chunks() {
        let a = annual_returns(&[0.1, 0.1, 0.0, 0.0, 0.5], 4).unwrap();
        assert_eq!(a.len(), 2);
        assert!((a[0] - 0.21).abs() < 1e-15);
        assert_eq!(a[1], 0.5);
    }

    proptest! {
        #[test]
        fn ic_invariant_under_monotone_maps(v in prop::collection::btree_set(-1000i32..1000, 3..40), seed in 0u64..1000) {
            let pred: Vec<f64> = v.iter().map(|&x| x as f64 / 7.0).collect();
            let actual: Vec<f64> = (0..pred.len()).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f64).collect();
            prop_assume!(actual.iter().any(|&a| a != actual[0]));
            let base = spearman_ic(&pred, &actual).unwrap();
            let lin: Vec<f64> = pred.iter().map(|x| 2.0 * x + 1.0).collect();
            let cube: Vec<f64> = pred.iter().map(|x| x * x * x).collect();
            prop_assert_eq!(spearman_ic(&lin, &actual).unwrap(), base);
            prop_assert_eq!(spearman_ic(&cube, &actual).unwrap(), base);
        }

        #[test]
        fn accumulated_round_trips(r in prop::collection::vec(-0.3f64..0.5, 1..20)) {
            let c = accumulated_return(&r).unwrap();
            let mut prev = 1.0;
            for (k, ck) in c.iter().enumerate() {
                let back = (1.0 + ck) / prev - 1.0;
                prop_assert!((back - r[k]).abs() <= 1e-12);
                prev = 1.0 + ck;
            }
            let mut wealth = vec![1.0];
            wealth.extend(c.iter().map(|x| 1.0 + x));
            let dd = max_drawdown(&wealth).unwrap();
            prop_assert!((0.0..1.0).contains(&dd));
        }
    }
}
