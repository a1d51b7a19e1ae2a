use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::spd::{quad_form, SpdMatrix};

/// Distance bounds: similar pairs should satisfy `d ≤ u`, dissimilar `d ≥ l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u: f64,
    pub l: f64,
}

impl Bounds {
    pub fn new(u: f64, l: f64) -> Result<Self> {
        if !(u > 0.0) || !(l > 0.0) || !u.is_finite() || !l.is_finite() {
            return Err(Error::Bounds(format!("bounds must be positive, got u = {u}, l = {l}")));
        }
        if !(u < l) {
            return Err(Error::Bounds(format!(
                "u = {u} is not below l = {l}; the distance distribution is degenerate, use more or more varied data"
            )));
        }
        Ok(Bounds { u, l })
    }
}

/// Difference vectors of similar (`X₊`) and dissimilar (`X₋`) pairs.
///
/// Rows are indexed jointly: `0..n_similar` are similar pairs, the rest
/// dissimilar. Constraint, dual and slack vectors use the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairConstraints {
    dim: usize,
    similar: Vec<f64>,
    dissimilar: Vec<f64>,
    similar_pairs: Vec<(usize, usize)>,
    dissimilar_pairs: Vec<(usize, usize)>,
    bounds: Option<Bounds>,
}

impl PairConstraints {
    /// Build directly from difference rows (no sample indices).
    pub fn from_diffs(dim: usize, similar: &[Vec<f64>], dissimilar: &[Vec<f64>]) -> Result<Self> {
        if similar.is_empty() || dissimilar.is_empty() {
            return Err(Error::ConstraintConstruction("need at least one similar and one dissimilar pair".into()));
        }
        let flatten = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(rows.len() * dim);
            for r in rows {
                check_dim("pair difference", dim, r.len())?;
                out.extend_from_slice(r);
            }
            Ok(out)
        };
        Ok(PairConstraints {
            dim,
            similar: flatten(similar)?,
            dissimilar: flatten(dissimilar)?,
            similar_pairs: Vec::new(),
            dissimilar_pairs: Vec::new(),
            bounds: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_similar(&self) -> usize {
        self.similar.len() / self.dim.max(1)
    }

    pub fn n_dissimilar(&self) -> usize {
        self.dissimilar.len() / self.dim.max(1)
    }

    /// Total constraint count `|C⁺| + |C⁻|`.
    pub fn len(&self) -> usize {
        self.n_similar() + self.n_dissimilar()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Joint row `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        let ns = self.n_similar();
        if k < ns {
            &self.similar[k * self.dim..(k + 1) * self.dim]
        } else {
            let j = k - ns;
            &self.dissimilar[j * self.dim..(j + 1) * self.dim]
        }
    }

    pub fn is_similar(&self, k: usize) -> bool {
        k < self.n_similar()
    }

    /// Sample index pairs, empty when built with [`from_diffs`](Self::from_diffs).
    pub fn similar_pairs(&self) -> &[(usize, usize)] {
        &self.similar_pairs
    }

    pub fn dissimilar_pairs(&self) -> &[(usize, usize)] {
        &self.dissimilar_pairs
    }

    pub fn similar_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_similar(), self.dim, &self.similar)
    }

    pub fn dissimilar_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_dissimilar(), self.dim, &self.dissimilar)
    }

    pub fn bounds(&self) -> Result<Bounds> {
        self.bounds.ok_or_else(|| Error::InvalidArgument("pair constraints have no distance bounds yet".into()))
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    /// `(x_k)ᵀ W x_k` for every joint row.
    pub fn pair_distances(&self, w: &SpdMatrix) -> Result<Vec<f64>> {
        check_dim("metric", self.dim, w.dim())?;
        Ok((0..self.len()).map(|k| quad_form(w.as_matrix(), self.row(k))).collect())
    }

    /// Remove all-zero rows. They come from duplicate samples and yield the
    /// vacuous constraint `0 ≤ u(1 + ξ)` (or an unsatisfiable one on the
    /// dissimilar side). Returns the number of rows removed.
    pub fn drop_degenerate(self) -> Result<(Self, usize)> {
        let dim = self.dim;
        let keep = |data: &[f64], pairs: &[(usize, usize)]| {
            let mut rows = Vec::new();
            let mut kept_pairs = Vec::new();
            for (i, r) in data.chunks_exact(dim).enumerate() {
                if r.iter().any(|&v| v != 0.0) {
                    rows.extend_from_slice(r);
                    if let Some(p) = pairs.get(i) {
                        kept_pairs.push(*p);
                    }
                }
            }
            (rows, kept_pairs)
        };
        let before = self.len();
        let (similar, similar_pairs) = keep(&self.similar, &self.similar_pairs);
        let (dissimilar, dissimilar_pairs) = keep(&self.dissimilar, &self.dissimilar_pairs);
        let out = PairConstraints { dim, similar, dissimilar, similar_pairs, dissimilar_pairs, bounds: self.bounds };
        if out.n_similar() == 0 || out.n_dissimilar() == 0 {
            return Err(Error::ConstraintConstruction("every pair on one side has a zero difference vector".into()));
        }
        let dropped = before - out.len();
        Ok((out, dropped))
    }
}

/// Enumerate same-label and cross-label sample pairs `(i, j)`, `i < j`.
///
/// When a side has more than `max_pairs_per_class` pairs, a uniform subset
/// of that size is drawn from the seed's pair stream; the kept pairs stay in
/// lexicographic order.
pub fn build_pairs(
    features: &DMatrix<f64>,
    labels: &[i64],
    max_pairs_per_class: usize,
    seed: u64,
) -> Result<PairConstraints> {
    let n = features.nrows();
    check_dim("label vector", n, labels.len())?;
    if n < 2 {
        return Err(Error::ConstraintConstruction(format!("need at least 2 samples, got {n}")));
    }
    if max_pairs_per_class == 0 {
        return Err(Error::Config("max_pairs_per_class must be positive".into()));
    }
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                same.push((i, j));
            } else {
                cross.push((i, j));
            }
        }
    }
    if same.is_empty() {
        return Err(Error::ConstraintConstruction("no label occurs twice, so there are no similar pairs".into()));
    }
    if cross.is_empty() {
        return Err(Error::ConstraintConstruction(
            "all samples share one label, so there are no dissimilar pairs".into(),
        ));
    }

    let mut rng = stream_rng(seed, Stream::Pairs);
    let mut subsample = |pairs: Vec<(usize, usize)>| {
        if pairs.len() <= max_pairs_per_class {
            return pairs;
        }
        let mut idx = index::sample(&mut rng, pairs.len(), max_pairs_per_class).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| pairs[k]).collect()
    };
    let same = subsample(same);
    let cross = subsample(cross);

    let dim = features.ncols();
    let diffs = |pairs: &[(usize, usize)]| {
        let mut out = Vec::with_capacity(pairs.len() * dim);
        for &(i, j) in pairs {
            out.extend((0..dim).map(|c| features[(i, c)] - features[(j, c)]));
        }
        out
    };
    Ok(PairConstraints {
        dim,
        similar: diffs(&same),
        dissimilar: diffs(&cross),
        similar_pairs: same,
        dissimilar_pairs: cross,
        bounds: None,
    })
}

/// Nearest-rank percentiles: `u` at rank `⌈p_lo·N/100⌉`, `l` at `⌈p_hi·N/100⌉`.
pub fn compute_bounds(distances: &[f64], p_lo: f64, p_hi: f64) -> Result<Bounds> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("no distances to take percentiles of".into()));
    }
    if !(0.0 < p_lo && p_lo < p_hi && p_hi < 100.0) {
        return Err(Error::Config(format!("percentiles must satisfy 0 < {p_lo} < {p_hi} < 100")));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite pair distance".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let u = nearest_rank(&sorted, p_lo);
    let l = nearest_rank(&sorted, p_hi);
    Bounds::new(u, l)
}

pub(crate) fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_samples() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0])
    }

    #[test]
    fn exhaustive_enumeration() {
        let pc = build_pairs(&three_samples(), &[7, 7, 3], 100, 0).unwrap();
        assert_eq!(pc.similar_pairs(), &[(0, 1)]);
        assert_eq!(pc.dissimilar_pairs(), &[(0, 2), (1, 2)]);
        assert_eq!(pc.row(0), &[-1.0, 0.0]);
        assert_eq!(pc.row(1), &[0.0, -2.0]);
        assert_eq!(pc.row(2), &[1.0, -2.0]);
        assert!(pc.is_similar(0) && !pc.is_similar(1));
    }

    #[test]
    fn duplicate_rows_give_zero_differences() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 5.0, 5.0]);
        let pc = build_pairs(&x, &[0, 0, 1], 100, 0).unwrap();
        assert_eq!(pc.row(0), &[0.0, 0.0]);
        assert_eq!(pc.n_similar(), 1);
        assert!(pc.clone().drop_degenerate().is_err());

        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 3.0, 9.0]);
        let pc = build_pairs(&x, &[0, 0, 0, 1], 100, 0).unwrap();
        let (kept, dropped) = pc.drop_degenerate().unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(kept.similar_pairs(), &[(0, 2), (1, 2)]);
        assert_eq!(kept.n_similar(), 2);
    }

    #[test]
    fn construction_errors() {
        let x = three_samples();
        assert!(matches!(build_pairs(&x, &[1, 2, 3], 10, 0), Err(Error::ConstraintConstruction(_))));
        assert!(matches!(build_pairs(&x, &[1, 1, 1], 10, 0), Err(Error::ConstraintConstruction(_))));
        assert!(build_pairs(&x, &[1, 1], 10, 0).unwrap_err().is_argument_error());
    }

    #[test]
    fn subsampling_is_seeded_and_capped() {
        let n = 60;
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let labels: Vec<i64> = (0..n as i64).map(|i| i % 3).collect();
        let a = build_pairs(&x, &labels, 50, 9).unwrap();
        let b = build_pairs(&x, &labels, 50, 9).unwrap();
        let c = build_pairs(&x, &labels, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.similar_pairs(), c.similar_pairs());
        assert_eq!(a.n_similar(), 50);
        assert_eq!(a.n_dissimilar(), 50);
        assert!(a.similar_pairs().windows(2).all(|w| w[0] < w[1]));
        assert!(a.similar_pairs().iter().all(|&(i, j)| labels[i] == labels[j]));
        assert!(a.dissimilar_pairs().iter().all(|&(i, j)| labels[i] != labels[j]));
    }

    #[test]
    fn bounds_examples() {
        let d: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(compute_bounds(&d, 5.0, 95.0).unwrap(), Bounds { u: 5.0, l: 95.0 });
        assert!(matches!(compute_bounds(&[2.0; 50], 5.0, 95.0), Err(Error::Bounds(_))));
        assert!(matches!(compute_bounds(&[3.0], 5.0, 95.0), Err(Error::Bounds(_))));
        assert!(compute_bounds(&d, 95.0, 5.0).is_err());
        assert!(compute_bounds(&[], 5.0, 95.0).is_err());
    }

    #[test]
    fn nearest_rank_oracle() {
        // rank ⌈pN/100⌉ computed with integer arithmetic
        let sorted: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        for p in 1..100u32 {
            let rank = (p as usize * 37).div_ceil(100).max(1);
            assert_eq!(nearest_rank(&sorted, p as f64), sorted[rank - 1], "p = {p}");
        }
    }
}
