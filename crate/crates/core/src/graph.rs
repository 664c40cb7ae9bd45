//! Exact k-nearest-neighbor search and the sparse row-stochastic transition
//! matrix built from it with a Gaussian kernel and per-sample bandwidth.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::cospace::FeatureSpace;
use crate::dataset::SampleId;
use crate::error::{Error, Result};
use crate::linalg::squared_distance_within;
use crate::scalar::Scalar;

/// Kernel weights below this are dropped before renormalizing.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Rank of every row's id in byte-lexicographic order.
pub(crate) fn id_ranks(ids: &[SampleId]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut ranks = vec![0u32; ids.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as u32;
    }
    ranks
}

/// Orders candidates by squared distance, then id rank.
#[inline]
pub(crate) fn by_distance_then_rank<T: Scalar>(
    a: &(T, u32, usize),
    b: &(T, u32, usize),
) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// The `K` nearest other samples of every sample, ascending by distance,
/// ties by ascending sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex<T> {
    ids: Vec<SampleId>,
    k: usize,
    neighbors: Vec<usize>,
    distances: Vec<T>,
}

impl<T: Scalar> KnnIndex<T> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    /// Row indices of the neighbors of row `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[T] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    /// `(id, distance)` pairs for the sample `id`.
    pub fn neighbors_of(&self, id: &SampleId) -> Option<Vec<(SampleId, T)>> {
        let i = self.ids.iter().position(|x| x == id)?;
        Some(
            self.neighbors(i)
                .iter()
                .zip(self.distances(i))
                .map(|(&j, &d)| (self.ids[j].clone(), d))
                .collect(),
        )
    }
}

/// Pluggable neighbor search; [`ExactSearch`] is the reference.
pub trait NeighborSearch<T: Scalar> {
    fn search(&self, space: &FeatureSpace<T>, k: usize) -> Result<KnnIndex<T>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSearch;

impl<T: Scalar> NeighborSearch<T> for ExactSearch {
    fn search(&self, space: &FeatureSpace<T>, k: usize) -> Result<KnnIndex<T>> {
        build_knn(space, k)
    }
}

/// Exact kNN over full pairwise distances.
pub fn build_knn<T: Scalar>(space: &FeatureSpace<T>, k: usize) -> Result<KnnIndex<T>> {
    let n = space.len();
    if k == 0 {
        return Err(Error::Config("K must be positive".into()));
    }
    if k >= n {
        return Err(Error::NeighborCountTooLarge { k, n });
    }
    let ranks = id_ranks(space.ids());
    let rows: Vec<(Vec<usize>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = space.row(i);
            // Sorted buffer of the best k so far; anything provably farther
            // than its last entry is rejected before the distance completes.
            let mut best: Vec<(T, u32, usize)> = Vec::with_capacity(k + 1);
            for j in (0..n).filter(|&j| j != i) {
                let bound = if best.len() == k {
                    Some(best[k - 1].0)
                } else {
                    None
                };
                let Some(d2) = squared_distance_within(xi, space.row(j), bound) else {
                    continue;
                };
                let cand = (d2, ranks[j], j);
                let at =
                    best.partition_point(|b| by_distance_then_rank(b, &cand) == Ordering::Less);
                if at < k {
                    best.insert(at, cand);
                    best.truncate(k);
                }
            }
            best.into_iter().map(|(d2, _, j)| (j, d2.sqrt())).unzip()
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (nb, ds) in rows {
        neighbors.extend(nb);
        distances.extend(ds);
    }
    Ok(KnnIndex {
        ids: space.ids().to_vec(),
        k,
        neighbors,
        distances,
    })
}

/// Kernel hyperparameters of the transition matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams<T> {
    /// Global width multiplier `μ` in `exp(−ρ²/(μσ²))`.
    pub mu: T,
    /// Bandwidth scale: `σ_i = δ · mean distance from x_i to its K neighbors`.
    pub delta: T,
}

/// Sparse row-stochastic `n × n` matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    ids: Vec<SampleId>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<T>,
    sigma: Vec<T>,
    params: KernelParams<T>,
    k: usize,
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> KernelParams<T> {
        self.params
    }

    /// Per-row bandwidth after the `δ` scaling and zero substitution.
    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    /// `(column, value)` entries of row `i`, columns in neighbor order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map_or(T::zero(), |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Dense row-major copy, for diagnostics and small-n tests.
    pub fn to_dense(&self) -> Vec<T> {
        let n = self.len();
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for (j, v) in self.row(i) {
                out[i * n + j] = v;
            }
        }
        out
    }

    /// `out = P · y` for a row-major `n × m` matrix `y`.
    pub(crate) fn mul_rows(&self, y: &[T], m: usize, out: &mut [T]) {
        out.par_chunks_mut(m).enumerate().for_each(|(i, o)| {
            o.iter_mut().for_each(|v| *v = T::zero());
            for (j, p) in self.row(i) {
                for (ov, &yv) in o.iter_mut().zip(&y[j * m..(j + 1) * m]) {
                    *ov = *ov + p * yv;
                }
            }
        });
    }

    /// Coordinate text dump: `i<TAB>j<TAB>value` per stored entry.
    pub fn write_coo(&self, mut w: impl Write) -> std::io::Result<()> {
        for i in 0..self.len() {
            for (j, v) in self.row(i) {
                writeln!(w, "{i}\t{j}\t{v}")?;
            }
        }
        Ok(())
    }
}

/// Builds `P` from a kNN index over the same space.
///
/// Row `i` holds `W(i,j) = exp(−ρ(x_i,x_j)²/(μσ_i²))` over the neighbors of
/// `x_i`, normalized over the row, then normalized again as `Δ(i,j)`.
/// Rows whose bandwidth is zero borrow the smallest positive bandwidth.
pub fn build_transition<T: Scalar>(
    space: &FeatureSpace<T>,
    knn: &KnnIndex<T>,
    params: KernelParams<T>,
) -> Result<TransitionMatrix<T>> {
    if !(params.mu > T::zero()) || !(params.delta > T::zero()) {
        return Err(Error::Config("mu and delta must be positive".into()));
    }
    if knn.ids() != space.ids() {
        return Err(Error::IdSetMismatch(
            "kNN index was built over a different sample set".into(),
        ));
    }
    let n = space.len();
    let k = knn.k();
    let kf = T::of_usize(k);

    let mut sigma: Vec<T> = (0..n)
        .map(|i| params.delta * knn.distances(i).iter().copied().sum::<T>() / kf)
        .collect();
    if sigma.iter().any(|&s| s == T::zero()) {
        let floor = sigma
            .iter()
            .copied()
            .filter(|&s| s > T::zero())
            .fold(None, |acc: Option<T>, s| Some(acc.map_or(s, |a| a.min(s))))
            .ok_or(Error::DegenerateGeometry)?;
        for s in sigma.iter_mut().filter(|s| **s == T::zero()) {
            *s = floor;
        }
    }

    let floor = T::of(UNDERFLOW_FLOOR);
    let rows: Vec<Vec<(usize, T)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let width = params.mu * sigma[i] * sigma[i];
            let expo: Vec<T> = knn.distances(i).iter().map(|&d| d * d / width).collect();
            // Shifting by the row minimum cancels in the normalization and
            // keeps the nearest neighbor's weight at 1.
            let shift = expo.iter().copied().fold(T::infinity(), T::min);
            let mut w: Vec<T> = expo
                .iter()
                .map(|&e| {
                    let v = (-(e - shift)).exp();
                    if v < floor {
                        T::zero()
                    } else {
                        v
                    }
                })
                .collect();
            normalize(&mut w);
            normalize(&mut w);
            knn.neighbors(i)
                .iter()
                .copied()
                .zip(w)
                .filter(|&(_, v)| v > T::zero())
                .collect()
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * k);
    let mut values = Vec::with_capacity(n * k);
    row_ptr.push(0);
    for r in rows {
        for (j, v) in r {
            cols.push(j);
            values.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(TransitionMatrix {
        ids: space.ids().to_vec(),
        row_ptr,
        cols,
        values,
        sigma,
        params,
        k,
    })
}

fn normalize<T: Scalar>(w: &mut [T]) {
    let total: T = w.iter().copied().sum();
    if total > T::zero() {
        w.iter_mut().for_each(|v| *v = *v / total);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[(&str, f64)]) -> FeatureSpace<f64> {
        let ids = points
            .iter()
            .map(|(s, _)| SampleId::new(s).unwrap())
            .collect();
        let data = points.iter().map(|&(_, x)| x).collect();
        FeatureSpace::new(ids, data, 1).unwrap()
    }

    fn unit() -> KernelParams<f64> {
        KernelParams {
            mu: 1.0,
            delta: 1.0,
        }
    }

    #[test]
    fn two_points_are_mutual_neighbors() {
        let s = line(&[("a", 0.0), ("b", 1.0)]);
        let knn = build_knn(&s, 1).unwrap();
        assert_eq!(knn.neighbors(0), &[1]);
        assert_eq!(knn.neighbors(1), &[0]);
        assert_eq!(knn.distances(0), &[1.0]);
    }

    #[test]
    fn collinear_points_against_pairwise_oracle() {
        let s = line(&[("p0", 0.0), ("p1", 1.0), ("p3", 3.0)]);
        let knn = build_knn(&s, 2).unwrap();
        assert_eq!(knn.neighbors(1), &[0, 2]);
        assert_eq!(knn.distances(1), &[1.0, 2.0]);
        assert_eq!(knn.neighbors(0), &[1, 2]);
        assert_eq!(knn.distances(0), &[1.0, 3.0]);
    }

    #[test]
    fn ties_break_on_smaller_id() {
        // "b" and "a" coincide, both at distance 1 from "q".
        let s = line(&[("q", 0.0), ("b", 1.0), ("a", 1.0)]);
        let knn = build_knn(&s, 1).unwrap();
        assert_eq!(knn.neighbors(0), &[2]);
        let nb = knn.neighbors_of(&SampleId::new("q").unwrap()).unwrap();
        assert_eq!(nb[0].0.as_str(), "a");
    }

    #[test]
    fn k_must_be_below_n() {
        let s = line(&[("a", 0.0), ("b", 1.0)]);
        assert!(matches!(
            build_knn(&s, 2).unwrap_err(),
            Error::NeighborCountTooLarge { k: 2, n: 2 }
        ));
    }

    #[test]
    fn single_neighbor_rows_are_one() {
        let s = line(&[("a", 0.0), ("b", 1.0), ("c", 5.0), ("d", 40.0)]);
        let knn = build_knn(&s, 1).unwrap();
        let p = build_transition(&s, &knn, unit()).unwrap();
        for i in 0..4 {
            let row: Vec<_> = p.row(i).collect();
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].1, 1.0);
        }
    }

    #[test]
    fn kernel_row_matches_hand_values() {
        let s = line(&[("p0", 0.0), ("p1", 1.0), ("p3", 3.0)]);
        let knn = build_knn(&s, 2).unwrap();
        let p = build_transition(&s, &knn, unit()).unwrap();
        assert!((p.sigma()[1] - 1.5).abs() < 1e-15);
        let a = (-1.0f64 / 2.25).exp();
        let b = (-4.0f64 / 2.25).exp();
        assert!((a - 0.6412).abs() < 5e-5);
        assert!((b - 0.1690).abs() < 5e-5);
        assert!((p.get(1, 0) - a / (a + b)).abs() < 1e-15);
        assert!((p.get(1, 0) - 0.7914).abs() < 5e-5);
        assert!((p.get(1, 2) - 0.2086).abs() < 5e-5);
    }

    #[test]
    fn delta_scales_bandwidth() {
        let s = line(&[("p0", 0.0), ("p1", 1.0), ("p3", 3.0)]);
        let knn = build_knn(&s, 2).unwrap();
        let p = build_transition(
            &s,
            &knn,
            KernelParams {
                mu: 1.0,
                delta: 0.9,
            },
        )
        .unwrap();
        assert!((p.sigma()[1] - 1.35).abs() < 1e-15);
    }

    #[test]
    fn zero_bandwidth_borrows_smallest_positive() {
        // a and b coincide; with K=1 each has sigma 0.
        let s = line(&[("a", 0.0), ("b", 0.0), ("c", 2.0), ("d", 5.0)]);
        let knn = build_knn(&s, 1).unwrap();
        let p = build_transition(&s, &knn, unit()).unwrap();
        assert_eq!(p.sigma()[0], 2.0);
        assert_eq!(p.sigma()[1], 2.0);
    }

    #[test]
    fn all_coincident_is_degenerate() {
        let s = line(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        let knn = build_knn(&s, 2).unwrap();
        assert!(matches!(
            build_transition(&s, &knn, unit()).unwrap_err(),
            Error::DegenerateGeometry
        ));
    }

    #[test]
    fn underflowed_entries_are_dropped() {
        // Tiny mu drives the far neighbor's weight to zero.
        let s = line(&[("a", 0.0), ("b", 1.0), ("c", 100.0)]);
        let knn = build_knn(&s, 2).unwrap();
        let p = build_transition(
            &s,
            &knn,
            KernelParams {
                mu: 1e-3,
                delta: 1.0,
            },
        )
        .unwrap();
        let row: Vec<_> = p.row(0).collect();
        assert_eq!(row, vec![(1, 1.0)]);
    }

    #[test]
    fn coo_dump() {
        let s = line(&[("a", 0.0), ("b", 1.0)]);
        let knn = build_knn(&s, 1).unwrap();
        let p = build_transition(&s, &knn, unit()).unwrap();
        let mut buf = Vec::new();
        p.write_coo(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\t1\t1\n1\t0\t1\n");
    }
}
