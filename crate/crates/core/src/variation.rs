//! Neighborhood category variation: per-class covariances of the labeled
//! samples around an unlabeled sample, their Hellinger distance across the
//! Co-Space, and the diagonal class-reweighting matrix built from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use crate::cospace::{CoSpace, FeatureSpace};
use crate::dataset::{Partition, SampleId};
use crate::error::{Error, Result};
use crate::graph::{by_distance_then_rank, id_ranks};
use crate::linalg::{cholesky, cholesky_log_det, squared_distance, symmetric_eigenvalues, whiten};
use crate::scalar::Scalar;

/// Relative ridge added to every local covariance, times `trace/D`.
pub const RIDGE_RELATIVE: f64 = 1e-6;
/// Absolute lower bound on the ridge.
pub const RIDGE_FLOOR: f64 = 1e-9;

/// Labeled neighbors of a sample grouped by class, each list nearest first.
pub type ClassNeighborhood<M> = BTreeMap<usize, Vec<M>>;

/// How the member sets feeding the two per-class covariances are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberMode {
    /// Each side uses its own nearest labeled members of the class.
    #[default]
    SideSpecific,
    /// Both sides use the members of the class found in both neighborhoods.
    Shared,
}

impl std::str::FromStr for MemberMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "side-specific" => Ok(MemberMode::SideSpecific),
            "shared" => Ok(MemberMode::Shared),
            other => Err(Error::Config(format!("unknown member mode `{other}`"))),
        }
    }
}

impl fmt::Display for MemberMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemberMode::SideSpecific => "side-specific",
            MemberMode::Shared => "shared",
        })
    }
}

/// Settings for the category-variation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationParams<T> {
    /// Number of classes kept from the neighborhood intersection.
    pub top_s: usize,
    /// Labeled neighbors considered per side.
    pub n_max: usize,
    /// Weight of the sample itself in its class covariance.
    pub k_weight: T,
    pub member_mode: MemberMode,
}

/// Labeled rows of one feature space with their classes, ready for
/// repeated nearest-labeled queries.
#[derive(Debug, Clone)]
pub(crate) struct LabeledIndex<'a, T> {
    space: &'a FeatureSpace<T>,
    /// `(row, class, id rank)` of every labeled sample.
    entries: Vec<(usize, usize, u32)>,
}

impl<'a, T: Scalar> LabeledIndex<'a, T> {
    pub(crate) fn new(space: &'a FeatureSpace<T>, partition: &Partition) -> Self {
        let ranks = id_ranks(space.ids());
        let entries = space
            .ids()
            .iter()
            .enumerate()
            .filter_map(|(i, id)| partition.class_of(id).map(|c| (i, c, ranks[i])))
            .collect();
        LabeledIndex { space, entries }
    }

    pub(crate) fn space(&self) -> &'a FeatureSpace<T> {
        self.space
    }

    /// Up to `n_max` nearest labeled rows to row `x`, grouped by class.
    pub(crate) fn nearest(&self, x: usize, n_max: usize) -> ClassNeighborhood<usize> {
        let xr = self.space.row(x);
        let mut cand: Vec<(T, u32, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.0 != x)
            .map(|(slot, &(row, _, rank))| (squared_distance(xr, self.space.row(row)), rank, slot))
            .collect();
        if n_max < cand.len() {
            cand.select_nth_unstable_by(n_max - 1, by_distance_then_rank);
            cand.truncate(n_max);
        }
        cand.sort_unstable_by(by_distance_then_rank);
        let mut out: ClassNeighborhood<usize> = BTreeMap::new();
        for (_, _, slot) in cand {
            let (row, class, _) = self.entries[slot];
            out.entry(class).or_default().push(row);
        }
        out
    }
}

/// The `n_max` labeled samples nearest to the unlabeled sample `x`, grouped
/// by class. Ties fall to the smaller sample id.
pub fn labeled_neighborhood<T: Scalar>(
    space: &FeatureSpace<T>,
    x: &SampleId,
    partition: &Partition,
    n_max: usize,
) -> Result<ClassNeighborhood<SampleId>> {
    let row = space
        .position(x)
        .ok_or_else(|| Error::UnknownSampleId(x.to_string()))?;
    if !partition.is_unlabeled(x) {
        return Err(Error::NotUnlabeled(x.to_string()));
    }
    if n_max == 0 {
        return Err(Error::Config(
            "labeled neighbor count must be positive".into(),
        ));
    }
    let index = LabeledIndex::new(space, partition);
    if index.entries.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    Ok(index
        .nearest(row, n_max)
        .into_iter()
        .map(|(c, rows)| {
            (
                c,
                rows.into_iter().map(|r| space.ids()[r].clone()).collect(),
            )
        })
        .collect())
}

/// Classes present in both neighborhoods, ranked by combined member count
/// (descending, ties to the smaller class index), truncated to `s`.
pub fn top_s_classes<A, B>(
    before: &ClassNeighborhood<A>,
    after: &ClassNeighborhood<B>,
    s: usize,
) -> Vec<usize> {
    let mut shared: Vec<(usize, usize)> = before
        .iter()
        .filter(|(_, m)| !m.is_empty())
        .filter_map(|(&c, mb)| {
            after
                .get(&c)
                .filter(|ma| !ma.is_empty())
                .map(|ma| (c, mb.len() + ma.len()))
        })
        .collect();
    shared.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    shared.truncate(s);
    shared.into_iter().map(|(c, _)| c).collect()
}

/// Regularized weighted covariance of one class's labeled neighbors around
/// a sample that is itself counted with weight `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCovariance<T> {
    /// Row-major `dim × dim`, ridge included.
    sigma: Vec<T>,
    dim: usize,
    ridge: T,
    pub class_id: usize,
    pub center_sample: Option<SampleId>,
    pub neighbor_count: usize,
    pub k_weight: T,
}

impl<T: Scalar> LocalCovariance<T> {
    /// Covariance from raw vectors: the center `x` at weight `k` plus
    /// `members`, with mean `(k·x + Σ x′)/(N + k)` and denominator `N + k − 1`.
    pub fn from_vectors<'v>(
        center: &[T],
        members: impl IntoIterator<Item = &'v [T]>,
        k_weight: T,
        class_id: usize,
    ) -> Result<Self> {
        let members: Vec<&[T]> = members.into_iter().collect();
        let d = center.len();
        let count = T::of_usize(members.len());
        let denom = count + k_weight - T::one();
        if !(denom > T::zero()) || k_weight < T::zero() {
            return Err(Error::NonPositiveDenominator(denom.to_f64_lossy()));
        }
        if let Some(m) = members.iter().find(|m| m.len() != d) {
            return Err(Error::ShapeMismatch(format!(
                "member of dimension {} around a center of dimension {d}",
                m.len()
            )));
        }

        let mut mean: Vec<T> = center.iter().map(|&c| c * k_weight).collect();
        for m in &members {
            for (a, &v) in mean.iter_mut().zip(m.iter()) {
                *a = *a + v;
            }
        }
        let total = count + k_weight;
        mean.iter_mut().for_each(|a| *a = *a / total);

        let mut sigma = vec![T::zero(); d * d];
        let mut dev = vec![T::zero(); d];
        let mut accumulate = |v: &[T], w: T, sigma: &mut [T]| {
            for ((o, &x), &m) in dev.iter_mut().zip(v).zip(&mean) {
                *o = x - m;
            }
            for a in 0..d {
                let da = dev[a] * w;
                if da == T::zero() {
                    continue;
                }
                for b in a..d {
                    sigma[a * d + b] = sigma[a * d + b] + da * dev[b];
                }
            }
        };
        if k_weight > T::zero() {
            accumulate(center, k_weight, &mut sigma);
        }
        for m in &members {
            accumulate(m, T::one(), &mut sigma);
        }
        for a in 0..d {
            for b in a..d {
                let v = sigma[a * d + b] / denom;
                sigma[a * d + b] = v;
                sigma[b * d + a] = v;
            }
        }

        let trace = (0..d).fold(T::zero(), |acc, a| acc + sigma[a * d + a]);
        let ridge = (T::of(RIDGE_RELATIVE) * trace / T::of_usize(d)).max(T::of(RIDGE_FLOOR));
        for a in 0..d {
            sigma[a * d + a] = sigma[a * d + a] + ridge;
        }
        Ok(LocalCovariance {
            sigma,
            dim: d,
            ridge,
            class_id,
            center_sample: None,
            neighbor_count: members.len(),
            k_weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Regularized matrix, row-major.
    pub fn matrix(&self) -> &[T] {
        &self.sigma
    }

    /// The ridge `ε` added to the diagonal.
    pub fn ridge(&self) -> T {
        self.ridge
    }

    /// Matrix without the ridge.
    pub fn unregularized(&self) -> Vec<T> {
        let mut s = self.sigma.clone();
        for a in 0..self.dim {
            s[a * self.dim + a] = s[a * self.dim + a] - self.ridge;
        }
        s
    }
}

/// Local covariance of class `class_id` around sample `x` in `space`.
pub fn local_covariance<T: Scalar>(
    space: &FeatureSpace<T>,
    x: &SampleId,
    members: &[SampleId],
    k_weight: T,
    class_id: usize,
) -> Result<LocalCovariance<T>> {
    let center = space
        .vector(x)
        .ok_or_else(|| Error::UnknownSampleId(x.to_string()))?;
    let rows = members
        .iter()
        .map(|m| {
            space
                .vector(m)
                .ok_or_else(|| Error::UnknownSampleId(m.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cov = LocalCovariance::from_vectors(center, rows, k_weight, class_id)?;
    cov.center_sample = Some(x.clone());
    Ok(cov)
}

/// `ln BC`, the log Bhattacharyya coefficient of `N(0, Σ_b)` and `N(0, Σ_a)`:
/// `(D/2)ln2 + ¼ln|Σ_b| + ¼ln|Σ_a| − ½ln|Σ_b + Σ_a|`.
///
/// Evaluated through the eigenvalues `λ_i` of `L_b⁻¹ Σ_a L_b⁻ᵀ` as
/// `Σ ½ ln(2√λ_i / (1 + λ_i))`, so nearly equal inputs keep full relative
/// precision instead of cancelling four large log-determinants.
pub fn log_affinity<T: Scalar>(sigma_b: &[T], sigma_a: &[T], dim: usize) -> Result<T> {
    check_square(sigma_b, sigma_a, dim)?;
    let lb = cholesky(sigma_b, dim).ok_or_else(|| {
        Error::NumericDegeneracy("before-side covariance is not positive definite".into())
    })?;
    let w = whiten(&lb, sigma_a, dim);
    let two = T::one() + T::one();
    let half = T::one() / two;
    let mut total = T::zero();
    for lambda in symmetric_eigenvalues(&w, dim) {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::NumericDegeneracy(
                "after-side covariance is not positive definite".into(),
            ));
        }
        let term = if (lambda - T::one()).abs() < half {
            let r = T::one() - lambda.sqrt();
            (-(r * r) / (T::one() + lambda)).ln_1p()
        } else {
            two.ln() + lambda.ln() * half - lambda.ln_1p()
        };
        total = total + term * half;
    }
    Ok(total.min(T::zero()))
}

/// The same quantity as [`log_affinity`], straight from three Cholesky
/// log-determinants. Kept as an independent check of the eigenvalue route.
pub fn log_affinity_logdet<T: Scalar>(sigma_b: &[T], sigma_a: &[T], dim: usize) -> Result<T> {
    check_square(sigma_b, sigma_a, dim)?;
    let fail = || Error::NumericDegeneracy("covariance is not positive definite".into());
    let ld_b = cholesky_log_det(sigma_b, dim).ok_or_else(fail)?;
    let ld_a = cholesky_log_det(sigma_a, dim).ok_or_else(fail)?;
    let sum: Vec<T> = sigma_b.iter().zip(sigma_a).map(|(&x, &y)| x + y).collect();
    let ld_s = cholesky_log_det(&sum, dim).ok_or_else(fail)?;
    let quarter = T::of(0.25);
    Ok(
        T::of_usize(dim) * T::of(0.5) * T::of(2f64.ln()) + quarter * ld_b + quarter * ld_a
            - T::of(0.5) * ld_s,
    )
}

fn check_square<T>(a: &[T], b: &[T], dim: usize) -> Result<()> {
    if a.len() != dim * dim || b.len() != dim * dim {
        return Err(Error::ShapeMismatch(format!(
            "expected two {dim}×{dim} matrices, got {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Hellinger distance between zero-mean Gaussians, in `[0, 1]`.
pub fn hellinger_matrices<T: Scalar>(sigma_b: &[T], sigma_a: &[T], dim: usize) -> Result<T> {
    let e = log_affinity(sigma_b, sigma_a, dim)?;
    let radicand = (-e.exp_m1()).max(T::zero()).min(T::one());
    Ok(radicand.sqrt())
}

/// Transformation distance between two local covariances.
pub fn hellinger<T: Scalar>(
    sigma_b: &LocalCovariance<T>,
    sigma_a: &LocalCovariance<T>,
) -> Result<T> {
    if sigma_b.dim != sigma_a.dim {
        return Err(Error::ShapeMismatch(format!(
            "covariances of dimension {} and {}",
            sigma_b.dim, sigma_a.dim
        )));
    }
    hellinger_matrices(&sigma_b.sigma, &sigma_a.sigma, sigma_b.dim)
}

/// Diagonal of the class-reweighting matrix `M`: softmax of `−ρ` over the
/// support, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationMatrix<T> {
    diag: Vec<T>,
    /// `(class, ρ)` in support order.
    rho: Vec<(usize, T)>,
}

impl<T: Scalar> TransformationMatrix<T> {
    /// Builds `κ(y) = exp(−ρ_y) / Σ exp(−ρ_y′)` over the given classes.
    pub fn from_distances(rho: Vec<(usize, T)>, num_classes: usize) -> Result<Self> {
        let mut diag = vec![T::zero(); num_classes];
        let mut seen = BTreeSet::new();
        for &(c, r) in &rho {
            if c >= num_classes || !seen.insert(c) {
                return Err(Error::Config(format!(
                    "invalid or repeated class {c} in support"
                )));
            }
            if !(r >= T::zero()) {
                return Err(Error::NumericDegeneracy(format!(
                    "distance {r} for class {c}"
                )));
            }
        }
        if !rho.is_empty() {
            // ρ ∈ [0, 1], so exp(−ρ) needs no shifting.
            let total: T = rho.iter().map(|&(_, r)| (-r).exp()).sum();
            for &(c, r) in &rho {
                diag[c] = (-r).exp() / total;
            }
        }
        Ok(TransformationMatrix { diag, rho })
    }

    /// `c · I` on every class; the ablation criterion's matrix.
    pub fn scaled_identity(c: T, num_classes: usize) -> Self {
        TransformationMatrix {
            diag: vec![c; num_classes],
            rho: (0..num_classes).map(|k| (k, T::zero())).collect(),
        }
    }

    /// Arbitrary non-negative diagonal; for tests and external weightings.
    pub fn from_diagonal(diag: Vec<T>) -> Result<Self> {
        if diag.iter().any(|d| !(*d >= T::zero()) || !d.is_finite()) {
            return Err(Error::Config(
                "diagonal entries must be finite and non-negative".into(),
            ));
        }
        let rho = diag
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > T::zero())
            .map(|(c, _)| (c, T::zero()))
            .collect();
        Ok(TransformationMatrix { diag, rho })
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    pub fn support(&self) -> Vec<usize> {
        self.rho.iter().map(|&(c, _)| c).collect()
    }

    pub fn distances(&self) -> &[(usize, T)] {
        &self.rho
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.diag.len()
    }

    /// `sample<TAB>class<TAB>rho<TAB>kappa` per supported class.
    pub fn write_diagnostics(&self, mut w: impl Write, sample: &SampleId) -> std::io::Result<()> {
        for &(c, r) in &self.rho {
            writeln!(w, "{sample}\t{c}\t{r}\t{}", self.diag[c])?;
        }
        Ok(())
    }
}

/// Transformation matrix for row `x` given labeled indices on both sides.
pub(crate) fn transformation_matrix_at<T: Scalar>(
    before: &LabeledIndex<'_, T>,
    after: &LabeledIndex<'_, T>,
    x: usize,
    params: &VariationParams<T>,
    num_classes: usize,
) -> Result<TransformationMatrix<T>> {
    let nb_b = before.nearest(x, params.n_max);
    let nb_a = after.nearest(x, params.n_max);
    let classes = top_s_classes(&nb_b, &nb_a, params.top_s);
    let k = params.k_weight;

    let mut rho = Vec::with_capacity(classes.len());
    for c in classes {
        let (mb, ma): (Vec<usize>, Vec<usize>) = match params.member_mode {
            MemberMode::SideSpecific => (nb_b[&c].clone(), nb_a[&c].clone()),
            MemberMode::Shared => {
                let in_after: BTreeSet<usize> = nb_a[&c].iter().copied().collect();
                let shared: Vec<usize> = nb_b[&c]
                    .iter()
                    .copied()
                    .filter(|r| in_after.contains(r))
                    .collect();
                (shared.clone(), shared)
            }
        };
        // Too few effective points for a covariance on either side.
        if !(T::of_usize(mb.len()) + k > T::one()) || !(T::of_usize(ma.len()) + k > T::one()) {
            continue;
        }
        let sb = LocalCovariance::from_vectors(
            before.space().row(x),
            mb.iter().map(|&r| before.space().row(r)),
            k,
            c,
        )?;
        let sa = LocalCovariance::from_vectors(
            after.space().row(x),
            ma.iter().map(|&r| after.space().row(r)),
            k,
            c,
        )?;
        rho.push((c, hellinger(&sb, &sa)?));
    }
    TransformationMatrix::from_distances(rho, num_classes)
}

/// Transformation matrix `M` of the unlabeled sample `x` across the Co-Space.
/// An empty support means the sample cannot be mined this round.
pub fn transformation_matrix<T: Scalar>(
    cs: &CoSpace<T>,
    x: &SampleId,
    partition: &Partition,
    params: &VariationParams<T>,
) -> Result<TransformationMatrix<T>> {
    if params.top_s == 0 || params.n_max == 0 {
        return Err(Error::Config("top_s and n_max must be positive".into()));
    }
    let row = cs
        .before()
        .position(x)
        .ok_or_else(|| Error::UnknownSampleId(x.to_string()))?;
    if !partition.is_unlabeled(x) {
        return Err(Error::NotUnlabeled(x.to_string()));
    }
    let before = LabeledIndex::new(cs.before(), partition);
    let after = LabeledIndex::new(cs.after(), partition);
    if before.entries.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    transformation_matrix_at(&before, &after, row, params, partition.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cospace::make_cospace;

    fn sid(s: &str) -> SampleId {
        SampleId::new(s).unwrap()
    }

    #[test]
    fn one_dimensional_weighted_covariance() {
        let c = LocalCovariance::<f64>::from_vectors(&[0.0], [&[2.0][..], &[-2.0][..]], 1.0, 0)
            .unwrap();
        assert!((c.unregularized()[0] - 4.0).abs() < 1e-12);
        assert!((c.ridge() - 4e-6).abs() < 1e-18);
        assert!((c.matrix()[0] - (4.0 + 4e-6)).abs() < 1e-12);
    }

    #[test]
    fn unweighted_covariance() {
        let c = LocalCovariance::<f64>::from_vectors(&[100.0], [&[0.0][..], &[2.0][..]], 0.0, 0)
            .unwrap();
        assert!((c.unregularized()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_members_leave_only_the_ridge() {
        let x: [f64; 2] = [1.0, 2.0];
        let c = LocalCovariance::from_vectors(&x, [&x[..], &x[..]], 1.0, 0).unwrap();
        assert_eq!(c.matrix(), &[RIDGE_FLOOR, 0.0, 0.0, RIDGE_FLOOR]);
    }

    #[test]
    fn non_positive_denominator() {
        let err = LocalCovariance::<f64>::from_vectors(&[0.0], [&[1.0][..]], 0.0, 0).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDenominator(_)));
    }

    #[test]
    fn hellinger_closed_forms() {
        assert!((hellinger_matrices::<f64>(&[1.0], &[9.0], 1).unwrap() - 0.474767).abs() < 1e-6);
        let want = (1.0 - (0.6f64).sqrt()).sqrt();
        assert!((hellinger_matrices::<f64>(&[1.0], &[9.0], 1).unwrap() - want).abs() < 1e-12);
        let h = hellinger_matrices::<f64>(&[1.0, 0.0, 0.0, 1.0], &[4.0, 0.0, 0.0, 4.0], 2).unwrap();
        assert!((h - 0.2f64.sqrt()).abs() < 1e-12);
        let s: [f64; 4] = [2.0, 0.3, 0.3, 1.0];
        assert!(hellinger_matrices(&s, &s, 2).unwrap() < 1e-12);
    }

    #[test]
    fn both_affinity_routes_agree() {
        let a: [f64; 9] = [3.0, 0.5, 0.1, 0.5, 2.0, -0.3, 0.1, -0.3, 1.5];
        let b = [1.0, 0.2, 0.0, 0.2, 4.0, 0.7, 0.0, 0.7, 2.5];
        let e1 = log_affinity(&a, &b, 3).unwrap();
        let e2 = log_affinity_logdet(&a, &b, 3).unwrap();
        assert!((e1 - e2).abs() < 1e-13);
    }

    #[test]
    fn hellinger_rejects_indefinite() {
        assert!(matches!(
            hellinger_matrices::<f64>(&[1.0, 2.0, 2.0, 1.0], &[1.0, 0.0, 0.0, 1.0], 2).unwrap_err(),
            Error::NumericDegeneracy(_)
        ));
    }

    #[test]
    fn kappa_two_term_softmax() {
        let m =
            TransformationMatrix::<f64>::from_distances(vec![(0, 0.0), (2, 2f64.ln())], 3).unwrap();
        assert!((m.diag()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.diag()[2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.diag()[1], 0.0);
        assert_eq!(m.support(), vec![0, 2]);
    }

    #[test]
    fn equal_distances_give_uniform_kappa() {
        let m = TransformationMatrix::<f64>::from_distances(vec![(1, 0.3), (3, 0.3), (4, 0.3)], 5)
            .unwrap();
        for c in [1, 3, 4] {
            assert!((m.diag()[c] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn top_s_intersection_examples() {
        let before: ClassNeighborhood<u8> = BTreeMap::from([(0, vec![0; 10]), (1, vec![0; 2])]);
        let after: ClassNeighborhood<u8> = BTreeMap::from([(0, vec![0; 8]), (2, vec![0; 5])]);
        assert_eq!(top_s_classes(&before, &after, 5), vec![0]);

        let seven: ClassNeighborhood<u8> = (0..7)
            .map(|c| (c, vec![0u8; [3, 9, 1, 9, 4, 2, 7][c]]))
            .collect();
        assert_eq!(top_s_classes(&seven, &seven, 5), vec![1, 3, 6, 4, 0]);

        let disjoint: ClassNeighborhood<u8> = BTreeMap::from([(5, vec![0; 3])]);
        assert!(top_s_classes(&before, &disjoint, 5).is_empty());
    }

    fn plane() -> (FeatureSpace<f64>, Partition) {
        // q is unlabeled at the origin; labeled samples around it.
        let pts = [
            ("q", [0.0, 0.0]),
            ("a1", [1.0, 0.0]),
            ("a2", [0.0, 1.5]),
            ("a3", [-1.0, 0.2]),
            ("b1", [3.0, 3.0]),
            ("b2", [3.5, 2.0]),
            ("b3", [2.0, 4.0]),
            ("u", [5.0, 5.0]),
        ];
        let ids: Vec<SampleId> = pts.iter().map(|p| sid(p.0)).collect();
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.1.to_vec()).collect();
        let space = FeatureSpace::from_rows(ids.clone(), &rows).unwrap();
        let labels = BTreeMap::from([
            (sid("a1"), 0),
            (sid("a2"), 0),
            (sid("a3"), 0),
            (sid("b1"), 1),
            (sid("b2"), 1),
            (sid("b3"), 1),
        ]);
        (space, Partition::new(ids.iter(), &labels, 3).unwrap())
    }

    #[test]
    fn neighborhood_truncates_and_groups() {
        let (space, part) = plane();
        let nb = labeled_neighborhood(&space, &sid("q"), &part, 4).unwrap();
        assert_eq!(nb[&0], vec![sid("a1"), sid("a3"), sid("a2")]);
        assert_eq!(nb[&1].len(), 1);
        let all = labeled_neighborhood(&space, &sid("q"), &part, 300).unwrap();
        assert_eq!(all.values().map(Vec::len).sum::<usize>(), 6);
        assert!(matches!(
            labeled_neighborhood(&space, &sid("a1"), &part, 4).unwrap_err(),
            Error::NotUnlabeled(_)
        ));
    }

    #[test]
    fn equidistant_labeled_samples_truncate_by_id() {
        let ids = vec![sid("x"), sid("m2"), sid("m1")];
        let space =
            FeatureSpace::from_rows(ids.clone(), &[vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        let labels = BTreeMap::from([(sid("m1"), 0), (sid("m2"), 1)]);
        let part = Partition::new(ids.iter(), &labels, 2).unwrap();
        let one = labeled_neighborhood(&space, &sid("x"), &part, 1).unwrap();
        assert_eq!(one, BTreeMap::from([(0, vec![sid("m1")])]));
        let two = labeled_neighborhood(&space, &sid("x"), &part, 2).unwrap();
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn no_labeled_samples() {
        let ids = vec![sid("x"), sid("y")];
        let space = FeatureSpace::from_rows(ids.clone(), &[vec![0.0], vec![1.0]]).unwrap();
        let part = Partition::new(ids.iter(), &BTreeMap::new(), 2).unwrap();
        assert!(matches!(
            labeled_neighborhood(&space, &sid("x"), &part, 5).unwrap_err(),
            Error::NoLabeledSamples
        ));
    }

    #[test]
    fn identity_transformation_gives_uniform_kappa() {
        let (space, part) = plane();
        let cs = make_cospace(space.clone(), space).unwrap();
        let params = VariationParams {
            top_s: 5,
            n_max: 300,
            k_weight: 1.0,
            member_mode: MemberMode::SideSpecific,
        };
        let m = transformation_matrix(&cs, &sid("q"), &part, &params).unwrap();
        assert_eq!(m.support(), vec![0, 1]);
        assert_eq!(m.diag(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn moving_class_gets_less_weight() {
        let (before, part) = plane();
        // Class 1 collapses toward a line after the transformation; class 0 is unchanged.
        let mut rows: Vec<Vec<f64>> = (0..before.len()).map(|i| before.row(i).to_vec()).collect();
        rows[4] = vec![3.0, 3.0];
        rows[5] = vec![3.1, 3.1];
        rows[6] = vec![2.9, 2.9];
        let after = FeatureSpace::from_rows(before.ids().to_vec(), &rows).unwrap();
        let cs = make_cospace(before, after).unwrap();
        let params = VariationParams {
            top_s: 5,
            n_max: 300,
            k_weight: 1.0,
            member_mode: MemberMode::SideSpecific,
        };
        let m = transformation_matrix(&cs, &sid("q"), &part, &params).unwrap();
        assert!(m.diag()[0] > m.diag()[1]);
        assert!((m.diag().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        m.write_diagnostics(&mut buf, &sid("q")).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
