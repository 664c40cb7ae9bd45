//! Dimensionality reduction applied to each side of a Co-Space before graph
//! construction. PCA is the default; random projection and identity are the
//! other built-ins.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CoSpace, FeatureSpace};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReduceMethod {
    #[default]
    Pca,
    RandomProjection,
    Identity,
}

impl FromStr for ReduceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ReduceMethod::Pca),
            "random-projection" => Ok(ReduceMethod::RandomProjection),
            "identity" => Ok(ReduceMethod::Identity),
            other => Err(Error::Config(format!("unknown reduce method `{other}`"))),
        }
    }
}

impl fmt::Display for ReduceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReduceMethod::Pca => "pca",
            ReduceMethod::RandomProjection => "random-projection",
            ReduceMethod::Identity => "identity",
        })
    }
}

/// Eigenvalues at or below this fraction of the largest are treated as zero
/// variance; their projected coordinates are emitted as exact zeros.
const RANK_TOL: f64 = 1e-12;

/// A fitted principal-component projection.
#[derive(Debug, Clone)]
pub struct Pca<T> {
    mean: Vec<T>,
    /// Row-major `target_dim × dim`, unit rows (zero rows for padded components).
    components: Vec<T>,
    /// Sample variance along each kept component, descending.
    variances: Vec<T>,
    total_variance: T,
    dim: usize,
    rank_deficient: bool,
}

impl<T: Scalar> Pca<T> {
    /// Fits on `space`. Uses the `dim × dim` covariance when `n ≥ dim`, the
    /// `n × n` Gram matrix otherwise.
    pub fn fit(space: &FeatureSpace<T>, target_dim: usize) -> Result<Self> {
        let n = space.len();
        let d = space.dim();
        if target_dim == 0 {
            return Err(Error::Config("target dimension must be positive".into()));
        }
        if target_dim > d {
            return Err(Error::TargetDimTooLarge {
                target: target_dim,
                dim: d,
            });
        }
        if n < 2 {
            return Err(Error::Config("pca needs at least two samples".into()));
        }

        let mut mean = vec![T::zero(); d];
        for i in 0..n {
            for (m, &x) in mean.iter_mut().zip(space.row(i)) {
                *m = *m + x;
            }
        }
        let nf = T::of_usize(n);
        for m in &mut mean {
            *m = *m / nf;
        }
        let centered: Vec<T> = (0..n)
            .flat_map(|i| space.row(i).iter().zip(&mean).map(|(&x, &m)| x - m))
            .collect();
        let denom = T::of_usize(n - 1);

        let (values, mut directions) = if n >= d {
            let mut cov = vec![T::zero(); d * d];
            for i in 0..n {
                let r = &centered[i * d..(i + 1) * d];
                for a in 0..d {
                    let ra = r[a];
                    for b in a..d {
                        cov[a * d + b] = cov[a * d + b] + ra * r[b];
                    }
                }
            }
            for a in 0..d {
                for b in a..d {
                    let v = cov[a * d + b] / denom;
                    cov[a * d + b] = v;
                    cov[b * d + a] = v;
                }
            }
            let eig = symmetric_eigen(&cov, d);
            (eig.values, eig.vectors)
        } else {
            let mut gram = vec![T::zero(); n * n];
            for i in 0..n {
                for j in i..n {
                    let g = crate::linalg::dot(
                        &centered[i * d..(i + 1) * d],
                        &centered[j * d..(j + 1) * d],
                    );
                    gram[i * n + j] = g;
                    gram[j * n + i] = g;
                }
            }
            let eig = symmetric_eigen(&gram, n);
            let top = eig.values.first().copied().unwrap_or_else(T::zero);
            let mut dirs = vec![T::zero(); n * d];
            for k in 0..n {
                let lambda = eig.values[k];
                if !(lambda > top * T::of(RANK_TOL)) {
                    continue;
                }
                let u = eig.vector(k);
                let dir = &mut dirs[k * d..(k + 1) * d];
                for (i, &ui) in u.iter().enumerate() {
                    for (o, &x) in dir.iter_mut().zip(&centered[i * d..(i + 1) * d]) {
                        *o = *o + ui * x;
                    }
                }
                let norm = crate::linalg::dot(dir, dir).sqrt();
                for o in dir.iter_mut() {
                    *o = *o / norm;
                }
            }
            let values = eig.values.iter().map(|&l| l / denom).collect();
            (values, dirs)
        };

        // With fewer samples than target dimensions the gram path yields only
        // `n` directions; the rest are padded below.
        if directions.len() < target_dim * d {
            directions.resize(target_dim * d, T::zero());
        }
        let total_variance: T = values.iter().map(|&v| v.max(T::zero())).sum();
        let top = values
            .first()
            .copied()
            .unwrap_or_else(T::zero)
            .max(T::zero());
        let mut variances = Vec::with_capacity(target_dim);
        let mut rank_deficient = false;
        for k in 0..target_dim {
            let lambda = values.get(k).copied().unwrap_or_else(T::zero);
            let dir = &mut directions[k * d..(k + 1) * d];
            if !(lambda > top * T::of(RANK_TOL)) || top == T::zero() {
                rank_deficient = true;
                variances.push(T::zero());
                continue;
            }
            fix_sign(dir);
            variances.push(lambda);
        }
        directions.truncate(target_dim * d);
        if rank_deficient {
            log::warn!(
                "pca: data has fewer than {target_dim} directions of non-zero variance; \
                 padding with zero components"
            );
        }
        Ok(Pca {
            mean,
            components: directions,
            variances,
            total_variance,
            dim: d,
            rank_deficient,
        })
    }

    pub fn target_dim(&self) -> usize {
        self.variances.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// Unit direction of component `k` (all zeros for a padded component).
    pub fn component(&self, k: usize) -> &[T] {
        &self.components[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variances(&self) -> &[T] {
        &self.variances
    }

    /// Share of total variance carried by each kept component.
    pub fn explained_variance_ratio(&self) -> Vec<T> {
        if self.total_variance == T::zero() {
            return vec![T::zero(); self.variances.len()];
        }
        self.variances
            .iter()
            .map(|&v| v / self.total_variance)
            .collect()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn transform(&self, space: &FeatureSpace<T>) -> Result<FeatureSpace<T>> {
        if space.dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "pca fitted on dimension {}, got {}",
                self.dim,
                space.dim()
            )));
        }
        let k = self.target_dim();
        let d = self.dim;
        let mut out = vec![T::zero(); space.len() * k];
        let mut centered = vec![T::zero(); d];
        for i in 0..space.len() {
            for ((c, &x), &m) in centered.iter_mut().zip(space.row(i)).zip(&self.mean) {
                *c = x - m;
            }
            for j in 0..k {
                if self.variances[j] == T::zero() {
                    continue;
                }
                out[i * k + j] = crate::linalg::dot(&centered, self.component(j));
            }
        }
        Ok(space.with_data(out, k))
    }
}

/// Flips `dir` so its largest-magnitude coordinate (first one on ties) is positive.
fn fix_sign<T: Scalar>(dir: &mut [T]) {
    let mut best = 0;
    for (i, v) in dir.iter().enumerate() {
        if v.abs() > dir[best].abs() {
            best = i;
        }
    }
    if dir[best] < T::zero() {
        for v in dir.iter_mut() {
            *v = -*v;
        }
    }
}

fn random_projection<T: Scalar>(
    space: &FeatureSpace<T>,
    target_dim: usize,
    seed: u64,
) -> FeatureSpace<T> {
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (target_dim as f64).sqrt();
    let proj: Vec<T> = (0..d * target_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z * scale)
        })
        .collect();
    let mut out = vec![T::zero(); space.len() * target_dim];
    for i in 0..space.len() {
        let row = space.row(i);
        for (a, &x) in row.iter().enumerate() {
            let p = &proj[a * target_dim..(a + 1) * target_dim];
            let o = &mut out[i * target_dim..(i + 1) * target_dim];
            for (oj, &pj) in o.iter_mut().zip(p) {
                *oj = *oj + x * pj;
            }
        }
    }
    space.with_data(out, target_dim)
}

/// Reduces `space` to `target_dim` columns. Deterministic in all arguments.
pub fn reduce<T: Scalar>(
    space: &FeatureSpace<T>,
    target_dim: usize,
    method: ReduceMethod,
    seed: u64,
) -> Result<FeatureSpace<T>> {
    if target_dim == 0 {
        return Err(Error::Config("target dimension must be positive".into()));
    }
    if target_dim > space.dim() {
        return Err(Error::TargetDimTooLarge {
            target: target_dim,
            dim: space.dim(),
        });
    }
    match method {
        ReduceMethod::Identity => {
            if target_dim != space.dim() {
                return Err(Error::Config(format!(
                    "identity reduction needs target dimension {} to equal the input dimension {}",
                    target_dim,
                    space.dim()
                )));
            }
            Ok(space.clone())
        }
        ReduceMethod::Pca => Pca::fit(space, target_dim)?.transform(space),
        ReduceMethod::RandomProjection => Ok(random_projection(space, target_dim, seed)),
    }
}

/// Reduces each side independently, each fitted on its own data.
pub fn reduce_cospace<T: Scalar>(
    cs: &CoSpace<T>,
    target_dim: usize,
    method: ReduceMethod,
    seed: u64,
) -> Result<CoSpace<T>> {
    let (before, after) = rayon::join(
        || reduce(cs.before(), target_dim, method, seed),
        || reduce(cs.after(), target_dim, method, seed),
    );
    Ok(CoSpace {
        before: before?,
        after: after?,
    })
}
