//! Small dense kernels on row-major square matrices: Cholesky log-determinant,
//! a cyclic Jacobi symmetric eigensolver (eigenvectors), and Householder
//! tridiagonalization with implicit QL (eigenvalues only).

use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` (row-major, `A = L Lᵀ`).
///
/// Returns `None` when a pivot is non-positive or non-finite, i.e. the matrix
/// is not numerically positive definite.
pub fn cholesky<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let pivot = d.sqrt();
        l[j * n + j] = pivot;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / pivot;
        }
    }
    Some(l)
}

/// Natural log of the determinant of a symmetric positive-definite matrix,
/// `2 Σ ln L_jj`. `None` if the Cholesky factorization breaks down.
pub fn cholesky_log_det<T: Scalar>(a: &[T], n: usize) -> Option<T> {
    let l = cholesky(a, n)?;
    let half = (0..n).fold(T::zero(), |acc, j| acc + l[j * n + j].ln());
    Some(half + half)
}

/// `L⁻¹ M L⁻ᵀ` for a Cholesky factor `L` and symmetric `M`, symmetrized.
pub fn whiten<T: Scalar>(l: &[T], m: &[T], n: usize) -> Vec<T> {
    // X = L⁻¹ M, column by column via forward substitution.
    let mut x = m.to_vec();
    forward_substitute(l, &mut x, n);
    // Y = L⁻¹ Xᵀ, so Y = L⁻¹ M L⁻ᵀ.
    let mut y = transpose(&x, n);
    forward_substitute(l, &mut y, n);
    for i in 0..n {
        for j in 0..i {
            let s = (y[i * n + j] + y[j * n + i]) / (T::one() + T::one());
            y[i * n + j] = s;
            y[j * n + i] = s;
        }
    }
    y
}

/// Solves `L X = B` in place (`B` row-major `n × n`).
fn forward_substitute<T: Scalar>(l: &[T], b: &mut [T], n: usize) {
    for i in 0..n {
        let (done, rest) = b.split_at_mut(i * n);
        let row = &mut rest[..n];
        for k in 0..i {
            let lik = l[i * n + k];
            if lik != T::zero() {
                for (r, &bk) in row.iter_mut().zip(&done[k * n..(k + 1) * n]) {
                    *r = *r - lik * bk;
                }
            }
        }
        let d = l[i * n + i];
        row.iter_mut().for_each(|r| *r = *r / d);
    }
}

fn transpose<T: Scalar>(a: &[T], n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues, descending.
    pub values: Vec<T>,
    /// Row-major `n × n`; row `k` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<T>,
    pub n: usize,
}

impl<T: Scalar> SymmetricEigen<T> {
    pub fn vector(&self, k: usize) -> &[T] {
        &self.vectors[k * self.n..(k + 1) * self.n]
    }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal mass is at rounding level.
/// Eigenpairs come back sorted by descending eigenvalue, ties by original
/// diagonal position.
pub fn symmetric_eigen<T: Scalar>(a: &[T], n: usize) -> SymmetricEigen<T> {
    jacobi(a, n, true)
}

/// Eigenvalues only, descending. Householder reduction to tridiagonal form
/// followed by implicit-shift QL; several times cheaper than Jacobi.
pub fn symmetric_eigenvalues<T: Scalar>(a: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let (mut d, mut e) = tridiagonalize(a, n);
    if !tridiagonal_ql(&mut d, &mut e) {
        return jacobi(a, n, false).values;
    }
    d.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    d
}

/// Diagonal `d` and sub-diagonal `e` (`e[i]` couples `i−1` and `i`) of a
/// similar tridiagonal matrix.
fn tridiagonalize<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut a = a.to_vec();
    let mut e = vec![T::zero(); n];
    for i in (1..n).rev() {
        let l = i - 1;
        let row = i * n;
        let scale: T = (0..=l).map(|k| a[row + k].abs()).sum();
        if l == 0 || scale == T::zero() {
            e[i] = a[row + l];
            continue;
        }
        let mut h = T::zero();
        for k in 0..=l {
            a[row + k] = a[row + k] / scale;
            h = h + a[row + k] * a[row + k];
        }
        let f = a[row + l];
        let g = if f >= T::zero() { -h.sqrt() } else { h.sqrt() };
        e[i] = scale * g;
        h = h - f * g;
        a[row + l] = f - g;
        let mut f = T::zero();
        for j in 0..=l {
            let mut g = T::zero();
            for k in 0..=j {
                g = g + a[j * n + k] * a[row + k];
            }
            for k in (j + 1)..=l {
                g = g + a[k * n + j] * a[row + k];
            }
            e[j] = g / h;
            f = f + e[j] * a[row + j];
        }
        let hh = f / (h + h);
        for j in 0..=l {
            let f = a[row + j];
            let g = e[j] - hh * f;
            e[j] = g;
            for k in 0..=j {
                a[j * n + k] = a[j * n + k] - (f * e[k] + g * a[row + k]);
            }
        }
    }
    let d = (0..n).map(|i| a[i * n + i]).collect();
    (d, e)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix; `d` receives the
/// eigenvalues. Returns `false` if some eigenvalue fails to converge.
fn tridiagonal_ql<T: Scalar>(d: &mut [T], e: &mut [T]) -> bool {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let two = T::one() + T::one();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return false;
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + if g >= T::zero() { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] = d[i + 1] - p;
                    e[m] = T::zero();
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] = d[l] - p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    true
}

fn jacobi<T: Scalar>(a: &[T], n: usize, want_vectors: bool) -> SymmetricEigen<T> {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    // Column-major accumulation of rotations: column k of `v` is eigenvector k.
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }

    let total: T = m.iter().map(|&x| x * x).sum();
    let tol = T::epsilon() * T::epsilon() * total;

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + m[p * n + q] * m[p * n + q];
            }
        }
        if off <= tol || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (apq + apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                if !want_vectors {
                    continue;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let mut vectors = Vec::with_capacity(if want_vectors { n * n } else { 0 });
    for &k in order.iter().filter(|_| want_vectors) {
        vectors.extend((0..n).map(|i| v[i * n + k]));
    }
    SymmetricEigen { values, vectors, n }
}

#[inline]
pub(crate) fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// [`squared_distance`], or `None` once the running sum exceeds `bound`.
/// Accumulates in the same order, so accepted values are bit-identical.
#[inline]
pub(crate) fn squared_distance_within<T: Scalar>(a: &[T], b: &[T], bound: Option<T>) -> Option<T> {
    let Some(bound) = bound else {
        return Some(squared_distance(a, b));
    };
    let n = a.len();
    let b = &b[..n];
    let mut acc = T::zero();
    let mut start = 0;
    while start < n {
        let end = (start + 4).min(n);
        for t in start..end {
            let d = a[t] - b[t];
            acc = acc + d * d;
        }
        if acc > bound {
            return None;
        }
        start = end;
    }
    Some(acc)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
