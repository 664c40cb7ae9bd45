//! Clamped label propagation over a kNN transition matrix, and its double run
//! across the two sides of a Co-Space.

use std::io::Write;

use crate::cospace::CoSpace;
use crate::dataset::{LabelVector, Partition, SampleId};
use crate::error::{Error, Result};
use crate::graph::{build_knn, build_transition, KernelParams, TransitionMatrix};
use crate::scalar::Scalar;

/// Unlabeled rows with less total mass than this after propagation are
/// unreached: no labeled mass flowed into them.
pub const UNREACHED_MASS: f64 = 1e-12;

/// Soft labels `Y_T` for every sample (labeled rows stay clamped).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix<T> {
    ids: Vec<SampleId>,
    num_classes: usize,
    values: Vec<T>,
    labeled: Vec<bool>,
    iterations_run: usize,
}

impl<T: Scalar> SoftLabelMatrix<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn mass(&self, i: usize) -> T {
        self.row(i).iter().copied().sum()
    }

    /// An unlabeled row that received (numerically) no labeled mass.
    pub fn is_unreached(&self, i: usize) -> bool {
        !self.labeled[i] && self.mass(i).to_f64_lossy() < UNREACHED_MASS
    }

    /// Row `i` rescaled to a probability vector; `None` when unreached.
    pub fn normalized(&self, i: usize) -> Option<LabelVector<T>> {
        if self.is_unreached(i) {
            return None;
        }
        LabelVector::normalized(self.row(i))
    }

    /// `id<TAB>p_0<TAB>...<TAB>p_{m-1}` per sample, raw (unnormalized) rows.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.row(i) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Iterates `Y ← P·Y`, then resets labeled rows to their one-hot labels,
/// `iterations` times starting from `Y_0 = [Y^L; 0]`.
pub fn propagate<T: Scalar>(
    p: &TransitionMatrix<T>,
    partition: &Partition,
    iterations: usize,
) -> Result<SoftLabelMatrix<T>> {
    propagate_with_tolerance(p, partition, iterations, None)
}

/// As [`propagate`], optionally stopping early once the largest elementwise
/// change in one iteration falls below `tolerance`.
pub fn propagate_with_tolerance<T: Scalar>(
    p: &TransitionMatrix<T>,
    partition: &Partition,
    iterations: usize,
    tolerance: Option<T>,
) -> Result<SoftLabelMatrix<T>> {
    let n = p.len();
    if partition.len() != n || p.ids().iter().any(|id| !partition.contains(id)) {
        return Err(Error::IdSetMismatch(
            "transition matrix and partition cover different samples".into(),
        ));
    }
    let m = partition.num_classes();

    let clamp: Vec<Option<usize>> = p.ids().iter().map(|id| partition.class_of(id)).collect();
    let mut y = vec![T::zero(); n * m];
    apply_clamp(&mut y, &clamp, m);
    let mut next = vec![T::zero(); n * m];

    let mut run = 0;
    for _ in 0..iterations {
        p.mul_rows(&y, m, &mut next);
        apply_clamp(&mut next, &clamp, m);
        run += 1;
        std::mem::swap(&mut y, &mut next);
        if let Some(tol) = tolerance {
            let delta = y
                .iter()
                .zip(&next)
                .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
            if delta < tol {
                break;
            }
        }
    }

    Ok(SoftLabelMatrix {
        ids: p.ids().to_vec(),
        num_classes: m,
        values: y,
        labeled: clamp.iter().map(Option::is_some).collect(),
        iterations_run: run,
    })
}

fn apply_clamp<T: Scalar>(y: &mut [T], clamp: &[Option<usize>], m: usize) {
    for (i, c) in clamp.iter().enumerate() {
        if let Some(c) = *c {
            let row = &mut y[i * m..(i + 1) * m];
            row.iter_mut().for_each(|v| *v = T::zero());
            row[c] = T::one();
        }
    }
}

/// Graph and propagation settings shared by both Co-Space sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams<T> {
    pub k: usize,
    pub kernel: KernelParams<T>,
    pub iterations: usize,
    pub tolerance: Option<T>,
}

/// Transition matrix for one side: kNN graph plus kernel weights.
pub fn side_transition<T: Scalar>(
    space: &crate::cospace::FeatureSpace<T>,
    params: &PropagationParams<T>,
) -> Result<TransitionMatrix<T>> {
    let knn = build_knn(space, params.k)?;
    build_transition(space, &knn, params.kernel)
}

/// Builds a transition matrix on each side and propagates the same clamped
/// labels through both. Returns `(before, after)`.
pub fn intrinsic_variation<T: Scalar>(
    cs: &CoSpace<T>,
    partition: &Partition,
    params: &PropagationParams<T>,
) -> Result<(SoftLabelMatrix<T>, SoftLabelMatrix<T>)> {
    if cs.before().dim() != cs.after().dim() {
        return Err(Error::ShapeMismatch(format!(
            "co-space sides have dimensions {} and {}",
            cs.before().dim(),
            cs.after().dim()
        )));
    }
    partition.check_covers(cs.before())?;
    let run = |space| -> Result<SoftLabelMatrix<T>> {
        let p = side_transition(space, params)?;
        propagate_with_tolerance(&p, partition, params.iterations, params.tolerance)
    };
    let (b, a) = rayon::join(|| run(cs.before()), || run(cs.after()));
    Ok((b?, a?))
}
