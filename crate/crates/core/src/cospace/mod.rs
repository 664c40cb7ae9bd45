//! Feature spaces, the before/after pair they form, and the sources that
//! supply successive embeddings.

mod reduce;

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{load_features, SampleId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use reduce::{reduce, reduce_cospace, Pca, ReduceMethod};

/// Immutable `n × dim` embedding, one row per sample, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace<T> {
    ids: Vec<SampleId>,
    data: Vec<T>,
    dim: usize,
    index: HashMap<SampleId, usize>,
}

impl<T: Scalar> FeatureSpace<T> {
    pub fn new(ids: Vec<SampleId>, data: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch("dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                line: pos / dim + 2,
                token: data[pos].to_string(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateSampleId(id.to_string()));
            }
        }
        Ok(FeatureSpace {
            ids,
            data,
            dim,
            index,
        })
    }

    /// Builds from per-row vectors; convenient in tests and generators.
    pub fn from_rows(ids: Vec<SampleId>, rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                line: r + 2,
                expected: dim,
                found: rows[r].len(),
            });
        }
        Self::new(ids, rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &SampleId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, id: &SampleId) -> Option<&[T]> {
        self.position(id).map(|i| self.row(i))
    }

    /// Every coordinate multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        FeatureSpace {
            ids: self.ids.clone(),
            data: self.data.iter().map(|&v| v * c).collect(),
            dim: self.dim,
            index: self.index.clone(),
        }
    }

    /// Rows re-ordered to follow `order`, which must be a permutation of the ids.
    pub fn reordered(&self, order: &[SampleId]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::IdSetMismatch(format!(
                "{} ids requested from a space of {}",
                order.len(),
                self.len()
            )));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for id in order {
            let i = self.position(id).ok_or_else(|| {
                Error::IdSetMismatch(format!("sample `{id}` missing from feature space"))
            })?;
            data.extend_from_slice(self.row(i));
        }
        Self::new(order.to_vec(), data, self.dim)
    }

    /// Same ids, different coordinates (used by reducers).
    pub(crate) fn with_data(&self, data: Vec<T>, dim: usize) -> Self {
        debug_assert_eq!(data.len(), self.len() * dim);
        FeatureSpace {
            ids: self.ids.clone(),
            data,
            dim,
            index: self.index.clone(),
        }
    }
}

/// Two embeddings of one sample set, rows aligned by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct CoSpace<T> {
    before: FeatureSpace<T>,
    after: FeatureSpace<T>,
}

impl<T: Scalar> CoSpace<T> {
    pub fn before(&self) -> &FeatureSpace<T> {
        &self.before
    }

    pub fn after(&self) -> &FeatureSpace<T> {
        &self.after
    }

    pub fn len(&self) -> usize {
        self.before.len()
    }

    pub fn is_empty(&self) -> bool {
        self.before.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        self.before.ids()
    }

    pub fn into_parts(self) -> (FeatureSpace<T>, FeatureSpace<T>) {
        (self.before, self.after)
    }
}

/// Pairs two spaces over the same id set; `after` is re-ordered to follow
/// `before`'s row order.
pub fn make_cospace<T: Scalar>(
    before: FeatureSpace<T>,
    after: FeatureSpace<T>,
) -> Result<CoSpace<T>> {
    if before.len() != after.len() {
        return Err(Error::IdSetMismatch(format!(
            "before has {} samples, after has {}",
            before.len(),
            after.len()
        )));
    }
    let after = if before.ids() == after.ids() {
        after
    } else {
        after.reordered(before.ids())?
    };
    Ok(CoSpace { before, after })
}

/// Source of the successive embeddings `f_t(D)`, one per call.
pub trait FeatureProvider<T: Scalar> {
    /// The next space, or `None` once exhausted.
    fn next_space(&mut self) -> Result<Option<FeatureSpace<T>>>;
}

/// Spaces held in memory, yielded in order.
#[derive(Debug, Clone)]
pub struct InMemoryProvider<T> {
    spaces: VecDeque<FeatureSpace<T>>,
}

impl<T: Scalar> InMemoryProvider<T> {
    pub fn new(spaces: impl IntoIterator<Item = FeatureSpace<T>>) -> Self {
        InMemoryProvider {
            spaces: spaces.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.spaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spaces.is_empty()
    }

    pub fn spaces(&self) -> impl Iterator<Item = &FeatureSpace<T>> {
        self.spaces.iter()
    }
}

impl<T: Scalar> FeatureProvider<T> for InMemoryProvider<T> {
    fn next_space(&mut self) -> Result<Option<FeatureSpace<T>>> {
        Ok(self.spaces.pop_front())
    }
}

/// Feature files listed in a manifest, one path per line, loaded lazily.
/// Relative paths resolve against the manifest's directory; blank lines and
/// `#` comments are skipped.
#[derive(Debug, Clone)]
pub struct FileSequenceProvider {
    paths: VecDeque<PathBuf>,
}

impl FileSequenceProvider {
    pub fn new(paths: impl IntoIterator<Item = PathBuf>) -> Self {
        FileSequenceProvider {
            paths: paths.into_iter().collect(),
        }
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let paths = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = Path::new(l);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            });
        Ok(Self::new(paths))
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.paths.iter()
    }
}

impl<T: Scalar> FeatureProvider<T> for FileSequenceProvider {
    fn next_space(&mut self) -> Result<Option<FeatureSpace<T>>> {
        match self.paths.pop_front() {
            Some(p) => load_features(&p).map(Some),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> SampleId {
        SampleId::new(s).unwrap()
    }

    fn space(ids: &[&str], rows: &[Vec<f64>]) -> FeatureSpace<f64> {
        FeatureSpace::from_rows(ids.iter().map(|s| sid(s)).collect(), rows).unwrap()
    }

    #[test]
    fn identical_spaces_pair_up() {
        let a = space(&["a", "b"], &[vec![0.0, 1.0], vec![2.0, 3.0]]);
        let cs = make_cospace(a.clone(), a.clone()).unwrap();
        assert_eq!(cs.before(), cs.after());
    }

    #[test]
    fn after_rows_are_aligned_by_id() {
        let a = space(&["a", "b", "c"], &[vec![0.0], vec![1.0], vec![2.0]]);
        let b = space(&["c", "a", "b"], &[vec![20.0], vec![0.5], vec![10.0]]);
        let cs = make_cospace(a, b).unwrap();
        assert_eq!(cs.after().ids(), cs.before().ids());
        assert_eq!(cs.after().data(), &[0.5, 10.0, 20.0]);
    }

    #[test]
    fn missing_id_is_rejected() {
        let a = space(&["a", "b"], &[vec![0.0], vec![1.0]]);
        let b = space(&["a"], &[vec![0.0]]);
        assert!(matches!(
            make_cospace(a.clone(), b).unwrap_err(),
            Error::IdSetMismatch(_)
        ));
        let c = space(&["a", "z"], &[vec![0.0], vec![1.0]]);
        assert!(matches!(
            make_cospace(a, c).unwrap_err(),
            Error::IdSetMismatch(_)
        ));
    }

    #[test]
    fn rejects_non_finite_and_duplicates() {
        assert!(FeatureSpace::new(vec![sid("a")], vec![f64::NAN], 1).is_err());
        assert!(FeatureSpace::new(vec![sid("a"), sid("a")], vec![1.0, 2.0], 1).is_err());
    }

    #[test]
    fn in_memory_provider_yields_in_order() {
        let a = space(&["a"], &[vec![0.0]]);
        let b = space(&["a"], &[vec![1.0]]);
        let mut p = InMemoryProvider::new([a.clone(), b.clone()]);
        assert_eq!(p.next_space().unwrap(), Some(a));
        assert_eq!(p.next_space().unwrap(), Some(b));
        assert_eq!(p.next_space().unwrap(), None);
    }
}
