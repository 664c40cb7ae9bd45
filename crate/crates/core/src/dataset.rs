//! Sample bookkeeping: identifiers, label vectors, labeled/unlabeled
//! partitions, and the text formats for features, labels and pseudo-labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::cospace::FeatureSpace;
use crate::error::{Error, Result};
use crate::mining::MiningResult;
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &str = "#cospace-features v1";

/// Opaque per-sample token. Ordering is byte-lexicographic and is the
/// tie-break used everywhere a deterministic order is needed.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId(Arc<str>);

impl SampleId {
    pub fn new(id: impl AsRef<str>) -> Result<Self> {
        let id = id.as_ref();
        if id.is_empty() || id.chars().any(|c| c == '\t' || c == '\n' || c == '\r') {
            return Err(Error::InvalidSampleId(id.to_string()));
        }
        Ok(SampleId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

/// A probability vector over `m` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector<T>(Vec<T>);

impl<T: Scalar> LabelVector<T> {
    /// Validates non-negativity and unit mass (within 1e-9).
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidLabelVector("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(Error::InvalidLabelVector(
                "entries must be finite and non-negative".into(),
            ));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs().to_f64_lossy()
            > 1e-9_f64.max(T::epsilon().to_f64_lossy() * 16.0)
        {
            return Err(Error::InvalidLabelVector(format!("mass {total} != 1")));
        }
        Ok(LabelVector(probs))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidLabelVector(format!(
                "class {class} >= {num_classes}"
            )));
        }
        let mut v = vec![T::zero(); num_classes];
        v[class] = T::one();
        Ok(LabelVector(v))
    }

    /// Rescales a non-negative vector to unit mass; `None` for zero mass.
    pub fn normalized(raw: &[T]) -> Option<Self> {
        let total: T = raw.iter().copied().sum();
        if !(total > T::zero()) {
            return None;
        }
        Some(LabelVector(raw.iter().map(|&p| p / total).collect()))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

/// Where a labeled-pool entry came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelOrigin {
    GroundTruth,
    Pseudo { iteration: usize, confidence: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledEntry {
    pub class: usize,
    pub origin: LabelOrigin,
}

/// Labeled pool plus unlabeled pool over a fixed sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    labeled: BTreeMap<SampleId, LabeledEntry>,
    unlabeled: BTreeSet<SampleId>,
    num_classes: usize,
}

impl Partition {
    /// Joins ground-truth labels against the full sample set; every id not
    /// labeled becomes unlabeled.
    pub fn new<'a>(
        all_ids: impl IntoIterator<Item = &'a SampleId>,
        labels: &BTreeMap<SampleId, usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut universe = HashSet::new();
        let mut unlabeled = BTreeSet::new();
        for id in all_ids {
            if !universe.insert(id) {
                return Err(Error::DuplicateSampleId(id.to_string()));
            }
            if !labels.contains_key(id) {
                unlabeled.insert(id.clone());
            }
        }
        if let Some(missing) = labels.keys().find(|id| !universe.contains(id)) {
            return Err(Error::UnknownSampleId(missing.to_string()));
        }
        let mut labeled = BTreeMap::new();
        for (id, &class) in labels {
            if class >= num_classes {
                return Err(Error::ClassOutOfRange {
                    id: id.to_string(),
                    class,
                    num_classes,
                });
            }
            labeled.insert(
                id.clone(),
                LabeledEntry {
                    class,
                    origin: LabelOrigin::GroundTruth,
                },
            );
        }
        Ok(Partition {
            labeled,
            unlabeled,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labeled(&self) -> &BTreeMap<SampleId, LabeledEntry> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_of(&self, id: &SampleId) -> Option<usize> {
        self.labeled.get(id).map(|e| e.class)
    }

    pub fn is_unlabeled(&self, id: &SampleId) -> bool {
        self.unlabeled.contains(id)
    }

    pub fn contains(&self, id: &SampleId) -> bool {
        self.labeled.contains_key(id) || self.unlabeled.contains(id)
    }

    pub fn label_vector<T: Scalar>(&self, id: &SampleId) -> Option<LabelVector<T>> {
        let class = self.class_of(id)?;
        LabelVector::one_hot(class, self.num_classes).ok()
    }

    /// Moves every selection into the labeled pool as a hard pseudo-label.
    /// Returns a new partition; `self` is untouched.
    pub fn augment<T: Scalar>(&self, selections: &MiningResult<T>) -> Result<Partition> {
        let mut next = self.clone();
        for c in &selections.selections {
            if next.labeled.contains_key(&c.sample) {
                return Err(Error::AlreadyLabeled(c.sample.to_string()));
            }
            if !next.unlabeled.remove(&c.sample) {
                return Err(Error::UnknownSampleId(c.sample.to_string()));
            }
            if c.pseudo_label >= self.num_classes {
                return Err(Error::ClassOutOfRange {
                    id: c.sample.to_string(),
                    class: c.pseudo_label,
                    num_classes: self.num_classes,
                });
            }
            next.labeled.insert(
                c.sample.clone(),
                LabeledEntry {
                    class: c.pseudo_label,
                    origin: LabelOrigin::Pseudo {
                        iteration: selections.iteration,
                        confidence: c.score.to_f64_lossy(),
                    },
                },
            );
        }
        Ok(next)
    }

    /// Checks that this partition covers exactly the ids of `space`.
    pub fn check_covers<T: Scalar>(&self, space: &FeatureSpace<T>) -> Result<()> {
        if space.len() != self.len() {
            return Err(Error::IdSetMismatch(format!(
                "feature space has {} samples, partition has {}",
                space.len(),
                self.len()
            )));
        }
        for id in space.ids() {
            if !self.contains(id) {
                return Err(Error::IdSetMismatch(format!(
                    "sample `{id}` missing from partition"
                )));
            }
        }
        Ok(())
    }
}

/// Functional alias for [`Partition::augment`].
pub fn augment<T: Scalar>(
    partition: &Partition,
    selections: &MiningResult<T>,
) -> Result<Partition> {
    partition.augment(selections)
}

// ---------------------------------------------------------------------------
// Feature files

/// Parses the canonical feature format:
///
/// ```text
/// #cospace-features v1 n=<n> d=<d>
/// id<TAB>f1<TAB>...<TAB>fd
/// ```
pub fn parse_features<T: Scalar>(text: &str) -> Result<FeatureSpace<T>> {
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let (n, d) = parse_header(header)?;

    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    let mut seen = HashSet::with_capacity(n);
    let mut line_no = 1;
    for line in lines {
        line_no += 1;
        if line.is_empty() {
            continue;
        }
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut fields = line.split('\t');
        let id = SampleId::new(fields.next().unwrap_or("")).map_err(|_| Error::MalformedRow {
            line: line_no,
            reason: "missing or invalid sample id".into(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSampleId(id.to_string()));
        }
        let values: Vec<&str> = fields.collect();
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                line: line_no,
                expected: d,
                found: values.len(),
            });
        }
        for token in values {
            let v: T = token.trim().parse().map_err(|_| Error::MalformedRow {
                line: line_no,
                reason: format!("cannot parse `{token}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    line: line_no,
                    token: token.to_string(),
                });
            }
            data.push(v);
        }
        ids.push(id);
    }
    if ids.len() != n {
        return Err(Error::MalformedHeader {
            line: 1,
            reason: format!("header declares n={n} but {} rows follow", ids.len()),
        });
    }
    FeatureSpace::new(ids, data, d)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let bad = |reason: &str| Error::MalformedHeader {
        line: 1,
        reason: reason.to_string(),
    };
    let rest = header
        .strip_prefix(FEATURE_MAGIC)
        .ok_or_else(|| bad("expected `#cospace-features v1 n=<n> d=<d>`"))?;
    let mut n = None;
    let mut d = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| bad("n is not an integer"))?);
        } else if let Some(v) = tok.strip_prefix("d=") {
            d = Some(v.parse::<usize>().map_err(|_| bad("d is not an integer"))?);
        } else {
            return Err(bad(&format!("unexpected token `{tok}`")));
        }
    }
    let n = n.ok_or_else(|| bad("missing n="))?;
    let d = d.ok_or_else(|| bad("missing d="))?;
    if d == 0 {
        return Err(bad("d must be positive"));
    }
    Ok((n, d))
}

pub fn load_features<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureSpace<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text)
}

/// Canonical serialization; floats use the shortest round-trip decimal form,
/// so `format_features(parse_features(s)) == s` for canonical `s`.
pub fn format_features<T: Scalar>(space: &FeatureSpace<T>) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{FEATURE_MAGIC} n={} d={}\n",
        space.len(),
        space.dim()
    ));
    for (i, id) in space.ids().iter().enumerate() {
        out.push_str(id.as_str());
        for v in space.row(i) {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn save_features<T: Scalar>(space: &FeatureSpace<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_features(space)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Label files

/// Parses `id<TAB>class` lines into a class map, validating the range.
pub fn parse_labels(text: &str, num_classes: usize) -> Result<BTreeMap<SampleId, usize>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = SampleId::new(fields.next().unwrap_or("")).map_err(|_| Error::MalformedRow {
            line: line_no,
            reason: "missing or invalid sample id".into(),
        })?;
        let class_tok = fields.next().ok_or_else(|| Error::MalformedRow {
            line: line_no,
            reason: "missing class index".into(),
        })?;
        if fields.next().is_some() {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: "expected exactly two fields".into(),
            });
        }
        let class: usize = class_tok.trim().parse().map_err(|_| Error::MalformedRow {
            line: line_no,
            reason: format!("class index `{class_tok}` is not a non-negative integer"),
        })?;
        if class >= num_classes {
            return Err(Error::ClassOutOfRange {
                id: id.to_string(),
                class,
                num_classes,
            });
        }
        if out.insert(id.clone(), class).is_some() {
            return Err(Error::DuplicateSampleId(id.to_string()));
        }
    }
    Ok(out)
}

pub fn load_labels(
    path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<BTreeMap<SampleId, usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, num_classes)
}

pub fn format_labels(labels: &BTreeMap<SampleId, usize>) -> String {
    let mut out = String::new();
    for (id, class) in labels {
        out.push_str(&format!("{id}\t{class}\n"));
    }
    out
}

/// Writes `id<TAB>class<TAB>confidence<TAB>iteration`, one line per selection,
/// in selection order.
pub fn write_pseudo_labels<T: Scalar>(
    mut w: impl Write,
    result: &MiningResult<T>,
) -> std::io::Result<()> {
    for c in &result.selections {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            c.sample, c.pseudo_label, c.score, result.iteration
        )?;
    }
    Ok(())
}

/// One parsed pseudo-label line.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelRow {
    pub sample: SampleId,
    pub class: usize,
    pub confidence: f64,
    pub iteration: usize,
}

pub fn parse_pseudo_labels(text: &str) -> Result<Vec<PseudoLabelRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::MalformedRow {
            line: i + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected id, class, confidence, iteration"));
        }
        rows.push(PseudoLabelRow {
            sample: SampleId::new(f[0]).map_err(|_| bad("invalid sample id"))?,
            class: f[1].parse().map_err(|_| bad("invalid class index"))?,
            confidence: f[2].parse().map_err(|_| bad("invalid confidence"))?,
            iteration: f[3].parse().map_err(|_| bad("invalid iteration"))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::{Confidence, Criterion, MiningResult};

    fn sid(s: &str) -> SampleId {
        SampleId::new(s).unwrap()
    }

    #[test]
    fn parses_small_feature_file() {
        let text = "#cospace-features v1 n=3 d=2\na\t0\t1\nb\t1.5\t-2\nc\t3\t4e-3\n";
        let fs: FeatureSpace<f64> = parse_features(text).unwrap();
        assert_eq!(fs.len(), 3);
        assert_eq!(fs.dim(), 2);
        assert_eq!(fs.row(1), &[1.5, -2.0]);
        assert_eq!(fs.ids()[2].as_str(), "c");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let text = "#cospace-features v1 n=2 d=2\na\t0\t1\nb\t1\t2\t3\n";
        let err = parse_features::<f64>(text).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                line: 3,
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn rejects_nan() {
        let text = "#cospace-features v1 n=1 d=2\na\tNaN\t1\n";
        assert!(matches!(
            parse_features::<f64>(text).unwrap_err(),
            Error::NonFinite { .. }
        ));
        let text = "#cospace-features v1 n=1 d=1\na\tinf\n";
        assert!(matches!(
            parse_features::<f64>(text).unwrap_err(),
            Error::NonFinite { .. }
        ));
    }

    #[test]
    fn rejects_bad_header_and_duplicates() {
        assert!(matches!(
            parse_features::<f64>("#features n=1 d=1\na\t1\n").unwrap_err(),
            Error::MalformedHeader { .. }
        ));
        assert!(matches!(
            parse_features::<f64>("#cospace-features v1 n=1\na\t1\n").unwrap_err(),
            Error::MalformedHeader { .. }
        ));
        assert!(matches!(
            parse_features::<f64>("#cospace-features v1 n=3 d=1\na\t1\n").unwrap_err(),
            Error::MalformedHeader { .. }
        ));
        assert!(matches!(
            parse_features::<f64>("#cospace-features v1 n=2 d=1\na\t1\na\t2\n").unwrap_err(),
            Error::DuplicateSampleId(_)
        ));
    }

    #[test]
    fn label_row_is_one_hot() {
        let labels = parse_labels("img7\t3\n", 5).unwrap();
        assert_eq!(labels[&sid("img7")], 3);
        let v = LabelVector::<f64>::one_hot(3, 5).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            parse_labels("img7\t5\n", 5).unwrap_err(),
            Error::ClassOutOfRange { class: 5, .. }
        ));
        assert!(matches!(
            parse_labels("a\t1\na\t2\n", 5).unwrap_err(),
            Error::DuplicateSampleId(_)
        ));
    }

    #[test]
    fn empty_label_file_gives_all_unlabeled() {
        let labels = parse_labels("", 4).unwrap();
        assert!(labels.is_empty());
        let ids = [sid("a"), sid("b")];
        let p = Partition::new(ids.iter(), &labels, 4).unwrap();
        assert_eq!(p.unlabeled().len(), 2);
    }

    #[test]
    fn unknown_label_id_rejected_on_join() {
        let mut labels = BTreeMap::new();
        labels.insert(sid("zzz"), 0);
        let ids = [sid("a")];
        assert!(matches!(
            Partition::new(ids.iter(), &labels, 2).unwrap_err(),
            Error::UnknownSampleId(_)
        ));
    }

    #[test]
    fn label_vector_validation() {
        assert!(LabelVector::new(vec![0.5f64, 0.5]).is_ok());
        assert!(LabelVector::new(vec![0.5f64, 0.6]).is_err());
        assert!(LabelVector::new(vec![-0.5f64, 1.5]).is_err());
        assert!(LabelVector::<f64>::normalized(&[0.0, 0.0]).is_none());
    }

    fn pick(id: &str, class: usize) -> Confidence<f64> {
        Confidence {
            sample: sid(id),
            score: 0.9,
            contribution: vec![0.9, 0.0],
            pseudo_label: class,
            criterion: Criterion::Full,
        }
    }

    fn partition_10_90() -> Partition {
        let ids: Vec<SampleId> = (0..100).map(|i| sid(&format!("s{i:03}"))).collect();
        let labels: BTreeMap<SampleId, usize> =
            ids.iter().take(10).map(|id| (id.clone(), 0)).collect();
        Partition::new(ids.iter(), &labels, 2).unwrap()
    }

    #[test]
    fn augment_moves_selections() {
        let p = partition_10_90();
        let sel: Vec<_> = (50..55).map(|i| pick(&format!("s{i:03}"), 1)).collect();
        let r = MiningResult::new(sel, 1, 0.5, 100);
        let q = p.augment(&r).unwrap();
        assert_eq!(q.labeled().len(), 15);
        assert_eq!(q.unlabeled().len(), 85);
        assert_eq!(q.class_of(&sid("s050")), Some(1));
        assert!(matches!(
            q.labeled()[&sid("s050")].origin,
            LabelOrigin::Pseudo { iteration: 1, .. }
        ));
        // original untouched
        assert_eq!(p.labeled().len(), 10);
    }

    #[test]
    fn augment_empty_is_identity() {
        let p = partition_10_90();
        let r = MiningResult::new(Vec::new(), 1, 0.5, 100);
        assert_eq!(p.augment(&r).unwrap(), p);
    }

    #[test]
    fn augment_rejects_labeled_selection() {
        let p = partition_10_90();
        let r = MiningResult::new(vec![pick("s003", 1)], 1, 0.5, 100);
        assert!(matches!(
            p.augment(&r).unwrap_err(),
            Error::AlreadyLabeled(_)
        ));
    }

    #[test]
    fn pseudo_label_lines() {
        let r = MiningResult::new(vec![pick("s050", 1)], 3, 0.5, 100);
        let mut buf = Vec::new();
        write_pseudo_labels(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "s050\t1\t0.9\t3\n");
        let rows = parse_pseudo_labels(&text).unwrap();
        assert_eq!(rows[0].iteration, 3);
        assert_eq!(rows[0].class, 1);
    }

    #[test]
    fn sample_id_rejects_tabs_and_empty() {
        assert!(SampleId::new("").is_err());
        assert!(SampleId::new("a\tb").is_err());
        assert!(sid("a") < sid("b"));
    }
}
