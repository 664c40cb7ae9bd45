//! The fused confidence criterion, its identity-matrix ablation, threshold
//! and cap selection, and the iterative mining loop.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cospace::{make_cospace, reduce_cospace, CoSpace, FeatureProvider, ReduceMethod};
use crate::dataset::{LabelVector, Partition, SampleId};
use crate::error::{Error, Result};
use crate::graph::KernelParams;
use crate::propagation::{intrinsic_variation, PropagationParams};
use crate::scalar::Scalar;
use crate::variation::{
    transformation_matrix_at, LabeledIndex, MemberMode, TransformationMatrix, VariationParams,
};

/// Which scoring rule ranks unlabeled samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Cosine of the `√M`-reweighted soft labels.
    #[default]
    Full,
    /// Plain cosine of the soft labels (`M` replaced by the identity).
    Ablation,
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Criterion::Full),
            "ablation" => Ok(Criterion::Ablation),
            other => Err(Error::Config(format!("unknown criterion `{other}`"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Full => "full",
            Criterion::Ablation => "ablation",
        })
    }
}

/// Why an unlabeled sample produced no score this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unminable {
    /// No labeled mass reached it on one of the sides.
    Unreached,
    /// No class is shared by its labeled neighborhoods before and after.
    EmptySupport,
    /// Its soft labels put no mass on the supported classes.
    ZeroMass,
}

impl fmt::Display for Unminable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unminable::Unreached => "unreached by label propagation",
            Unminable::EmptySupport => "empty class support",
            Unminable::ZeroMass => "no soft-label mass on supported classes",
        })
    }
}

/// Score and pseudo-label of one unlabeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Confidence<T> {
    pub sample: SampleId,
    /// `r_bᵀ r_a`, in `[0, 1]`.
    pub score: T,
    /// `r_b ∘ r_a`; sums to `score`.
    pub contribution: Vec<T>,
    /// Argmax of `contribution`, lowest class on ties.
    pub pseudo_label: usize,
    pub criterion: Criterion,
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn unit<T: Scalar>(v: Vec<T>) -> Option<Vec<T>> {
    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if !(norm > T::zero()) {
        return None;
    }
    Some(v.into_iter().map(|x| x / norm).collect())
}

fn from_unit_vectors<T: Scalar>(
    sample: SampleId,
    rb: &[T],
    ra: &[T],
    label: usize,
    criterion: Criterion,
) -> Confidence<T> {
    let contribution: Vec<T> = rb.iter().zip(ra).map(|(&b, &a)| b * a).collect();
    let score = contribution
        .iter()
        .copied()
        .sum::<T>()
        .max(T::zero())
        .min(T::one());
    Confidence {
        sample,
        score,
        contribution,
        pseudo_label: label,
        criterion,
    }
}

/// Full criterion: `r = √M·y / |√M·y|` per side, score `r_bᵀ r_a`, label
/// `argmax(r_b ∘ r_a)`.
pub fn confidence<T: Scalar>(
    sample: SampleId,
    y_b: &LabelVector<T>,
    y_a: &LabelVector<T>,
    m: &TransformationMatrix<T>,
) -> std::result::Result<Confidence<T>, Unminable> {
    if m.is_empty() {
        return Err(Unminable::EmptySupport);
    }
    debug_assert_eq!(y_b.num_classes(), m.num_classes());
    let weigh = |y: &LabelVector<T>| -> Vec<T> {
        y.as_slice()
            .iter()
            .zip(m.diag())
            .map(|(&p, &k)| k.sqrt() * p)
            .collect()
    };
    let rb = unit(weigh(y_b)).ok_or(Unminable::ZeroMass)?;
    let ra = unit(weigh(y_a)).ok_or(Unminable::ZeroMass)?;
    let v: Vec<T> = rb.iter().zip(&ra).map(|(&b, &a)| b * a).collect();
    Ok(from_unit_vectors(
        sample,
        &rb,
        &ra,
        argmax(&v),
        Criterion::Full,
    ))
}

/// Ablation criterion: cosine similarity of the raw soft labels, label
/// `argmax(y_b ∘ y_a)`.
pub fn confidence_ablation<T: Scalar>(
    sample: SampleId,
    y_b: &LabelVector<T>,
    y_a: &LabelVector<T>,
) -> std::result::Result<Confidence<T>, Unminable> {
    let rb = unit(y_b.as_slice().to_vec()).ok_or(Unminable::ZeroMass)?;
    let ra = unit(y_a.as_slice().to_vec()).ok_or(Unminable::ZeroMass)?;
    let hadamard: Vec<T> = y_b
        .as_slice()
        .iter()
        .zip(y_a.as_slice())
        .map(|(&b, &a)| b * a)
        .collect();
    Ok(from_unit_vectors(
        sample,
        &rb,
        &ra,
        argmax(&hadamard),
        Criterion::Ablation,
    ))
}

/// Counts of candidates seen and skipped in one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MiningDiagnostics {
    pub candidates: usize,
    pub scored: usize,
    pub unreached: usize,
    pub empty_support: usize,
    pub zero_mass: usize,
}

impl MiningDiagnostics {
    pub fn unminable(&self) -> usize {
        self.unreached + self.empty_support + self.zero_mass
    }

    fn record(&mut self, u: Unminable) {
        match u {
            Unminable::Unreached => self.unreached += 1,
            Unminable::EmptySupport => self.empty_support += 1,
            Unminable::ZeroMass => self.zero_mass += 1,
        }
    }
}

/// Samples selected in one round, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningResult<T> {
    pub selections: Vec<Confidence<T>>,
    pub iteration: usize,
    pub threshold_used: T,
    pub cap_used: usize,
    pub diagnostics: MiningDiagnostics,
}

impl<T: Scalar> MiningResult<T> {
    pub fn new(selections: Vec<Confidence<T>>, iteration: usize, threshold: T, cap: usize) -> Self {
        MiningResult {
            selections,
            iteration,
            threshold_used: threshold,
            cap_used: cap,
            diagnostics: MiningDiagnostics::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn mean_confidence(&self) -> Option<f64> {
        if self.selections.is_empty() {
            return None;
        }
        let total: f64 = self.selections.iter().map(|c| c.score.to_f64_lossy()).sum();
        Some(total / self.selections.len() as f64)
    }
}

/// Keeps scores `≥ th` whose sample is not excluded, best first (ties by
/// ascending id), at most `cap`.
pub fn select<T: Scalar>(
    scores: Vec<Confidence<T>>,
    th: T,
    cap: usize,
    excluded: &BTreeSet<SampleId>,
    iteration: usize,
) -> MiningResult<T> {
    let mut kept: Vec<Confidence<T>> = scores
        .into_iter()
        .filter(|c| c.score >= th && !excluded.contains(&c.sample))
        .collect();
    kept.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.sample.cmp(&b.sample))
    });
    kept.truncate(cap);
    MiningResult::new(kept, iteration, th, cap)
}

/// Every knob of one mining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub num_classes: usize,
    /// Neighbors per sample in the propagation graph.
    pub knn: usize,
    pub mu: f64,
    pub delta: f64,
    pub lp_iters: usize,
    /// Optional early stop on the largest per-iteration change.
    pub lp_tolerance: Option<f64>,
    pub labeled_neighbors: usize,
    pub top_s: usize,
    pub k_weight: f64,
    pub member_mode: MemberMode,
    pub reduce_dim: usize,
    pub reduce_method: ReduceMethod,
    pub threshold: f64,
    pub cap: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub criterion: Criterion,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            num_classes: 0,
            knn: 10,
            mu: 1.0,
            delta: 0.9,
            lp_iters: 50,
            lp_tolerance: None,
            labeled_neighbors: 300,
            top_s: 5,
            k_weight: 1.0,
            member_mode: MemberMode::SideSpecific,
            reduce_dim: 15,
            reduce_method: ReduceMethod::Pca,
            threshold: 0.7,
            cap: 1000,
            max_iterations: 10,
            seed: 0,
            criterion: Criterion::Full,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_classes == 0 {
            return fail("num_classes must be positive");
        }
        if self.knn == 0 {
            return fail("knn must be positive");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return fail("mu must be positive");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return fail("delta must be positive");
        }
        if self.lp_iters == 0 {
            return fail("lp_iters must be positive");
        }
        if self.lp_tolerance.is_some_and(|t| !(t > 0.0)) {
            return fail("lp_tolerance must be positive");
        }
        if self.labeled_neighbors == 0 || self.top_s == 0 {
            return fail("labeled_neighbors and top_s must be positive");
        }
        if !(self.k_weight >= 0.0 && self.k_weight.is_finite()) {
            return fail("k_weight must be non-negative");
        }
        if self.reduce_dim == 0 {
            return fail("reduce_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail("threshold must lie in [0, 1]");
        }
        if self.cap == 0 {
            return fail("cap must be positive");
        }
        Ok(())
    }

    pub fn propagation<T: Scalar>(&self) -> PropagationParams<T> {
        PropagationParams {
            k: self.knn,
            kernel: KernelParams {
                mu: T::of(self.mu),
                delta: T::of(self.delta),
            },
            iterations: self.lp_iters,
            tolerance: self.lp_tolerance.map(T::of),
        }
    }

    pub fn variation<T: Scalar>(&self) -> VariationParams<T> {
        VariationParams {
            top_s: self.top_s,
            n_max: self.labeled_neighbors,
            k_weight: T::of(self.k_weight),
            member_mode: self.member_mode,
        }
    }
}

/// One round: reduce both sides, propagate on each, score every unlabeled
/// sample not in `excluded`, and select.
pub fn mine_iteration<T: Scalar>(
    cs: &CoSpace<T>,
    partition: &Partition,
    cfg: &MiningConfig,
    excluded: &BTreeSet<SampleId>,
    iteration: usize,
) -> Result<MiningResult<T>> {
    cfg.validate()?;
    if cfg.num_classes != partition.num_classes() {
        return Err(Error::Config(format!(
            "config has {} classes, partition has {}",
            cfg.num_classes,
            partition.num_classes()
        )));
    }
    partition.check_covers(cs.before())?;
    let th = T::of(cfg.threshold);
    if partition.unlabeled().is_empty() {
        return Ok(MiningResult::new(Vec::new(), iteration, th, cfg.cap));
    }

    let reduced = reduce_cospace(cs, cfg.reduce_dim, cfg.reduce_method, cfg.seed)?;
    let (yb, ya) = intrinsic_variation(&reduced, partition, &cfg.propagation())?;

    let ids = reduced.ids();
    let rows: Vec<usize> = (0..ids.len())
        .filter(|&i| partition.is_unlabeled(&ids[i]) && !excluded.contains(&ids[i]))
        .collect();

    let before_idx = LabeledIndex::new(reduced.before(), partition);
    let after_idx = LabeledIndex::new(reduced.after(), partition);
    let vparams = cfg.variation::<T>();
    let m = partition.num_classes();

    let outcomes: Vec<Result<std::result::Result<Confidence<T>, Unminable>>> = rows
        .par_iter()
        .map(|&i| {
            let (Some(b), Some(a)) = (yb.normalized(i), ya.normalized(i)) else {
                return Ok(Err(Unminable::Unreached));
            };
            let id = ids[i].clone();
            Ok(match cfg.criterion {
                Criterion::Ablation => confidence_ablation(id, &b, &a),
                Criterion::Full => {
                    let tm = transformation_matrix_at(&before_idx, &after_idx, i, &vparams, m)?;
                    confidence(id, &b, &a, &tm)
                }
            })
        })
        .collect();

    let mut diagnostics = MiningDiagnostics {
        candidates: rows.len(),
        ..Default::default()
    };
    let mut scores = Vec::with_capacity(rows.len());
    for o in outcomes {
        match o? {
            Ok(c) => scores.push(c),
            Err(u) => diagnostics.record(u),
        }
    }
    diagnostics.scored = scores.len();
    if diagnostics.candidates > 0 && diagnostics.scored == 0 {
        log::warn!(
            "iteration {iteration}: all {} candidates unminable ({} unreached, {} empty support, {} zero mass)",
            diagnostics.candidates,
            diagnostics.unreached,
            diagnostics.empty_support,
            diagnostics.zero_mass
        );
    }
    let mut result = select(scores, th, cfg.cap, excluded, iteration);
    result.diagnostics = diagnostics;
    Ok(result)
}

/// Per-iteration results and the final partition of a mining run.
#[derive(Debug, Clone)]
pub struct LoopOutcome<T> {
    pub results: Vec<MiningResult<T>>,
    pub partition: Partition,
}

impl<T: Scalar> LoopOutcome<T> {
    /// Every selected sample across iterations (the accumulated pseudo-labeled set).
    pub fn mined(&self) -> impl Iterator<Item = &Confidence<T>> {
        self.results.iter().flat_map(|r| r.selections.iter())
    }
}

/// Iterates: pair consecutive provider outputs into a Co-Space, mine, move
/// the selections into the labeled pool, and exclude them from later rounds.
/// Stops after `cfg.max_iterations` rounds or when the provider runs dry.
pub fn run_loop<T: Scalar>(
    provider: &mut dyn FeatureProvider<T>,
    initial: Partition,
    cfg: &MiningConfig,
) -> Result<LoopOutcome<T>> {
    run_loop_with(provider, initial, cfg, |_, _| Ok(()))
}

/// [`run_loop`] with a hook called after each round with the result and the
/// augmented partition.
pub fn run_loop_with<T: Scalar>(
    provider: &mut dyn FeatureProvider<T>,
    initial: Partition,
    cfg: &MiningConfig,
    mut on_iteration: impl FnMut(&MiningResult<T>, &Partition) -> Result<()>,
) -> Result<LoopOutcome<T>> {
    cfg.validate()?;
    let mut partition = initial;
    let mut results = Vec::new();
    if cfg.max_iterations == 0 {
        return Ok(LoopOutcome { results, partition });
    }
    let mut previous = provider.next_space()?.ok_or(Error::ProviderTooShort)?;
    partition.check_covers(&previous)?;
    let mut excluded = BTreeSet::new();

    for t in 1..=cfg.max_iterations {
        let Some(current) = provider.next_space()? else {
            if t == 1 {
                return Err(Error::ProviderTooShort);
            }
            break;
        };
        let cs = make_cospace(previous, current)?;
        let result = mine_iteration(&cs, &partition, cfg, &excluded, t)?;
        partition = partition.augment(&result)?;
        excluded.extend(result.selections.iter().map(|c| c.sample.clone()));
        log::info!(
            "iteration {t}: selected {} of {} candidates; labeled pool {}",
            result.len(),
            result.diagnostics.candidates,
            partition.labeled().len()
        );
        on_iteration(&result, &partition)?;
        results.push(result);
        previous = cs.into_parts().1;
    }
    Ok(LoopOutcome { results, partition })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> SampleId {
        SampleId::new(s).unwrap()
    }

    fn lv(v: &[f64]) -> LabelVector<f64> {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_one_hots_score_one() {
        let m = TransformationMatrix::from_distances(vec![(1, 0.2), (0, 0.5)], 3).unwrap();
        let e1 = lv(&[0.0, 1.0, 0.0]);
        let c = confidence(sid("x"), &e1, &e1, &m).unwrap();
        assert!((c.score - 1.0).abs() < 1e-15);
        assert_eq!(c.pseudo_label, 1);
    }

    #[test]
    fn orthogonal_one_hots_score_zero() {
        let m = TransformationMatrix::from_distances(vec![(0, 0.0), (1, 0.0)], 2).unwrap();
        let c = confidence(sid("x"), &lv(&[1.0, 0.0]), &lv(&[0.0, 1.0]), &m).unwrap();
        assert_eq!(c.score, 0.0);
        let r = select(vec![c], 1e-9, 10, &BTreeSet::new(), 1);
        assert!(r.is_empty());
    }

    #[test]
    fn reweighted_example_against_hand_arithmetic() {
        let m = TransformationMatrix::from_diagonal(vec![0.75, 0.25]).unwrap();
        let c = confidence(sid("x"), &lv(&[0.8, 0.2]), &lv(&[0.6, 0.4]), &m).unwrap();
        // r_b ∝ (0.8√0.75, 0.2√0.25), r_a ∝ (0.6√0.75, 0.4√0.25)
        let ub = [0.8 * 0.75f64.sqrt(), 0.2 * 0.5];
        let ua = [0.6 * 0.75f64.sqrt(), 0.4 * 0.5];
        let nb = (ub[0] * ub[0] + ub[1] * ub[1]).sqrt();
        let na = (ua[0] * ua[0] + ua[1] * ua[1]).sqrt();
        let want = (ub[0] * ua[0] + ub[1] * ua[1]) / (nb * na);
        assert!((c.score - want).abs() < 1e-15);
        // The rounded figure 0.97499 quoted for this example is off in the fifth
        // decimal; the exact value is 0.9750002.
        assert!((c.score - 0.9750002110024925).abs() < 1e-12);
        assert!((c.contribution[0] - 0.9236844104234139).abs() < 1e-12);
        assert!((c.contribution[1] - 0.05131580057907856).abs() < 1e-12);
        assert_eq!(c.pseudo_label, 0);
    }

    #[test]
    fn ablation_example() {
        let c = confidence_ablation(sid("x"), &lv(&[0.8, 0.2]), &lv(&[0.6, 0.4])).unwrap();
        let want = 0.56 / (0.68f64.sqrt() * 0.52f64.sqrt());
        assert!((c.score - want).abs() < 1e-15);
        assert!((c.score - 0.9417419115948376).abs() < 1e-12);
        assert_eq!(c.pseudo_label, 0);
        let same = confidence_ablation(sid("x"), &lv(&[0.3, 0.7]), &lv(&[0.3, 0.7])).unwrap();
        assert!((same.score - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mass_outside_support_is_unminable() {
        let m = TransformationMatrix::from_distances(vec![(0, 0.0)], 2).unwrap();
        let err = confidence(sid("x"), &lv(&[0.0, 1.0]), &lv(&[0.5, 0.5]), &m).unwrap_err();
        assert_eq!(err, Unminable::ZeroMass);
        let empty = TransformationMatrix::from_distances(vec![], 2).unwrap();
        let err = confidence(sid("x"), &lv(&[0.5, 0.5]), &lv(&[0.5, 0.5]), &empty).unwrap_err();
        assert_eq!(err, Unminable::EmptySupport);
    }

    #[test]
    fn argmax_ties_take_lowest_class() {
        let m = TransformationMatrix::from_diagonal(vec![0.5, 0.5]).unwrap();
        let c = confidence(sid("x"), &lv(&[0.5, 0.5]), &lv(&[0.5, 0.5]), &m).unwrap();
        assert_eq!(c.pseudo_label, 0);
    }

    fn scored(id: &str, score: f64) -> Confidence<f64> {
        Confidence {
            sample: sid(id),
            score,
            contribution: vec![score],
            pseudo_label: 0,
            criterion: Criterion::Full,
        }
    }

    #[test]
    fn select_orders_and_caps() {
        let scores: Vec<_> = (0..1500)
            .map(|i| scored(&format!("s{i:04}"), 0.9 + (i % 97) as f64 * 1e-4))
            .collect();
        let r = select(scores.clone(), 0.8, 1000, &BTreeSet::new(), 2);
        assert_eq!(r.len(), 1000);
        let floor = r.selections.last().unwrap().score;
        let above = scores.iter().filter(|c| c.score > floor).count();
        assert!(above <= 1000);
        assert!(r
            .selections
            .windows(2)
            .all(|w| w[0].score > w[1].score
                || (w[0].score == w[1].score && w[0].sample < w[1].sample)));
    }

    #[test]
    fn select_threshold_and_sift() {
        let scores = vec![scored("a", 0.99), scored("b", 0.5), scored("c", 0.8)];
        assert!(select(scores.clone(), 0.995, 10, &BTreeSet::new(), 1).is_empty());
        let excluded = BTreeSet::from([sid("a")]);
        let r = select(scores, 0.6, 10, &excluded, 1);
        assert_eq!(r.selections.len(), 1);
        assert_eq!(r.selections[0].sample, sid("c"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = MiningConfig {
            num_classes: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
        cfg.threshold = 1.5;
        assert!(cfg.validate().is_err());
        cfg.threshold = 0.5;
        cfg.cap = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn criterion_names() {
        assert_eq!("full".parse::<Criterion>().unwrap(), Criterion::Full);
        assert_eq!(
            "ablation".parse::<Criterion>().unwrap(),
            Criterion::Ablation
        );
        assert!("cosine".parse::<Criterion>().is_err());
    }
}
