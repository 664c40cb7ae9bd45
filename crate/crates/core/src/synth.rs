//! Synthetic stand-in for fine-tuning: a seeded generator of successive
//! feature spaces with drifting class geometry, plus the paired
//! full-vs-ablation comparison harness.
//!
//! Each sample keeps one persistent noise offset across all spaces, so a
//! sample moves rigidly with its class center; only the between-class
//! geometry changes from space to space. Three drift sources are layered:
//!
//! * class centers are scaled by `separation_schedule[t]`;
//! * each center additionally performs a random walk of step size
//!   `center_drift` (relative to unit separation);
//! * the whole space is rotated by `rotation_schedule[t]` radians in the
//!   coordinate planes `(0,1), (2,3), …`.
//!
//! A fraction of all samples are *migrators*: their offset carries
//! a fixed absolute shift of `outlier_shift · separation_schedule[0]` toward
//! another class's center. Because the shift does not grow with separation,
//! migrators start inside the foreign cluster and drift back toward their
//! own as the classes pull apart.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{Map, Value};

use crate::cospace::{FeatureSpace, InMemoryProvider};
use crate::dataset::{Partition, SampleId};
use crate::error::{Error, Result};
use crate::mining::{run_loop, Criterion, MiningConfig, MiningResult};
use crate::scalar::Scalar;

/// The checked-in scenario used for the component-analysis regression.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.scenario");

/// Parameters of the drift generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftScenario {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub labeled_fraction: f64,
    /// Center scale per emitted space; its length is the number of spaces.
    pub separation_schedule: Vec<f64>,
    /// Rotation angle (radians) per emitted space.
    pub rotation_schedule: Vec<f64>,
    pub noise_sigma: f64,
    /// Fraction of all samples (labeled included) that migrate.
    pub outlier_fraction: f64,
    /// Migrator displacement toward the foreign center, in units of the
    /// initial center distance.
    pub outlier_shift: f64,
    /// Per-space random-walk step of each class center.
    pub center_drift: f64,
    /// Noise scale of migrators relative to `noise_sigma`.
    pub outlier_spread: f64,
    pub seed: u64,
}

impl Default for DriftScenario {
    fn default() -> Self {
        DriftScenario {
            num_classes: 5,
            samples_per_class: 200,
            dim: 15,
            labeled_fraction: 0.1,
            separation_schedule: vec![1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2],
            rotation_schedule: vec![0.0; 7],
            noise_sigma: 0.3,
            outlier_fraction: 0.3,
            outlier_shift: 0.8,
            center_drift: 0.2,
            outlier_spread: 1.0,
            seed: 0,
        }
    }
}

impl DriftScenario {
    pub fn num_spaces(&self) -> usize {
        self.separation_schedule.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_classes * self.samples_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        if self.samples_per_class == 0 || self.dim == 0 {
            return fail("samples_per_class and dim must be positive".into());
        }
        if self.separation_schedule.len() != self.rotation_schedule.len() {
            return fail(format!(
                "separation_schedule has {} entries, rotation_schedule {}",
                self.separation_schedule.len(),
                self.rotation_schedule.len()
            ));
        }
        if self.separation_schedule.is_empty() {
            return fail("schedules must not be empty".into());
        }
        for (name, v) in [
            ("labeled_fraction", self.labeled_fraction),
            ("outlier_fraction", self.outlier_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("outlier_shift", self.outlier_shift),
            ("center_drift", self.center_drift),
            ("outlier_spread", self.outlier_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self
            .separation_schedule
            .iter()
            .chain(&self.rotation_schedule)
            .any(|v| !v.is_finite())
        {
            return fail("schedules must be finite".into());
        }
        Ok(())
    }

    fn labeled_per_class(&self) -> usize {
        (self.labeled_fraction * self.samples_per_class as f64).round() as usize
    }
}

/// True class of every generated sample, plus which ones migrate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    classes: BTreeMap<SampleId, usize>,
    migrators: BTreeSet<SampleId>,
}

impl GroundTruth {
    pub fn new(classes: BTreeMap<SampleId, usize>) -> Self {
        GroundTruth {
            classes,
            migrators: BTreeSet::new(),
        }
    }

    pub fn class_of(&self, id: &SampleId) -> Option<usize> {
        self.classes.get(id).copied()
    }

    pub fn classes(&self) -> &BTreeMap<SampleId, usize> {
        &self.classes
    }

    pub fn migrators(&self) -> &BTreeSet<SampleId> {
        &self.migrators
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Output of [`generate`].
pub struct Generated<T> {
    pub provider: InMemoryProvider<T>,
    pub partition: Partition,
    pub truth: GroundTruth,
}

/// Draws the whole feature-space sequence from one seeded stream.
pub fn generate<T: Scalar>(scenario: &DriftScenario) -> Result<Generated<T>> {
    scenario.validate()?;
    let m = scenario.num_classes;
    let d = scenario.dim;
    let per_class = scenario.samples_per_class;
    let n = scenario.num_samples();
    let n_labeled = scenario.labeled_per_class();
    if n_labeled == 0 {
        return Err(Error::Config(format!(
            "labeled_fraction {} of {per_class} samples per class leaves a class without labels",
            scenario.labeled_fraction
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut centers: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let width = (n.max(1) - 1).to_string().len().max(5);
    let ids: Vec<SampleId> = (0..n)
        .map(|i| SampleId::new(format!("s{i:0width$}")))
        .collect::<Result<_>>()?;
    let class: Vec<usize> = (0..n).map(|i| i / per_class).collect();

    let mut offsets: Vec<f64> = (0..n * d)
        .map(|_| scenario.noise_sigma * gauss(&mut rng))
        .collect();

    let mut labels = BTreeMap::new();
    for c in 0..m {
        let mut members: Vec<usize> = (c * per_class..(c + 1) * per_class).collect();
        members.shuffle(&mut rng);
        for &i in &members[..n_labeled.min(per_class)] {
            labels.insert(ids[i].clone(), c);
        }
    }
    // Labeled samples can migrate too: their label stays correct but their
    // features sit in a foreign cluster.
    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(&mut rng);
    let n_migrators = (scenario.outlier_fraction * n as f64).round() as usize;
    let mut migrators = BTreeSet::new();
    let shift = scenario.outlier_shift * scenario.separation_schedule[0];
    let targets: Vec<usize> = (0..m).map(|c| (c + rng.random_range(1..m)) % m).collect();
    for &i in &pool[..n_migrators] {
        let own = class[i];
        let other = targets[own];
        for k in 0..d {
            offsets[i * d + k] = scenario.outlier_spread * offsets[i * d + k]
                + shift * (centers[other][k] - centers[own][k]);
        }
        migrators.insert(ids[i].clone());
    }

    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut spaces = Vec::with_capacity(scenario.num_spaces());
    let mut point = vec![0.0; d];
    for (t, (&scale, &angle)) in scenario
        .separation_schedule
        .iter()
        .zip(&scenario.rotation_schedule)
        .enumerate()
    {
        if t > 0 && scenario.center_drift > 0.0 {
            for center in centers.iter_mut() {
                for x in center.iter_mut() {
                    *x += scenario.center_drift * inv_sqrt_d * gauss(&mut rng);
                }
            }
        }
        let (sin, cos) = angle.sin_cos();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for k in 0..d {
                point[k] = scale * centers[class[i]][k] + offsets[i * d + k];
            }
            for p in (0..d.saturating_sub(1)).step_by(2) {
                let (a, b) = (point[p], point[p + 1]);
                point[p] = cos * a - sin * b;
                point[p + 1] = sin * a + cos * b;
            }
            data.extend(point.iter().map(|&x| T::of(x)));
        }
        spaces.push(FeatureSpace::new(ids.clone(), data, d)?);
    }

    let partition = Partition::new(&ids, &labels, m)?;
    let classes = ids.iter().cloned().zip(class).collect();
    Ok(Generated {
        provider: InMemoryProvider::new(spaces),
        partition,
        truth: GroundTruth { classes, migrators },
    })
}

/// Per-iteration fraction of selections whose pseudo-label matches the true
/// class; `None` where nothing was selected.
pub fn evaluate<T: Scalar>(
    results: &[MiningResult<T>],
    truth: &GroundTruth,
) -> Result<Vec<Option<f64>>> {
    results
        .iter()
        .map(|r| {
            if r.selections.is_empty() {
                return Ok(None);
            }
            let mut correct = 0usize;
            for c in &r.selections {
                let class = truth
                    .class_of(&c.sample)
                    .ok_or_else(|| Error::UnknownSampleId(c.sample.to_string()))?;
                correct += usize::from(class == c.pseudo_label);
            }
            Ok(Some(correct as f64 / r.selections.len() as f64))
        })
        .collect()
}

/// Accuracy and selection count of one arm at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPoint {
    pub accuracy: Option<f64>,
    pub count: usize,
}

/// Per-iteration outcome of one criterion on a generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub criterion: Criterion,
    pub points: Vec<ArmPoint>,
}

/// Runs the mining loop with `criterion` on a freshly generated scenario.
pub fn run_arm(
    scenario: &DriftScenario,
    cfg: &MiningConfig,
    criterion: Criterion,
) -> Result<ArmResult> {
    let Generated {
        mut provider,
        partition,
        truth,
    } = generate::<f64>(scenario)?;
    let cfg = MiningConfig {
        criterion,
        num_classes: scenario.num_classes,
        ..cfg.clone()
    };
    let outcome = run_loop(&mut provider, partition, &cfg)?;
    let acc = evaluate(&outcome.results, &truth)?;
    let points = outcome
        .results
        .iter()
        .zip(acc)
        .map(|(r, accuracy)| ArmPoint {
            accuracy,
            count: r.len(),
        })
        .collect();
    Ok(ArmResult { criterion, points })
}

/// One row of the paired comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub iteration: usize,
    pub full: Option<ArmPoint>,
    pub ablation: Option<ArmPoint>,
}

/// Paired accuracies of the two criteria, one row per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    fn from_arms(full: Option<ArmResult>, ablation: Option<ArmResult>) -> Self {
        let len = |a: &Option<ArmResult>| a.as_ref().map_or(0, |a| a.points.len());
        let rows = (0..len(&full).max(len(&ablation)))
            .map(|t| ComparisonRow {
                iteration: t + 1,
                full: full.as_ref().and_then(|a| a.points.get(t).copied()),
                ablation: ablation.as_ref().and_then(|a| a.points.get(t).copied()),
            })
            .collect();
        Comparison { rows }
    }

    pub fn row(&self, iteration: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.iteration == iteration)
    }

    /// `iteration,acc_full,acc_ablation,count_full,count_ablation`; empty
    /// fields where an arm selected nothing or was not run.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "iteration,acc_full,acc_ablation,count_full,count_ablation"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration,
                field(r.full.and_then(|p| p.accuracy)),
                field(r.ablation.and_then(|p| p.accuracy)),
                field(r.full.map(|p| p.count)),
                field(r.ablation.map(|p| p.count)),
            )?;
        }
        Ok(())
    }

    /// Whitespace-separated columns for gnuplot, `NaN` for missing values.
    pub fn write_dat(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "# iteration acc_full acc_ablation count_full count_ablation"
        )?;
        let nan = |v: Option<String>| v.unwrap_or_else(|| "NaN".to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{} {} {} {} {}",
                r.iteration,
                nan(r.full.and_then(|p| p.accuracy).map(|a| a.to_string())),
                nan(r.ablation.and_then(|p| p.accuracy).map(|a| a.to_string())),
                nan(r.full.map(|p| p.count.to_string())),
                nan(r.ablation.map(|p| p.count.to_string())),
            )?;
        }
        Ok(())
    }
}

fn field<V: fmt::Display>(v: Option<V>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Runs both criteria on identically generated data (the two arms run
/// concurrently; each regenerates from the same seed).
pub fn compare_criteria(scenario: &DriftScenario, cfg: &MiningConfig) -> Result<Comparison> {
    let (full, ablation) = rayon::join(
        || run_arm(scenario, cfg, Criterion::Full),
        || run_arm(scenario, cfg, Criterion::Ablation),
    );
    Ok(Comparison::from_arms(Some(full?), Some(ablation?)))
}

/// Runs a single arm and reports it in the comparison layout.
pub fn single_arm(
    scenario: &DriftScenario,
    cfg: &MiningConfig,
    criterion: Criterion,
) -> Result<Comparison> {
    let arm = run_arm(scenario, cfg, criterion)?;
    Ok(match criterion {
        Criterion::Full => Comparison::from_arms(Some(arm), None),
        Criterion::Ablation => Comparison::from_arms(None, Some(arm)),
    })
}

/// A scenario file: generator parameters plus the mining configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: DriftScenario,
    pub config: MiningConfig,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        parse_scenario(DEFAULT_SCENARIO).expect("built-in scenario parses")
    }
}

/// Parses `key = value` lines (`#` starts a comment, lists are
/// comma-separated). Generator keys fill the [`DriftScenario`]; every other
/// key must name a [`MiningConfig`] field. `num_classes` and `seed` feed
/// both.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let mut s = DriftScenario {
        separation_schedule: Vec::new(),
        rotation_schedule: Vec::new(),
        ..DriftScenario::default()
    };
    let mut mining = Map::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Config(format!("scenario line {}: {msg}", lineno + 1));
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        if !seen.insert(key.to_string()) {
            return Err(bad(format!("duplicate key `{key}`")));
        }
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| bad(format!("`{key}` expects a number, got `{v}`")))
        };
        let int = |v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|_| bad(format!("`{key}` expects an integer, got `{v}`")))
        };
        let list = |v: &str| -> Result<Vec<f64>> { v.split(',').map(|x| num(x.trim())).collect() };
        match key {
            "num_classes" => {
                s.num_classes = int(value)? as usize;
                mining.insert(key.into(), Value::from(s.num_classes));
            }
            "seed" => {
                s.seed = int(value)?;
                mining.insert(key.into(), Value::from(s.seed));
            }
            "samples_per_class" => s.samples_per_class = int(value)? as usize,
            "dim" => s.dim = int(value)? as usize,
            "labeled_fraction" => s.labeled_fraction = num(value)?,
            "separation_schedule" => s.separation_schedule = list(value)?,
            "rotation_schedule" => s.rotation_schedule = list(value)?,
            "noise_sigma" => s.noise_sigma = num(value)?,
            "outlier_fraction" => s.outlier_fraction = num(value)?,
            "outlier_shift" => s.outlier_shift = num(value)?,
            "center_drift" => s.center_drift = num(value)?,
            "outlier_spread" => s.outlier_spread = num(value)?,
            _ => {
                let v = serde_json::from_str::<Value>(value)
                    .unwrap_or_else(|_| Value::String(value.to_string()));
                mining.insert(key.into(), v);
            }
        }
    }
    if s.rotation_schedule.is_empty() {
        s.rotation_schedule = vec![0.0; s.separation_schedule.len()];
    }
    if !seen.contains("num_classes") {
        mining.insert("num_classes".into(), Value::from(s.num_classes));
    }
    if !seen.contains("seed") {
        mining.insert("seed".into(), Value::from(s.seed));
    }
    let config: MiningConfig = serde_json::from_value(Value::Object(mining))
        .map_err(|e| Error::Config(format!("scenario mining keys: {e}")))?;
    s.validate()?;
    config.validate()?;
    Ok(ScenarioFile {
        scenario: s,
        config,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

/// Mean pairwise distance between class means of `space`.
pub fn mean_center_distance<T: Scalar>(
    space: &FeatureSpace<T>,
    truth: &GroundTruth,
) -> Result<f64> {
    let d = space.dim();
    let m = truth.classes.values().max().map_or(0, |&c| c + 1);
    let mut sums = vec![0.0; m * d];
    let mut counts = vec![0usize; m];
    for (i, id) in space.ids().iter().enumerate() {
        let c = truth
            .class_of(id)
            .ok_or_else(|| Error::UnknownSampleId(id.to_string()))?;
        counts[c] += 1;
        for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(space.row(i)) {
            *s += x.to_f64_lossy();
        }
    }
    for c in 0..m {
        for s in &mut sums[c * d..(c + 1) * d] {
            *s /= counts[c].max(1) as f64;
        }
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..m {
        for b in a + 1..m {
            let dist = (0..d)
                .map(|k| (sums[a * d + k] - sums[b * d + k]).powi(2))
                .sum::<f64>()
                .sqrt();
            total += dist;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    })
}
