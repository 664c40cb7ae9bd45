//! The `cospace` command line: argument parsing, run manifests, and the
//! file artifacts of each subcommand.
//!
//! Exit codes: 0 on success, 1 on a runtime or data error, 2 on a
//! configuration error (bad flags, missing inputs, invalid config values).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cospace::{
    make_cospace, reduce_cospace, FeatureProvider, FileSequenceProvider, ReduceMethod,
};
use crate::dataset::{
    load_features, load_labels, parse_pseudo_labels, write_pseudo_labels, Partition,
};
use crate::error::Error;
use crate::graph::{build_knn, build_transition, KernelParams};
use crate::mining::{run_loop_with, Criterion, MiningConfig, MiningResult};
use crate::propagation::intrinsic_variation;
use crate::synth::{compare_criteria, load_scenario, single_arm, ScenarioFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cospace", version, about = "Co-Space sample mining")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the mining loop over a sequence of feature files.
    Mine(MineArgs),
    /// `mine` with the plain-cosine criterion.
    Ablate(MineArgs),
    /// Propagate labels in both sides of one Co-Space and dump the soft labels.
    Propagate(PropagateArgs),
    /// Paired full-vs-ablation run on a synthetic drift scenario.
    Simulate(SimulateArgs),
    /// Accuracy of selected pseudo-labels against ground truth.
    Eval(EvalArgs),
    /// Write the transition matrix of one feature file.
    DumpGraph(DumpGraphArgs),
}

/// Overrides for [`MiningConfig`] fields; unset flags keep the base value.
#[derive(Debug, Clone, Default, Args)]
struct ConfigArgs {
    /// Number of classes m.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Neighbors per sample in the propagation graph.
    #[arg(long)]
    knn: Option<usize>,
    /// Kernel width multiplier.
    #[arg(long)]
    mu: Option<f64>,
    /// Bandwidth factor on the mean kNN distance.
    #[arg(long)]
    delta: Option<f64>,
    /// Label-propagation iterations.
    #[arg(long)]
    lp_iters: Option<usize>,
    /// Stop propagation early once the largest change falls below this.
    #[arg(long)]
    lp_tolerance: Option<f64>,
    /// Labeled neighbors gathered per sample.
    #[arg(long)]
    labeled_neighbors: Option<usize>,
    /// Classes kept in the transformation matrix.
    #[arg(long)]
    top_s: Option<usize>,
    /// Weight of the center sample in the local covariance.
    #[arg(long)]
    k_weight: Option<f64>,
    /// Covariance members: `side-specific` or `shared`.
    #[arg(long)]
    member_mode: Option<String>,
    /// Target dimension of the reducer.
    #[arg(long)]
    reduce_dim: Option<usize>,
    /// `pca`, `random-projection` or `identity`.
    #[arg(long)]
    reduce_method: Option<String>,
    /// Minimum confidence for selection.
    #[arg(long)]
    threshold: Option<f64>,
    /// Most samples selected per iteration.
    #[arg(long)]
    cap: Option<usize>,
    /// Mining iterations.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Seed for randomized reducers.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut MiningConfig) -> Result<(), CliError> {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(
            num_classes,
            knn,
            mu,
            delta,
            lp_iters,
            labeled_neighbors,
            top_s,
            k_weight
        );
        set!(reduce_dim, threshold, cap, max_iterations, seed);
        if let Some(t) = self.lp_tolerance {
            cfg.lp_tolerance = Some(t);
        }
        if let Some(m) = &self.member_mode {
            cfg.member_mode = m.parse().map_err(CliError::Run)?;
        }
        if let Some(m) = &self.reduce_method {
            cfg.reduce_method = m.parse().map_err(CliError::Run)?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
struct MineArgs {
    /// Manifest listing one feature file per model state, in order.
    #[arg(long, required_unless_present = "from_manifest")]
    features: Option<PathBuf>,
    /// Ground-truth labels: `sample_id<TAB>class`.
    #[arg(long, required_unless_present = "from_manifest")]
    labels: Option<PathBuf>,
    /// Optional true classes of every sample; adds `selection_accuracy`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// JSON file with a full mining configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay a previous run from its manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Scoring rule (`full` or `ablation`).
    #[arg(long)]
    criterion: Option<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Debug, Args)]
struct PropagateArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file (`key = value`); the built-in default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Run only one arm.
    #[arg(long)]
    criterion: Option<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory holding `selected_<t>.tsv` files.
    #[arg(long)]
    run: PathBuf,
    /// True class of every sample: `sample_id<TAB>class`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    num_classes: usize,
    /// Output CSV (default: `<run>/accuracy.csv`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DumpGraphArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: MiningConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunManifest {
    fn new(
        command: &str,
        config: &MiningConfig,
        inputs: BTreeMap<String, PathBuf>,
        out: &Path,
    ) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            // Absolute, so a replay works from any working directory.
            inputs: inputs.into_iter().map(|(k, p)| (k, absolute(&p))).collect(),
            output_dir: absolute(out),
            seed: config.seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), |w| writeln!(w, "{text}"))
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Config(msg),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Run(Error::Config(_)) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

/// Parses `args` (including the program name), runs the subcommand, and
/// returns the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_CONFIG,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Mine(a) => cmd_mine(a, None),
        Command::Ablate(a) => cmd_mine(a, Some(Criterion::Ablation)),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DumpGraph(a) => cmd_dump_graph(a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Run(Error::io(dir, e)))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let io = |e| CliError::Run(Error::io(path, e));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn cmd_mine(args: MineArgs, forced: Option<Criterion>) -> Result<(), CliError> {
    let replay = args
        .from_manifest
        .as_deref()
        .map(RunManifest::load)
        .transpose()?;
    let mut cfg = match (&replay, &args.config) {
        (Some(m), _) => m.config.clone(),
        (None, Some(path)) => {
            require_file(path, "config file")?;
            let text = fs::read_to_string(path).map_err(|e| CliError::Run(Error::io(path, e)))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => MiningConfig::default(),
    };
    args.cfg.apply(&mut cfg)?;
    if let Some(c) = &args.criterion {
        cfg.criterion = c.parse().map_err(CliError::Run)?;
    }
    if let Some(c) = forced {
        cfg.criterion = c;
    }
    if replay.is_none() && args.cfg.threshold.is_none() && args.config.is_none() {
        log::warn!(
            "threshold left at its default {}; the selection threshold should be tuned per dataset",
            cfg.threshold
        );
    }
    cfg.validate()?;

    let input = |key: &str, flag: &Option<PathBuf>| -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| replay.as_ref().and_then(|m| m.inputs.get(key).cloned()))
            .ok_or_else(|| CliError::Config(format!("--{key} is required")))
    };
    let features = input("features", &args.features)?;
    let labels = input("labels", &args.labels)?;
    let truth_path = args
        .truth
        .clone()
        .or_else(|| replay.as_ref().and_then(|m| m.inputs.get("truth").cloned()));
    let out = args
        .out
        .clone()
        .or_else(|| replay.as_ref().map(|m| m.output_dir.clone()))
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    require_file(&features, "feature manifest")?;
    require_file(&labels, "label file")?;
    if let Some(t) = &truth_path {
        require_file(t, "truth file")?;
    }

    let mut inputs = BTreeMap::from([
        ("features".to_string(), features.clone()),
        ("labels".to_string(), labels.clone()),
    ]);
    if let Some(t) = &truth_path {
        inputs.insert("truth".to_string(), t.clone());
    }
    create_dir(&out)?;
    let command = match cfg.criterion {
        Criterion::Full => "mine",
        Criterion::Ablation => "ablate",
    };
    RunManifest::new(command, &cfg, inputs, &out).write(&out)?;

    let mut provider = FileSequenceProvider::from_manifest(&features)?;
    let first =
        FeatureProvider::<f64>::next_space(&mut provider)?.ok_or(Error::ProviderTooShort)?;
    let label_map = load_labels(&labels, cfg.num_classes)?;
    let partition = Partition::new(first.ids(), &label_map, cfg.num_classes)?;
    let truth = truth_path
        .as_ref()
        .map(|p| load_labels(p, cfg.num_classes))
        .transpose()?;
    let mut provider = Prepend {
        first: Some(first),
        rest: provider,
    };

    let metrics_path = out.join("metrics.csv");
    let mut metrics = String::from("iteration,selected_count,mean_confidence,labeled_pool_size");
    if truth.is_some() {
        metrics.push_str(",selection_accuracy");
    }
    metrics.push('\n');
    let outcome = run_loop_with(&mut provider, partition, &cfg, |result, partition| {
        let path = out.join(format!("selected_{}.tsv", result.iteration));
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        write_pseudo_labels(&mut w, result)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        metrics.push_str(&metrics_row(result, partition, truth.as_ref())?);
        Ok(())
    });
    // Metrics of the completed iterations are written even if a later one failed.
    write_file(&metrics_path, |w| w.write_all(metrics.as_bytes()))?;
    let outcome = outcome?;
    log::info!(
        "{} iterations, {} samples pseudo-labeled; outputs in {}",
        outcome.results.len(),
        outcome.mined().count(),
        out.display()
    );
    Ok(())
}

fn metrics_row(
    result: &MiningResult<f64>,
    partition: &Partition,
    truth: Option<&BTreeMap<crate::dataset::SampleId, usize>>,
) -> Result<String, Error> {
    let mut row = format!(
        "{},{},{},{}",
        result.iteration,
        result.len(),
        result
            .mean_confidence()
            .map(|v| v.to_string())
            .unwrap_or_default(),
        partition.labeled().len()
    );
    if let Some(truth) = truth {
        let mut correct = 0usize;
        for c in &result.selections {
            let class = truth
                .get(&c.sample)
                .ok_or_else(|| Error::UnknownSampleId(c.sample.to_string()))?;
            correct += usize::from(*class == c.pseudo_label);
        }
        row.push(',');
        if !result.is_empty() {
            row.push_str(&(correct as f64 / result.len() as f64).to_string());
        }
    }
    row.push('\n');
    Ok(row)
}

/// Yields an already-loaded first space, then defers to the file sequence.
struct Prepend {
    first: Option<crate::cospace::FeatureSpace<f64>>,
    rest: FileSequenceProvider,
}

impl FeatureProvider<f64> for Prepend {
    fn next_space(&mut self) -> crate::error::Result<Option<crate::cospace::FeatureSpace<f64>>> {
        match self.first.take() {
            Some(s) => Ok(Some(s)),
            None => self.rest.next_space(),
        }
    }
}

fn cmd_propagate(args: PropagateArgs) -> Result<(), CliError> {
    let mut cfg = MiningConfig::default();
    args.cfg.apply(&mut cfg)?;
    if args.cfg.num_classes.is_none() {
        return Err(CliError::Config("--num-classes is required".into()));
    }
    cfg.validate()?;
    for (p, what) in [
        (&args.before, "feature file"),
        (&args.after, "feature file"),
        (&args.labels, "label file"),
    ] {
        require_file(p, what)?;
    }
    let before = load_features::<f64>(&args.before)?;
    let after = load_features::<f64>(&args.after)?;
    let label_map = load_labels(&args.labels, cfg.num_classes)?;
    let partition = Partition::new(before.ids(), &label_map, cfg.num_classes)?;
    let mut cs = make_cospace(before, after)?;
    // Raw features are used unless a reduction is asked for explicitly.
    if args.cfg.reduce_dim.is_some() || args.cfg.reduce_method.is_some() {
        cs = reduce_cospace(&cs, cfg.reduce_dim, cfg.reduce_method, cfg.seed)?;
    } else {
        cfg.reduce_method = ReduceMethod::Identity;
        cfg.reduce_dim = cs.before().dim();
    }
    let (yb, ya) = intrinsic_variation(&cs, &partition, &cfg.propagation())?;

    create_dir(&args.out)?;
    let inputs = BTreeMap::from([
        ("before".to_string(), args.before.clone()),
        ("after".to_string(), args.after.clone()),
        ("labels".to_string(), args.labels.clone()),
    ]);
    RunManifest::new("propagate", &cfg, inputs, &args.out).write(&args.out)?;
    write_file(&args.out.join("soft_before.tsv"), |w| yb.write_tsv(w))?;
    write_file(&args.out.join("soft_after.tsv"), |w| ya.write_tsv(w))?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let ScenarioFile {
        mut scenario,
        mut config,
    } = match &args.scenario {
        Some(p) => {
            require_file(p, "scenario file")?;
            load_scenario(p)?
        }
        None => ScenarioFile::default(),
    };
    args.cfg.apply(&mut config)?;
    if let Some(seed) = args.cfg.seed {
        scenario.seed = seed;
    }
    if let Some(m) = args.cfg.num_classes {
        scenario.num_classes = m;
    }
    config.validate()?;
    scenario.validate()?;
    let criterion: Option<Criterion> = args
        .criterion
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(CliError::Run)?;

    create_dir(&args.out)?;
    let mut inputs = BTreeMap::new();
    if let Some(p) = &args.scenario {
        inputs.insert("scenario".to_string(), p.clone());
    }
    let mut manifest = RunManifest::new("simulate", &config, inputs, &args.out);
    manifest.seed = scenario.seed;
    manifest.write(&args.out)?;

    let table = match criterion {
        None => compare_criteria(&scenario, &config)?,
        Some(c) => single_arm(&scenario, &config, c)?,
    };
    write_file(&args.out.join("comparison.csv"), |w| table.write_csv(w))?;
    write_file(&args.out.join("comparison.dat"), |w| table.write_dat(w))?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    require_file(&args.truth, "truth file")?;
    if !args.run.is_dir() {
        return Err(CliError::Config(format!(
            "run directory `{}` does not exist",
            args.run.display()
        )));
    }
    let truth = load_labels(&args.truth, args.num_classes)?;
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&args.run).map_err(|e| Error::io(&args.run, e))? {
        let path = entry.map_err(|e| Error::io(&args.run, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(t) = name
            .strip_prefix("selected_")
            .and_then(|r| r.strip_suffix(".tsv"))
            .and_then(|t| t.parse().ok())
        {
            files.push((t, path));
        }
    }
    files.sort();
    let mut csv = String::from("iteration,selected_count,accuracy\n");
    for (t, path) in &files {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_pseudo_labels(&text)?;
        let mut correct = 0usize;
        for r in &rows {
            let class = truth
                .get(&r.sample)
                .ok_or_else(|| Error::UnknownSampleId(r.sample.to_string()))?;
            correct += usize::from(*class == r.class);
        }
        let acc = if rows.is_empty() {
            String::new()
        } else {
            (correct as f64 / rows.len() as f64).to_string()
        };
        csv.push_str(&format!("{t},{},{acc}\n", rows.len()));
    }
    let out = args.out.unwrap_or_else(|| args.run.join("accuracy.csv"));
    write_file(&out, |w| w.write_all(csv.as_bytes()))
}

fn cmd_dump_graph(args: DumpGraphArgs) -> Result<(), CliError> {
    require_file(&args.features, "feature file")?;
    let mut cfg = MiningConfig::default();
    args.cfg.apply(&mut cfg)?;
    let mut space = load_features::<f64>(&args.features)?;
    if args.cfg.reduce_dim.is_some() || args.cfg.reduce_method.is_some() {
        space = crate::cospace::reduce(&space, cfg.reduce_dim, cfg.reduce_method, cfg.seed)?;
    }
    let knn = build_knn(&space, cfg.knn)?;
    let params = KernelParams {
        mu: cfg.mu,
        delta: cfg.delta,
    };
    let p = build_transition(&space, &knn, params)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&args.out, |w| p.write_coo(w))
}
