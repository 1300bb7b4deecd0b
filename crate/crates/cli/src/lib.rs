//! Argument parsing and subcommand implementations of the `vtnet` binary.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vtnet_core::baselines::{write_feature_csv, LogRegConfig};
use vtnet_core::evalharness::{
    emit_report, load_report, render_svg, run_cv, AucMode, CvOptions, ExperimentReport, FoldModel, GnbModel,
    LogRegModel, Metric, VtnetModel,
};
use vtnet_core::gazedata::{
    load_recordings, remove_length_outliers, summarize_lengths, DatasetManifest, Recording, SUMMARY_CSV_HEADER,
};
use vtnet_core::gradsuite::{run_gradsuite, Fault};
use vtnet_core::preprocess::{build_datapoints, fit_channel_stats, normalize_datapoint, Datapoint, DatapointOptions};
use vtnet_core::synthgen::{gen_dataset, LengthTarget, SynthConfig};
use vtnet_core::vtnet::{fit, save_checkpoint, VTNetConfig};
use vtnet_core::{Error as CoreError, Task};

pub const JOBS_ENV: &str = "GAZE_VTNET_JOBS";

/// Failure of a subcommand. Usage errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<CoreError>() {
            Some(CoreError::TooManyFolds { .. }) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::from(anyhow::Error::new(e))
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "vtnet", version, about = "Eye-tracking classification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class cohort.
    Synth(SynthArgs),
    /// Print sequence-length statistics per task and class.
    Summarize(SummarizeArgs),
    /// Build datapoints and dump them with their summary features.
    Preprocess(PreprocessArgs),
    /// Train one network on every datapoint of a task and save it.
    Train(TrainArgs),
    /// Repeated grouped cross-validation of one classifier.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every gradient kernel.
    Gradcheck(GradcheckArgs),
    /// Combine report directories into a table and an SVG chart.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskArg {
    Calibration,
    Picture,
    Reading,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Calibration => Task::Calibration,
            TaskArg::Picture => Task::PictureDescription,
            TaskArg::Reading => Task::Reading,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 20)]
    pub patients: usize,
    #[arg(long, default_value_t = 20)]
    pub controls: usize,
    /// Class separability in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the mean recording length, in samples.
    #[arg(long)]
    pub length_mean: Option<f64>,
    /// Override the recording length standard deviation.
    #[arg(long)]
    pub length_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also write the table to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Drop length outliers (beyond 3 std) per task first.
    #[arg(long)]
    pub remove_outliers: bool,
}

/// `none` or a positive step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoff(pub Option<usize>);

impl std::str::FromStr for Cutoff {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("full") {
            return Ok(Cutoff(None));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("cutoff must be `none` or a positive integer, got `{s}`")),
            Ok(n) => Ok(Cutoff(Some(n))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size network.
    Paper,
    /// Reduced network for small synthetic cohorts on one core.
    Desk,
    /// Smallest network, for smoke tests.
    Tiny,
}

impl Preset {
    pub fn config(self) -> VTNetConfig {
        match self {
            Preset::Paper => VTNetConfig::default(),
            Preset::Desk => VTNetConfig::desk(),
            Preset::Tiny => VTNetConfig::tiny(),
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Task to use; may be omitted when the manifest holds a single task.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// `none`, `1000`, `2000` or any positive step count.
    #[arg(long)]
    pub cutoff: Option<Cutoff>,
    /// Number of cyclic splits per recording.
    #[arg(long)]
    pub splits: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Scanpath resolution (square).
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    /// Write every scanpath as a PGM image.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Vtnet,
    VtnetAtt,
    Gnb,
    Logreg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AucModeArg {
    Pooled,
    PerFoldMean,
}

#[derive(Debug, Args)]
pub struct ModelOptions {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network size preset used when the config file gives none.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_opts: ModelOptions,
    #[arg(long)]
    pub attention: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_opts: ModelOptions,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; the output does not depend on it.
    #[arg(long, env = JOBS_ENV, default_value_t = 1)]
    pub jobs: usize,
    /// Also report metrics on per-user mean probabilities.
    #[arg(long)]
    pub user_level: bool,
    #[arg(long, value_enum)]
    pub auc_mode: Option<AucModeArg>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check the tiny network (the only supported size).
    #[arg(long)]
    pub tiny_config: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one backward pass on purpose.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories holding a `report.json`, or the files themselves.
    #[arg(long = "from", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Write a bar chart of metric means here.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

/// Everything that determines the output of `evaluate` and `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelArg,
    pub task: Option<TaskArg>,
    pub cutoff: Option<usize>,
    pub splits: usize,
    pub runs: usize,
    pub folds: usize,
    pub seed: u64,
    pub user_level: bool,
    pub auc_mode: AucMode,
    pub preset: Preset,
    /// Network hyperparameters; missing fields come from `preset`.
    pub vtnet: Option<serde_json::Value>,
    pub logreg: LogRegConfig,
    // Written into `resolved_config.json` for the record. Accepted so that
    // file can be passed back as `--config`; otherwise ignored.
    pub command: Option<String>,
    pub manifest: Option<PathBuf>,
    pub classifier: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelArg::Vtnet,
            task: None,
            cutoff: None,
            splits: vtnet_core::preprocess::DEFAULT_SPLITS,
            runs: 10,
            folds: 10,
            seed: 0,
            user_level: false,
            auc_mode: AucMode::Pooled,
            preset: Preset::Paper,
            vtnet: None,
            logreg: LogRegConfig::default(),
            command: None,
            manifest: None,
            classifier: None,
        }
    }
}

/// Fully resolved settings written to `resolved_config.json`. The file is
/// itself a valid `--config`.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: &'static str,
    pub manifest: PathBuf,
    pub task: Task,
    pub cutoff: Option<usize>,
    pub splits: usize,
    pub model: ModelArg,
    pub classifier: String,
    pub runs: usize,
    pub folds: usize,
    pub seed: u64,
    pub user_level: bool,
    pub auc_mode: AucMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vtnet: Option<VTNetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logreg: Option<LogRegConfig>,
}

fn load_experiment_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Overlays the `vtnet` object of the config file onto the preset.
fn resolve_vtnet(cfg: &ExperimentConfig) -> CliResult<VTNetConfig> {
    let mut base = serde_json::to_value(cfg.preset.config()).map_err(anyhow::Error::from)?;
    if let Some(serde_json::Value::Object(over)) = &cfg.vtnet {
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in over {
            obj.insert(k.clone(), v.clone());
        }
    } else if cfg.vtnet.is_some() {
        return Err(usage("`vtnet` in config must be an object"));
    }
    let config: VTNetConfig =
        serde_json::from_value(base).map_err(|e| usage(format!("invalid vtnet config: {e}")))?;
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn apply_data_args(cfg: &mut ExperimentConfig, data: &DataArgs) {
    if let Some(t) = data.task {
        cfg.task = Some(t);
    }
    if let Some(Cutoff(c)) = data.cutoff {
        cfg.cutoff = c;
    }
    if let Some(s) = data.splits {
        cfg.splits = s;
    }
}

fn apply_model_opts(cfg: &mut ExperimentConfig, m: &ModelOptions) {
    if let Some(p) = m.preset {
        cfg.preset = p;
    }
    if let Some(s) = m.seed {
        cfg.seed = s;
    }
}

fn manifest_task(manifest: &Path, requested: Option<TaskArg>) -> CliResult<Task> {
    if let Some(t) = requested {
        return Ok(t.into());
    }
    let (m, _) = DatasetManifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let tasks: BTreeSet<Task> = m.entries.iter().map(|e| e.task).collect();
    match tasks.len() {
        1 => Ok(*tasks.iter().next().unwrap()),
        0 => Err(CliError::Runtime(anyhow!("manifest has no entries"))),
        _ => Err(usage("manifest holds several tasks; pass --task")),
    }
}

fn load_task(manifest: &Path, task: Task) -> CliResult<Vec<Recording>> {
    let parsed = load_recordings(manifest, task).with_context(|| format!("loading {}", manifest.display()))?;
    let dropped: usize = parsed.iter().map(|p| p.dropped).sum();
    if dropped > 0 {
        eprintln!("dropped {dropped} invalid rows");
    }
    let recs: Vec<Recording> = parsed.into_iter().map(|p| p.recording).collect();
    if recs.is_empty() {
        return Err(CliError::Runtime(anyhow!("manifest has no {task} recordings")));
    }
    Ok(recs)
}

fn datapoints_for(manifest: &Path, task: Task, opts: &DatapointOptions) -> CliResult<Vec<Datapoint>> {
    let recs = load_task(manifest, task)?;
    let recs = if recs.len() >= 2 {
        let split = remove_length_outliers(recs, task)?;
        if !split.removed.is_empty() {
            let ids: Vec<&str> = split.removed.iter().map(|r| r.user_id.as_str()).collect();
            eprintln!("removed {} length outliers: {}", ids.len(), ids.join(" "));
        }
        split.kept
    } else {
        recs
    };
    Ok(build_datapoints(&recs, opts)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = SynthConfig::new(a.task.into(), a.patients, a.controls, a.epsilon, a.seed);
    if a.length_mean.is_some() || a.length_std.is_some() {
        let t = LengthTarget::for_task(cfg.task);
        cfg.lengths = LengthTarget {
            mean: a.length_mean.unwrap_or(t.mean),
            std: a.length_std.unwrap_or(t.std),
        };
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let (manifest, path) = gen_dataset(&cfg, &a.out).context("generating dataset")?;
    writeln!(out, "{}", path.display()).map_err(anyhow::Error::from)?;
    eprintln!("wrote {} recordings", manifest.entries.len());
    Ok(())
}

fn cmd_summarize(a: &SummarizeArgs, out: &mut dyn Write) -> CliResult {
    let (manifest, _) = DatasetManifest::load(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let tasks: BTreeSet<Task> = manifest.entries.iter().map(|e| e.task).collect();
    let mut recordings = Vec::new();
    for task in tasks {
        let recs = load_task(&a.manifest, task)?;
        if a.remove_outliers && recs.len() >= 2 {
            recordings.extend(remove_length_outliers(recs, task)?.kept);
        } else {
            recordings.extend(recs);
        }
    }
    let mut table = format!("{SUMMARY_CSV_HEADER}\n");
    for row in summarize_lengths(&recordings)? {
        table.push_str(&row.to_csv_line());
        table.push('\n');
    }
    out.write_all(table.as_bytes()).map_err(anyhow::Error::from)?;
    if let Some(p) = &a.csv {
        fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs, out: &mut dyn Write) -> CliResult {
    if a.image_size < vtnet_core::preprocess::MIN_SCANPATH_SIDE {
        return Err(usage(format!(
            "image size must be at least {}",
            vtnet_core::preprocess::MIN_SCANPATH_SIDE
        )));
    }
    let task = manifest_task(&a.data.manifest, a.data.task)?;
    let mut cfg = ExperimentConfig::default();
    apply_data_args(&mut cfg, &a.data);
    let opts = DatapointOptions {
        splits: cfg.splits,
        cutoff: cfg.cutoff,
        scanpath_width: a.image_size,
        scanpath_height: a.image_size,
    };
    let dps = datapoints_for(&a.data.manifest, task, &opts)?;
    create_dir(&a.out)?;
    let mut index = String::from("user_id,task,label,split_index,length\n");
    for d in &dps {
        index.push_str(&format!(
            "{},{},{},{},{}\n",
            d.user_id,
            d.task,
            d.label.as_str(),
            d.split_index,
            d.seq.len()
        ));
    }
    let index_path = a.out.join("datapoints.csv");
    fs::write(&index_path, index).with_context(|| format!("writing {}", index_path.display()))?;
    let feat_path = a.out.join("features.csv");
    let file = fs::File::create(&feat_path).with_context(|| format!("creating {}", feat_path.display()))?;
    write_feature_csv(&dps, BufWriter::new(file))?;
    if a.pgm {
        let dir = a.out.join("scanpaths");
        create_dir(&dir)?;
        for d in &dps {
            let p = dir.join(format!("{}_{}_{}.pgm", d.user_id, d.task, d.split_index));
            let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
            d.scanpath.write_pgm(BufWriter::new(f))?;
        }
    }
    write_json(
        &a.out.join("resolved_config.json"),
        &serde_json::json!({
            "command": "preprocess",
            "manifest": a.data.manifest,
            "task": task,
            "datapoints": opts,
        }),
    )?;
    writeln!(out, "{} datapoints -> {}", dps.len(), a.out.display()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = load_experiment_config(a.model_opts.config.as_deref())?;
    apply_data_args(&mut cfg, &a.data);
    apply_model_opts(&mut cfg, &a.model_opts);
    if a.attention {
        cfg.model = ModelArg::VtnetAtt;
    }
    let mut net = resolve_vtnet(&cfg)?;
    net.attention_enabled = a.attention || net.attention_enabled;
    net.seed = cfg.seed;
    if let Some(e) = a.model_opts.epochs {
        net.epochs = e;
    }
    if cfg.cutoff.is_some() {
        net.max_seq_len = cfg.cutoff;
    }
    net.validate().map_err(|e| usage(e.to_string()))?;
    let task = manifest_task(&a.data.manifest, cfg.task)?;
    let opts = DatapointOptions {
        splits: cfg.splits,
        cutoff: cfg.cutoff,
        scanpath_width: net.image_width,
        scanpath_height: net.image_height,
    };
    let dps = datapoints_for(&a.data.manifest, task, &opts)?;
    let stats = fit_channel_stats(&dps, "all")?;
    let data: Vec<Datapoint> = dps.iter().map(|d| normalize_datapoint(d, &stats)).collect();
    let outcome = fit(&data, &net, net.seed)?;

    create_dir(&a.out)?;
    let model_path = a.out.join("model.vtn");
    fs::write(&model_path, save_checkpoint(&outcome.params, &net)?)
        .with_context(|| format!("writing {}", model_path.display()))?;
    write_json(&a.out.join("channel_stats.json"), &stats)?;
    let mut hist = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_history.iter().enumerate() {
        hist.push_str(&format!("{i},{l:.9}\n"));
    }
    fs::write(a.out.join("loss_history.csv"), hist).context("writing loss history")?;
    write_json(
        &a.out.join("resolved_config.json"),
        &ResolvedConfig {
            command: "train",
            manifest: a.data.manifest.clone(),
            task,
            cutoff: cfg.cutoff,
            splits: cfg.splits,
            model: cfg.model,
            classifier: vtnet_core::evalharness::vtnet_name(cfg.cutoff, net.attention_enabled),
            runs: 0,
            folds: 0,
            seed: cfg.seed,
            user_level: false,
            auc_mode: cfg.auc_mode,
            vtnet: Some(net),
            logreg: None,
        },
    )?;
    writeln!(
        out,
        "best epoch {} loss {:.6} -> {}",
        outcome.best_epoch,
        outcome.best_loss(),
        model_path.display()
    )
    .map_err(anyhow::Error::from)?;
    Ok(())
}

/// Resolves flags over the config file, for `evaluate`.
pub fn resolve_evaluate(a: &EvaluateArgs) -> CliResult<(ResolvedConfig, CvOptions)> {
    let mut cfg = load_experiment_config(a.model_opts.config.as_deref())?;
    apply_data_args(&mut cfg, &a.data);
    apply_model_opts(&mut cfg, &a.model_opts);
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    if a.user_level {
        cfg.user_level = true;
    }
    if let Some(m) = a.auc_mode {
        cfg.auc_mode = match m {
            AucModeArg::Pooled => AucMode::Pooled,
            AucModeArg::PerFoldMean => AucMode::PerFoldMean,
        };
    }
    if cfg.runs == 0 {
        return Err(usage("--runs must be positive"));
    }
    if cfg.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be positive"));
    }
    if cfg.splits == 0 {
        return Err(usage("--splits must be positive"));
    }
    let is_vtnet = matches!(cfg.model, ModelArg::Vtnet | ModelArg::VtnetAtt);
    let vtnet = if is_vtnet {
        let mut net = resolve_vtnet(&cfg)?;
        net.attention_enabled = cfg.model == ModelArg::VtnetAtt;
        if let Some(e) = a.model_opts.epochs {
            net.epochs = e;
        }
        net.seed = cfg.seed;
        if cfg.cutoff.is_some() {
            net.max_seq_len = cfg.cutoff;
        }
        net.validate().map_err(|e| usage(e.to_string()))?;
        Some(net)
    } else {
        None
    };
    let task = manifest_task(&a.data.manifest, cfg.task)?;
    let classifier = match cfg.model {
        ModelArg::Vtnet | ModelArg::VtnetAtt => {
            vtnet_core::evalharness::vtnet_name(cfg.cutoff, cfg.model == ModelArg::VtnetAtt)
        }
        ModelArg::Gnb => GnbModel.name(),
        ModelArg::Logreg => LogRegModel::default().name(),
    };
    let resolved = ResolvedConfig {
        command: "evaluate",
        manifest: a.data.manifest.clone(),
        task,
        cutoff: cfg.cutoff,
        splits: cfg.splits,
        model: cfg.model,
        classifier,
        runs: cfg.runs,
        folds: cfg.folds,
        seed: cfg.seed,
        user_level: cfg.user_level,
        auc_mode: cfg.auc_mode,
        vtnet,
        logreg: (cfg.model == ModelArg::Logreg).then_some(cfg.logreg),
    };
    let cv = CvOptions {
        runs: cfg.runs,
        folds: cfg.folds,
        master_seed: cfg.seed,
        jobs: a.jobs,
        user_level: cfg.user_level,
        auc_mode: cfg.auc_mode,
    };
    Ok((resolved, cv))
}

pub fn summary_table(reports: &[ExperimentReport]) -> String {
    let mut s = format!("{:<18} {:<12} {:<12} {:>8} {:>8}\n", "classifier", "task", "metric", "mean", "std");
    for r in reports {
        for m in Metric::ALL {
            let v = r.datapoint_summary.get(m);
            s.push_str(&format!(
                "{:<18} {:<12} {:<12} {:>8.4} {:>8.4}\n",
                r.classifier,
                r.task.as_str(),
                m.as_str(),
                v.mean,
                v.std
            ));
        }
    }
    s
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let (resolved, cv) = resolve_evaluate(a)?;
    let image = resolved.vtnet.as_ref().map_or((64, 64), |n| (n.image_width, n.image_height));
    let opts = DatapointOptions {
        splits: resolved.splits,
        cutoff: resolved.cutoff,
        scanpath_width: image.0,
        scanpath_height: image.1,
    };
    let dps = datapoints_for(&resolved.manifest, resolved.task, &opts)?;
    let users: BTreeSet<&str> = dps.iter().map(|d| d.user_id.as_str()).collect();
    if cv.folds > users.len() {
        return Err(usage(format!(
            "fold count {} exceeds user count {}",
            cv.folds,
            users.len()
        )));
    }
    let model: Box<dyn FoldModel> = match resolved.model {
        ModelArg::Vtnet | ModelArg::VtnetAtt => Box::new(VtnetModel::new(
            resolved.vtnet.clone().expect("network config resolved"),
            resolved.cutoff,
        )),
        ModelArg::Gnb => Box::new(GnbModel),
        ModelArg::Logreg => Box::new(LogRegModel {
            config: resolved.logreg.unwrap_or_default(),
        }),
    };
    let report = run_cv(&dps, model.as_ref(), &cv)?;
    emit_report(&report, &a.out)?;
    write_json(&a.out.join("resolved_config.json"), &resolved)?;
    out.write_all(summary_table(std::slice::from_ref(&report)).as_bytes())
        .map_err(anyhow::Error::from)?;
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let fault = a.inject_fault.then_some(Fault::LinearSignFlip);
    let checks = run_gradsuite(a.seed, fault)?;
    let mut failed = Vec::new();
    writeln!(out, "{:<18} {:>12} {:>10}  result", "check", "max_rel_err", "threshold").map_err(anyhow::Error::from)?;
    for c in &checks {
        writeln!(
            out,
            "{:<18} {:>12.3e} {:>10.0e}  {}",
            c.name,
            c.max_rel_error,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" }
        )
        .map_err(anyhow::Error::from)?;
        if !c.passed {
            failed.push(c.name.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!("gradient check failed: {}", failed.join(", "))))
    }
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> CliResult {
    let reports: Vec<ExperimentReport> = a
        .inputs
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("report.json") } else { p.clone() };
            load_report(&file).with_context(|| format!("reading {}", file.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    out.write_all(summary_table(&reports).as_bytes()).map_err(anyhow::Error::from)?;
    if let Some(svg) = &a.svg {
        fs::write(svg, render_svg(&reports)?).with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

/// Runs one parsed command, writing its primary output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Summarize(a) => cmd_summarize(a, out),
        Command::Preprocess(a) => cmd_preprocess(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
