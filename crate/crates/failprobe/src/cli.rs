//! Command-line surface. [`run`] executes a parsed [`Cli`]; [`main_with`]
//! additionally turns errors into a one-line JSON report on stderr.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use failprobe_core::aggregation::{AggMethod, AggregationSpec};
use failprobe_core::baseline::{DistanceMetric, SubspaceName};
use failprobe_core::conformal::{fit_band, BandConfig, CalibrationMode, ConformalBand};
use failprobe_core::eval::{alpha_sweep, confusion_under_band};
use failprobe_core::pipeline::{
    detector_grid_search, labels_of, probe_grid, Detector, DetectorConfig, ScoreMethod,
    DEFAULT_PROBE_L2_WEIGHTS, DEFAULT_PROBE_LEARNING_RATES,
};
use failprobe_core::probes::{embed_rollout, TrainConfig};
use failprobe_core::synth::{generate, SynthConfig};
use failprobe_core::trace::{split_dataset, Dataset, Rollout, ScoreTrace, Split, SplitAssignment};
use failprobe_core::Error as CoreError;

use crate::artifacts::{load_band, load_model, save_band, save_model, write_json, BandFile, ModelFile};
use crate::config::{load_synth_config, load_train_config};
use crate::error::FileError;
use crate::report::{eval_table, grid_table, sweep_table, Table};
use crate::rollout_file::{load_dataset, save_dataset};

#[derive(Debug, Parser)]
#[command(name = "failprobe", version, about = "Failure detectors for recorded policy rollouts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic rollout dataset.
    Synth(SynthArgs),
    /// Fit a detector on the train split and save it.
    Train(TrainArgs),
    /// Write per-step scores for every rollout.
    Score(ScoreArgs),
    /// Fit a conformal band on eval-seen successes.
    Calibrate(CalibrateArgs),
    /// Confusion metrics on eval-seen and eval-unseen under a band.
    Eval(EvalArgs),
    /// Balanced accuracy and detection time across significance levels.
    Sweep(SweepArgs),
    /// Learning-rate x L2 grid search for a learned probe.
    Grid(GridArgs),
    /// Dump aggregated per-step embeddings.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator config; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write per-rollout failure onsets as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 2)]
    pub n_unseen: usize,
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Mahalanobis,
    EuclidKnn,
    CosineKnn,
    PcaKmeans,
}

/// Parameters of the chosen method; unused ones are ignored.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long, default_value_t = ScoreMethod::DEFAULT_KNN)]
    pub k: usize,
    #[arg(long, default_value_t = 32)]
    pub pca_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub clusters: usize,
    /// Action subspace for total variation: all, translation, rotation, gripper.
    #[arg(long)]
    pub subspace: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Token-axis aggregation (first, last, mean, first_and_last).
    #[arg(long, default_value = "last")]
    pub agg: String,
    /// Horizon-axis aggregation; selects flow embeddings together with `--diff-agg`.
    #[arg(long)]
    pub hori_agg: Option<String>,
    #[arg(long)]
    pub diff_agg: Option<String>,
    /// Score with the running sum of per-step scores.
    #[arg(long)]
    pub cumsum: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    /// TOML optimizer config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Method name, e.g. mlp, lstm, rnd_score, euclid_knn.
    #[arg(long)]
    pub detector: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, conflicts_with = "method")]
    pub model: Option<PathBuf>,
    /// Fit this method on the train split instead of loading a model.
    #[arg(long, required_unless_present = "model")]
    pub method: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub method_args: MethodArgs,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Split,
    InSample,
}

impl From<ModeArg> for CalibrationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Split => CalibrationMode::Split,
            ModeArg::InSample => CalibrationMode::InSample,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Split)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Saved band; otherwise one is calibrated at `--alpha`.
    #[arg(long, conflicts_with = "alpha")]
    pub band: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Split)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestSplit {
    EvalSeen,
    EvalUnseen,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = TestSplit::EvalUnseen)]
    pub test_split: TestSplit,
    #[arg(long, value_enum, default_value_t = ModeArg::Split)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// mlp or lstm.
    #[arg(long, default_value = "mlp")]
    pub detector: String,
    #[arg(long, value_delimiter = ',')]
    pub lrs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub l2s: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    /// Save the best configuration, refit on the train split.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "last")]
    pub agg: String,
    #[arg(long)]
    pub hori_agg: Option<String>,
    #[arg(long)]
    pub diff_agg: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
}

fn invalid(msg: impl Into<String>) -> FileError {
    FileError::Core(CoreError::InvalidArgument(msg.into()))
}

fn agg_method(s: &str) -> Result<AggMethod, FileError> {
    AggMethod::parse(s).ok_or_else(|| invalid(format!("unknown aggregation `{s}`")))
}

fn aggregation(token: &str, hori: Option<&str>, diff: Option<&str>) -> Result<AggregationSpec, FileError> {
    match (hori, diff) {
        (None, None) => Ok(AggregationSpec::token(agg_method(token)?)),
        (Some(h), Some(d)) => Ok(AggregationSpec::flow(agg_method(h)?, agg_method(d)?)),
        _ => Err(invalid("--hori-agg and --diff-agg must be given together")),
    }
}

fn method_of(name: &str, a: &MethodArgs) -> Result<ScoreMethod, FileError> {
    let mut m = ScoreMethod::parse(name)?;
    match &mut m {
        ScoreMethod::EmbeddingDistance { metric } => {
            if let Some(choice) = a.metric {
                *metric = match choice {
                    MetricArg::Mahalanobis => DistanceMetric::Mahalanobis,
                    MetricArg::EuclidKnn => DistanceMetric::EuclidKnn { k: a.k },
                    MetricArg::CosineKnn => DistanceMetric::CosineKnn { k: a.k },
                    MetricArg::PcaKmeans => DistanceMetric::PcaKmeans {
                        dim: a.pca_dim,
                        clusters: a.clusters,
                    },
                };
            } else {
                match metric {
                    DistanceMetric::EuclidKnn { k } | DistanceMetric::CosineKnn { k } => *k = a.k,
                    DistanceMetric::PcaKmeans { dim, clusters } => {
                        *dim = a.pca_dim;
                        *clusters = a.clusters;
                    }
                    DistanceMetric::Mahalanobis => {}
                }
            }
        }
        ScoreMethod::TotalVariation { subspace } => {
            if let Some(s) = &a.subspace {
                *subspace = SubspaceName::parse(s).ok_or_else(|| invalid(format!("unknown subspace `{s}`")))?;
            }
        }
        ScoreMethod::ClusterEntropy { threshold } => {
            if let Some(t) = a.threshold {
                *threshold = t;
            }
        }
        ScoreMethod::Stac { bandwidth } | ScoreMethod::StacSingle { bandwidth } => {
            if let Some(b) = a.bandwidth {
                *bandwidth = b;
            }
        }
        _ => {}
    }
    Ok(m)
}

fn train_config(o: &TrainOpts, seed: u64) -> Result<TrainConfig, FileError> {
    let mut c = match &o.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.epochs {
        c.epochs = v;
    }
    if let Some(v) = o.lr {
        c.learning_rate = v;
    }
    if let Some(v) = o.l2 {
        c.l2_weight = v;
    }
    if let Some(v) = o.hidden {
        c.hidden = v;
    }
    if let Some(v) = o.batch {
        c.batch_rollouts = v;
    }
    // An explicit config file keeps its own seed.
    if o.config.is_none() {
        c.seed = seed;
    }
    c.validate()?;
    Ok(c)
}

fn detector_config(name: &str, m: &MethodArgs, t: &TrainOpts, seed: u64) -> Result<DetectorConfig, FileError> {
    let mut cfg = DetectorConfig::new(method_of(name, m)?);
    cfg.aggregation = aggregation(&m.agg, m.hori_agg.as_deref(), m.diff_agg.as_deref())?;
    cfg.cumsum = m.cumsum;
    cfg.train = train_config(t, seed)?;
    Ok(cfg)
}

fn split_of(ds: &Dataset, a: &SplitArgs) -> Result<SplitAssignment, FileError> {
    Ok(split_dataset(ds, a.n_unseen, a.train_frac, a.seed)?)
}

/// Split stored with the model when present, otherwise recomputed.
fn model_split(ds: &Dataset, model: &ModelFile, a: &SplitArgs) -> Result<SplitAssignment, FileError> {
    match &model.split {
        Some(s) => Ok(s.clone()),
        None => split_of(ds, a),
    }
}

fn check_dims(det: &Detector, ds: &Dataset) -> Result<(), FileError> {
    let Some(expected) = det.input_dim() else {
        return Ok(());
    };
    let first = &ds.rollouts()[0];
    let got = det.config.aggregation.output_dim(first.steps[0].embedding.shape())?;
    if got != expected {
        return Err(FileError::IncompatibleDims {
            expected,
            got,
            rollout_id: first.rollout_id.clone(),
        });
    }
    Ok(())
}

fn scored(det: &Detector, rollouts: &[&Rollout]) -> Result<(Vec<ScoreTrace>, Vec<bool>), FileError> {
    Ok((det.score_all(rollouts)?, labels_of(rollouts)))
}

fn calibrate_on(
    det: &Detector,
    ds: &Dataset,
    split: &SplitAssignment,
    alpha: f64,
    mode: ModeArg,
) -> Result<ConformalBand, FileError> {
    let succ: Vec<&Rollout> = split
        .select(ds, Split::EvalSeen)
        .into_iter()
        .filter(|r| !r.label.is_failure())
        .collect();
    let traces = det.score_all(&succ)?;
    let cfg = BandConfig {
        mode: mode.into(),
        ..BandConfig::new(alpha)
    };
    Ok(fit_band(&traces, &cfg)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), FileError> {
    let mut cfg = match &a.config {
        Some(p) => load_synth_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (ds, truth) = generate(&cfg)?;
    save_dataset(&ds, &a.out)?;
    if let Some(p) = &a.truth {
        let onsets: serde_json::Map<String, serde_json::Value> = truth
            .onset_steps
            .iter()
            .map(|(id, &s)| (id.clone(), s.into()))
            .collect();
        let doc = serde_json::json!({
            "seed": cfg.seed,
            "rollout_len": truth.rollout_len,
            "task_ids": truth.task_ids,
            "onset_steps": onsets,
        });
        write_json(&doc, p, true)?;
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let split = split_of(&ds, &a.split)?;
    let cfg = detector_config(&a.detector, &a.method, &a.train, a.split.seed)?;
    let det = Detector::fit(cfg, &split.select(&ds, Split::Train))?;
    save_model(&ModelFile::new(det, Some(split), a.split.seed), &a.out)
}

fn score_table(det: &Detector, ds: &Dataset, split: &SplitAssignment) -> Result<Table, FileError> {
    let mut t = Table::new(&["rollout_id", "task_id", "split", "label", "step", "score"]);
    for r in ds.rollouts() {
        let trace = det.score(r)?;
        let tag = split.split_of(&r.rollout_id).map_or("", Split::tag);
        for (step, v) in trace.values.iter().enumerate() {
            t.push(vec![
                r.rollout_id.clone(),
                r.task_id.clone(),
                tag.to_string(),
                r.label.as_label().to_string(),
                step.to_string(),
                v.to_string(),
            ]);
        }
    }
    Ok(t)
}

fn cmd_score(a: &ScoreArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let (det, split) = match (&a.model, &a.method) {
        (Some(p), _) => {
            let m = load_model(p)?;
            let split = model_split(&ds, &m, &a.split)?;
            (m.detector, split)
        }
        (None, Some(name)) => {
            let split = split_of(&ds, &a.split)?;
            let cfg = detector_config(name, &a.method_args, &a.train, a.split.seed)?;
            let det = if cfg.method.needs_training() {
                Detector::fit(cfg, &split.select(&ds, Split::Train))?
            } else {
                Detector::fit(cfg, &[])?
            };
            (det, split)
        }
        (None, None) => return Err(invalid("either --model or --method is required")),
    };
    check_dims(&det, &ds)?;
    score_table(&det, &ds, &split)?.write(&a.out)
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let m = load_model(&a.model)?;
    check_dims(&m.detector, &ds)?;
    let split = model_split(&ds, &m, &a.split)?;
    let band = calibrate_on(&m.detector, &ds, &split, a.alpha, a.mode)?;
    save_band(&BandFile::from_band(&band, &m.detector.config.method.tag()), &a.out)
}

fn cmd_eval(a: &EvalArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let m = load_model(&a.model)?;
    check_dims(&m.detector, &ds)?;
    let split = model_split(&ds, &m, &a.split)?;
    let band = match &a.band {
        Some(p) => load_band(p)?.to_band()?,
        None => calibrate_on(&m.detector, &ds, &split, a.alpha.unwrap_or(0.1), a.mode)?,
    };
    let mut rows = Vec::new();
    for s in [Split::EvalSeen, Split::EvalUnseen] {
        let (traces, labels) = scored(&m.detector, &split.select(&ds, s))?;
        rows.push((confusion_under_band(&traces, &labels, &band, s.tag())?, band.alpha()));
    }
    eval_table(&rows, &m.detector.config.method.tag()).write(&a.out)
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let m = load_model(&a.model)?;
    check_dims(&m.detector, &ds)?;
    let split = model_split(&ds, &m, &a.split)?;
    let (cal, cal_labels) = scored(&m.detector, &split.select(&ds, Split::EvalSeen))?;
    let test_split = match a.test_split {
        TestSplit::EvalSeen => Split::EvalSeen,
        TestSplit::EvalUnseen => Split::EvalUnseen,
    };
    let (test, test_labels) = scored(&m.detector, &split.select(&ds, test_split))?;
    let base = BandConfig {
        mode: a.mode.into(),
        ..BandConfig::default()
    };
    let curve = alpha_sweep(&cal, &cal_labels, &test, &test_labels, &a.alphas, &base)?;
    sweep_table(&curve, &m.detector.config.method.tag(), test_split.tag()).write(&a.out)
}

fn cmd_grid(a: &GridArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let split = split_of(&ds, &a.split)?;
    let base = detector_config(&a.detector, &a.method, &a.train, a.split.seed)?;
    if !matches!(base.method, ScoreMethod::Mlp | ScoreMethod::Lstm) {
        return Err(invalid(format!("grid search needs mlp or lstm, got `{}`", a.detector)));
    }
    let lrs = a.lrs.clone().unwrap_or_else(|| DEFAULT_PROBE_LEARNING_RATES.to_vec());
    let l2s = a.l2s.clone().unwrap_or_else(|| DEFAULT_PROBE_L2_WEIGHTS.to_vec());
    let grid = probe_grid(&base, &lrs, &l2s);
    let train = split.select(&ds, Split::Train);
    let res = detector_grid_search(&grid, &train, &split.select(&ds, Split::EvalSeen))?;
    grid_table(&res.table, res.best_index).write(&a.out)?;
    if let Some(p) = &a.model_out {
        let det = Detector::fit(res.best().clone(), &train)?;
        save_model(&ModelFile::new(det, Some(split), a.split.seed), p)?;
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<(), FileError> {
    let ds = load_dataset(&a.data)?;
    let split = split_of(&ds, &a.split)?;
    let agg = aggregation(&a.agg, a.hori_agg.as_deref(), a.diff_agg.as_deref())?;
    let mut table: Option<Table> = None;
    for r in ds.rollouts() {
        let e = embed_rollout(r, &agg)?;
        let t = table.get_or_insert_with(|| {
            let mut h: Vec<String> = ["rollout_id", "task_id", "split", "label", "step"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            h.extend((0..e.cols()).map(|j| format!("e{j}")));
            Table::new(&h)
        });
        let tag = split.split_of(&r.rollout_id).map_or("", Split::tag);
        for step in 0..e.rows() {
            let mut row = vec![
                r.rollout_id.clone(),
                r.task_id.clone(),
                tag.to_string(),
                r.label.as_label().to_string(),
                step.to_string(),
            ];
            row.extend(e.row(step).iter().map(|v| v.to_string()));
            t.push(row);
        }
    }
    table.expect("datasets are non-empty").write(&a.out)
}

pub fn run(cli: &Cli) -> Result<(), FileError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Grid(a) => cmd_grid(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
    }
}

/// `{"error":{"kind":..,"message":..}}` on one line.
pub fn error_json(e: &FileError) -> String {
    serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}}).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", error_json(&e));
            1
        }
    }
}
