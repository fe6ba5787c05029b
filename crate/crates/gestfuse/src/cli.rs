//! The `gestfuse` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gestfuse_core::interpret::{attention_heatmap, decomposition_error, default_subsets, llr_contributions, window_id, ModalitySubset};
use gestfuse_core::model::FusionModel;
use gestfuse_core::train::{evaluate, make_splits, partition, session_keys, EvalReport, FoldReport, SplitKind};
use gestfuse_core::window::segment;
use gestfuse_core::FusionKind;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{read_json, write_file, write_json, Error, Result};
use crate::io;
use crate::pipeline::{self, FoldOutcome, FoldRunOptions, Logger, MODEL_CKPT};
use crate::report;
use crate::windows;

pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_FILE: &str = "eval_report.json";
pub const FOLD_REPORT_FILE: &str = "fold_report.json";

#[derive(Debug, Parser)]
#[command(name = "gestfuse", version, about = "Multimodal wearable gesture recognition with late fusion")]
struct Cli {
    /// Do not echo log events to stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the session directory layout.
    Synth(SynthArgs),
    /// Align, resample and standardise raw sessions; export windows.
    Preprocess(PreprocessArgs),
    /// Train cross-validation folds (all, or one with --fold).
    Train(TrainArgs),
    /// Re-evaluate the fold models of a training run.
    Eval(EvalArgs),
    /// Export LLR contributions or attention weights for one window.
    Explain(ExplainArgs),
    /// Modality-subset ablation.
    Ablate(AblateArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Loso,
    Lopo,
    Both,
}

impl SplitArg {
    fn kinds(self) -> Vec<SplitKind> {
        match self {
            SplitArg::Loso => vec![SplitKind::Loso],
            SplitArg::Lopo => vec![SplitKind::Lopo],
            SplitArg::Both => vec![SplitKind::Loso, SplitKind::Lopo],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FusionArg {
    Llr,
    #[value(alias = "sa", alias = "attention")]
    SelfAttention,
}

impl From<FusionArg> for FusionKind {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Llr => FusionKind::Llr,
            FusionArg::SelfAttention => FusionKind::SelfAttention,
        }
    }
}

/// Flags layered over the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Sessions to leave out (ids or participant/session), comma separated.
    #[arg(long, value_delimiter = ',')]
    exclude: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if let Some(f) = self.fusion {
            c.fusion = f.into();
        }
        if let Some(e) = &self.exclude {
            c.excluded_sessions = e.clone();
        }
        if let Some(v) = self.epochs {
            c.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.train.patience = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.feature_dim {
            c.model.feature_dim = v;
        }
        if let Some(v) = self.stride {
            c.model.stride = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    participants: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Apply a random clock skew and offset to each session's sensors.
    #[arg(long)]
    skew: bool,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    clap_k: Option<f64>,
    #[arg(long)]
    clap_min_sep: Option<f64>,
    /// Skip alignment for data already on the video timeline.
    #[arg(long)]
    no_sync: bool,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Preprocessed dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    split: Option<SingleSplit>,
    /// Train only this fold.
    #[arg(long)]
    fold: Option<usize>,
    /// Continue from the trainer checkpoints under --out.
    #[arg(long)]
    resume: bool,
    /// Stop each fold after this many epochs, keeping a resumable checkpoint.
    #[arg(long)]
    halt_after: Option<usize>,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SingleSplit {
    Loso,
    Lopo,
}

impl From<SingleSplit> for SplitKind {
    fn from(s: SingleSplit) -> Self {
        match s {
            SingleSplit::Loso => SplitKind::Loso,
            SingleSplit::Lopo => SplitKind::Lopo,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Json,
    Svg,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Window id `participant/session@start`, e.g. `P01/S2@41.000`.
    #[arg(long)]
    window: String,
    /// Preprocessed dataset directory holding the window's session.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `default` for the standard 11 subsets, or a comma list such as `CAP,ACC+GYRO`.
    #[arg(long, default_value = "default")]
    subsets: String,
    #[arg(long, value_enum, default_value = "loso")]
    split: SplitArg,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Written by `train`, read by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub input: PathBuf,
    pub split: SplitKind,
    pub folds: usize,
    pub config: RunConfig,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 success, 1 runtime error, 2 usage.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} is not a directory", p.display())))
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} does not exist", p.display())))
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let stderr = !cli.quiet;
    match cli.command {
        Command::Synth(a) => synth(a, stderr),
        Command::Preprocess(a) => preprocess(a, stderr),
        Command::Train(a) => train(a, stderr),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain(a),
        Command::Ablate(a) => ablate(a, stderr),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn synth(a: SynthArgs, stderr: bool) -> Result<i32> {
    let mut cfg = a.common.resolve()?;
    if let Some(p) = a.participants {
        cfg.synth.num_participants = p;
    }
    if let Some(s) = a.sessions {
        cfg.synth.sessions_per_participant = s;
    }
    if let Some(n) = a.noise {
        cfg.synth.noise_sigma = n;
    }
    let synth = cfg.synth_config();
    let log = Logger::new(Some(&a.out), stderr)?;
    let mut sessions = pipeline::synthesize(&synth)?;
    if a.skew {
        sessions = pipeline::skew_sessions(&sessions, synth.seed)?;
    }
    for s in &sessions {
        io::save_session(&a.out, s)?;
    }
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    log.event("synth", json!({"sessions": sessions.len(), "out": a.out}));
    Ok(0)
}

fn preprocess(a: PreprocessArgs, stderr: bool) -> Result<i32> {
    require_dir(&a.input)?;
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.clap_k {
        cfg.preprocess.clap.k = k;
    }
    if let Some(s) = a.clap_min_sep {
        cfg.preprocess.clap.min_separation = s;
    }
    if a.no_sync {
        cfg.preprocess.sync = false;
    }
    let log = Logger::new(Some(&a.out), stderr)?;
    let sessions = io::load_dataset(&a.input)?;
    if sessions.is_empty() {
        return Err(Error::Data {
            path: a.input.clone(),
            msg: "no sessions found".into(),
        });
    }
    let pre = pipeline::preprocess_all(&sessions, &cfg.preprocess)?;
    for p in &pre {
        io::save_preprocessed(&a.out, p)?;
        for d in &p.devices {
            log.event(
                "sync",
                json!({"participant": p.session.participant_id, "session": p.session.session_id, "device": d}),
            );
        }
    }
    let ws = pipeline::dataset_windows(&pre, &cfg.windowing, &cfg.excluded_sessions)?;
    windows::save_windows(&a.out.join("windows"), &ws, &cfg.windowing)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    log.event("preprocess", json!({"sessions": pre.len(), "windows": ws.len()}));
    Ok(0)
}

fn fold_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("fold{i}"))
}

fn load_windows(input: &Path, cfg: &RunConfig) -> Result<Vec<gestfuse_core::LabeledWindow>> {
    require_dir(input)?;
    let pre = io::load_preprocessed_dataset(input)?;
    if pre.is_empty() {
        return Err(Error::Data {
            path: input.to_path_buf(),
            msg: "no preprocessed sessions found".into(),
        });
    }
    pipeline::dataset_windows(&pre, &cfg.windowing, &cfg.excluded_sessions)
}

fn write_eval(out: &Path, report: &EvalReport) -> Result<()> {
    write_json(&out.join(EVAL_FILE), report)?;
    write_file(&out.join("report.txt"), report.table().as_bytes())
}

fn train(a: TrainArgs, stderr: bool) -> Result<i32> {
    let mut cfg = a.common.resolve()?;
    if let Some(s) = a.split {
        cfg.split = s.into();
    }
    let windows = load_windows(&a.input, &cfg)?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config();
    let spec = make_splits(&session_keys(&windows), cfg.split)?;
    let folds: Vec<usize> = match a.fold {
        Some(f) if f >= spec.folds.len() => {
            return Err(Error::Usage(format!("--fold {f} out of range (0..{})", spec.folds.len())))
        }
        Some(f) => vec![f],
        None => (0..spec.folds.len()).collect(),
    };
    let log = Logger::new(Some(&a.out), stderr)?;
    write_json(
        &a.out.join(RUN_FILE),
        &RunManifest {
            input: a.input.clone(),
            split: cfg.split,
            folds: spec.folds.len(),
            config: cfg.clone(),
        },
    )?;
    let pool = pipeline::thread_pool()?;
    let tag = format!("{}:{}", cfg.split.key(), cfg.fusion.key());
    let outcomes: Vec<Result<(usize, FoldOutcome)>> = pool.install(|| {
        use rayon::prelude::*;
        folds
            .par_iter()
            .map(|&i| {
                let opts = FoldRunOptions {
                    dir: Some(fold_dir(&a.out, i)),
                    resume: a.resume,
                    halt_after: a.halt_after,
                    meta: json!({"fold": i, "split": cfg.split, "run": cfg}),
                };
                let o = pipeline::train_fold_resumable(&windows, &spec, i, &model_cfg, &train_cfg, &opts, &log, &tag)?;
                if let FoldOutcome::Finished { report, .. } = &o {
                    write_json(&fold_dir(&a.out, i).join(FOLD_REPORT_FILE), report)?;
                }
                Ok((i, o))
            })
            .collect()
    });
    let mut halted = false;
    for o in outcomes {
        if let (_, FoldOutcome::Halted { .. }) = o? {
            halted = true;
        }
    }
    if halted {
        log.event("halted", json!({"out": a.out}));
        return Ok(0);
    }
    // Aggregate whatever folds are complete on disk.
    let mut reports = Vec::new();
    for i in 0..spec.folds.len() {
        let p = fold_dir(&a.out, i).join(FOLD_REPORT_FILE);
        if p.is_file() {
            reports.push(read_json::<FoldReport>(&p)?);
        }
    }
    if reports.len() == spec.folds.len() {
        let report = EvalReport::from_folds(cfg.split, &model_cfg, reports);
        write_eval(&a.out, &report)?;
        log.event("report", json!({"f1": report.f1, "precision": report.precision, "recall": report.recall}));
        if stderr {
            eprint!("{}", report.table());
        }
    }
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let manifest_path = a.run.join(RUN_FILE);
    require_file(&manifest_path)?;
    let m: RunManifest = read_json(&manifest_path)?;
    let windows = load_windows(&m.input, &m.config)?;
    let spec = make_splits(&session_keys(&windows), m.split)?;
    let model_cfg = m.config.model_config()?;
    let mut reports = Vec::new();
    for (i, fold) in spec.folds.iter().enumerate() {
        let ckpt = fold_dir(&a.run, i).join(MODEL_CKPT);
        require_file(&ckpt)?;
        let (state, _) = checkpoint::load_model(&ckpt)?;
        let model = FusionModel::from_state(state)?;
        let data = partition(&windows, m.split, fold);
        let ev = evaluate(&model, &data.test)?;
        let trained: Option<FoldReport> = {
            let p = fold_dir(&a.run, i).join(FOLD_REPORT_FILE);
            if p.is_file() { Some(read_json(&p)?) } else { None }
        };
        reports.push(FoldReport {
            fold: i,
            test_units: fold.test.clone(),
            validation_units: fold.validation.clone(),
            train_windows: data.train.len(),
            test_windows: data.test.len(),
            precision: ev.macro_precision,
            recall: ev.macro_recall,
            f1: ev.macro_f1,
            accuracy: ev.accuracy,
            best_epoch: trained.as_ref().map_or(0, |r| r.best_epoch),
            epochs_run: trained.as_ref().map_or(0, |r| r.epochs_run),
            confusion: ev.confusion,
        });
    }
    let report = EvalReport::from_folds(m.split, &model_cfg, reports);
    write_eval(&a.out, &report)?;
    print!("{}", report.table());
    Ok(0)
}

fn parse_window_id(id: &str) -> Result<(String, String, f64)> {
    let bad = || Error::Usage(format!("window id `{id}` is not of the form participant/session@start"));
    let (ps, t) = id.split_once('@').ok_or_else(bad)?;
    let (p, s) = ps.split_once('/').ok_or_else(bad)?;
    let t: f64 = t.parse().map_err(|_| bad())?;
    if p.is_empty() || s.is_empty() || !t.is_finite() {
        return Err(bad());
    }
    Ok((p.to_string(), s.to_string(), t))
}

fn explain(a: ExplainArgs) -> Result<i32> {
    require_file(&a.checkpoint)?;
    require_dir(&a.input)?;
    let (p, s, t) = parse_window_id(&a.window)?;
    let (state, meta) = checkpoint::load_model(&a.checkpoint)?;
    let model = FusionModel::from_state(state)?;
    let mut windowing = meta
        .get("run")
        .and_then(|r| serde_json::from_value::<RunConfig>(r.clone()).ok())
        .map(|r| r.windowing)
        .unwrap_or_default();
    windowing.window_seconds = model.config().window_seconds;
    let dir = a.input.join(&p).join(&s);
    require_dir(&dir)?;
    let pre = io::load_preprocessed(&dir)?;
    let w = segment(&pre.session, &windowing)?
        .into_iter()
        .find(|w| (w.source.start - t).abs() < 5e-4)
        .ok_or_else(|| Error::Usage(format!("no window starts at {t} s in {p}/{s}")))?;
    let id = window_id(&w.source);
    let out = model.forward(&w)?;
    let (value, svg) = match out.kind {
        FusionKind::Llr => {
            let r = llr_contributions(&out, &id)?;
            let err = decomposition_error(&out)?;
            let svg = report::contributions_svg(&r);
            (json!({"label": w.label.id(), "decomposition_error": err, "contributions": r}), svg)
        }
        FusionKind::SelfAttention => {
            let r = attention_heatmap(&out, &id)?;
            let svg = report::attention_svg(&r);
            (json!({"label": w.label.id(), "max_row_sum_error": r.max_row_sum_error(), "attention": r}), svg)
        }
    };
    let stem = id.replace(['/', '@'], "_");
    let path = match a.format {
        Format::Json => {
            let p = a.out.join(format!("explain_{stem}.json"));
            write_json(&p, &value)?;
            p
        }
        Format::Svg => {
            let p = a.out.join(format!("explain_{stem}.svg"));
            write_file(&p, svg.as_bytes())?;
            p
        }
    };
    println!("{}", path.display());
    Ok(0)
}

fn ablate(a: AblateArgs, stderr: bool) -> Result<i32> {
    let cfg = a.common.resolve()?;
    let subsets = if a.subsets.trim() == "default" {
        default_subsets()
    } else {
        a.subsets
            .split(',')
            .map(|s| ModalitySubset::parse(s).map_err(|e| Error::Usage(format!("--subsets: {e}"))))
            .collect::<Result<Vec<_>>>()?
    };
    let windows = load_windows(&a.input, &cfg)?;
    let log = Logger::new(Some(&a.out), stderr)?;
    let table = pipeline::run_ablation(
        &windows,
        &subsets,
        &a.split.kinds(),
        &cfg.model_config()?,
        &cfg.train_config(),
        &log,
    )?;
    write_json(&a.out.join("ablation.json"), &json!({"config": cfg, "table": table}))?;
    write_file(&a.out.join("ablation.txt"), table.table().as_bytes())?;
    write_file(&a.out.join("ablation.svg"), report::ablation_svg(&table).as_bytes())?;
    print!("{}", table.table());
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let started = std::time::Instant::now();
    let r = pipeline::gradcheck(a.seed, a.feature_dim, a.batch)?;
    let secs = started.elapsed().as_secs_f64();
    println!(
        "max relative error {:.3e} over {} coordinates ({} skipped at kinks) in {secs:.1} s",
        r.max_rel_error, r.checked, r.skipped_kinks
    );
    println!(
        "worst coordinate {}: analytic {:.6e}, numeric {:.6e}; max relative error where |g| >= {:e}: {:.3e}",
        r.worst_index,
        r.analytic,
        r.numeric,
        gestfuse_core::nn::gradcheck::SIGNIFICANT_GRADIENT,
        r.max_rel_error_significant
    );
    if let Some(out) = &a.out {
        write_json(
            &out.join("gradcheck.json"),
            &json!({"seed": a.seed, "feature_dim": a.feature_dim, "batch": a.batch, "seconds": secs, "report": r}),
        )?;
    }
    Ok(if r.max_rel_error < GRADCHECK_TOLERANCE { 0 } else { 1 })
}
