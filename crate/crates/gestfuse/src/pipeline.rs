//! Pipeline stages shared by the CLI and the tests: parallel generation and
//! preprocessing, fold-parallel cross-validation, resumable fold training
//! and JSON-line logging.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use gestfuse_core::interpret::{ablate, AblationTable, ModalitySubset};
use gestfuse_core::model::FusionModel;
use gestfuse_core::nn::gradcheck::GradCheckReport;
use gestfuse_core::sync::{preprocess_session, PreprocessConfig, Preprocessed};
use gestfuse_core::synth::{generate_session, inject_clock_skew, SynthConfig};
use gestfuse_core::train::{
    evaluate, exclude_sessions, make_splits, partition, session_keys, EpochRecord, EvalReport, FoldReport,
    SplitKind, SplitSpec, TrainConfig, Trainer,
};
use gestfuse_core::window::{training_windows, WindowingConfig};
use gestfuse_core::{GestureLabel, LabeledWindow, ModelConfig, Session, WindowSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::checkpoint;
use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "MF_THREADS";

/// Worker count: `MF_THREADS` if set to a positive integer, else all cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))
}

/// Line-oriented JSON events to stderr and, optionally, `log.jsonl`.
pub struct Logger {
    file: Option<(PathBuf, Mutex<File>)>,
    stderr: bool,
}

impl Logger {
    pub fn silent() -> Logger {
        Logger { file: None, stderr: false }
    }

    pub fn new(out: Option<&Path>, stderr: bool) -> Result<Logger> {
        let file = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("log.jsonl");
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, Mutex::new(f)))
            }
            None => None,
        };
        Ok(Logger { file, stderr })
    }

    pub fn event(&self, event: &str, mut fields: Value) {
        if let Value::Object(m) = &mut fields {
            m.insert("event".into(), Value::String(event.into()));
        }
        let line = fields.to_string();
        if self.stderr {
            eprintln!("{line}");
        }
        if let Some((_, f)) = &self.file {
            let mut f = f.lock().unwrap_or_else(|p| p.into_inner());
            let _ = writeln!(f, "{line}");
        }
    }

    pub fn epoch(&self, tag: &str, fold: usize, r: &EpochRecord) {
        self.event(
            "epoch",
            json!({"run": tag, "fold": fold, "epoch": r.epoch, "loss": r.train_loss, "val_f1": r.val_f1, "improved": r.improved}),
        );
    }
}

/// All sessions of a synthetic dataset, generated in parallel.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<Session>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.num_participants)
        .flat_map(|p| (0..cfg.sessions_per_participant).map(move |s| (p, s)))
        .collect();
    let pool = thread_pool()?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| generate_session(cfg, p, s))
            .collect::<gestfuse_core::Result<Vec<_>>>()
    })?)
}

/// Applies a seeded clock skew in `[0.95, 1.05]` and offset in `[-5, 5]` s
/// to every session, as a watch/glove clock would drift from the video.
pub fn skew_sessions(sessions: &[Session], seed: u64) -> Result<Vec<Session>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sessions
        .iter()
        .map(|s| {
            let skew = rng.random_range(0.95..=1.05);
            let offset = rng.random_range(-5.0..=5.0);
            Ok(inject_clock_skew(s, skew, offset)?)
        })
        .collect()
}

pub fn preprocess_all(sessions: &[Session], cfg: &PreprocessConfig) -> Result<Vec<Preprocessed>> {
    let pool = thread_pool()?;
    Ok(pool.install(|| {
        sessions
            .par_iter()
            .map(|s| preprocess_session(s, cfg))
            .collect::<gestfuse_core::Result<Vec<_>>>()
    })?)
}

/// Trainable windows of every session, minus excluded sessions.
pub fn dataset_windows(pre: &[Preprocessed], cfg: &WindowingConfig, excluded: &[String]) -> Result<Vec<LabeledWindow>> {
    let mut all = Vec::new();
    for p in pre {
        all.extend(training_windows(p, cfg)?);
    }
    Ok(exclude_sessions(all, excluded))
}

/// What a resumable fold run ended with.
#[allow(clippy::large_enum_variant)]
pub enum FoldOutcome {
    Finished {
        report: FoldReport,
        model: FusionModel,
    },
    /// Stopped by `halt_after` with a trainer checkpoint on disk.
    Halted { epochs: usize },
}

/// Options for [`train_fold_resumable`].
#[derive(Debug, Clone, Default)]
pub struct FoldRunOptions {
    /// Directory for `trainer.ckpt` (rewritten after every epoch) and the
    /// final `model.ckpt`. Without one nothing is persisted.
    pub dir: Option<PathBuf>,
    /// Continue from `dir/trainer.ckpt` if it exists.
    pub resume: bool,
    /// Stop after this many epochs in total, leaving a resumable checkpoint.
    pub halt_after: Option<usize>,
    /// Metadata stored in checkpoint headers.
    pub meta: Value,
}

pub const TRAINER_CKPT: &str = "trainer.ckpt";
pub const MODEL_CKPT: &str = "model.ckpt";

/// Trains and tests fold `i` of `spec`, persisting progress as requested.
#[allow(clippy::too_many_arguments)]
pub fn train_fold_resumable(
    windows: &[LabeledWindow],
    spec: &SplitSpec,
    i: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: &FoldRunOptions,
    log: &Logger,
    tag: &str,
) -> Result<FoldOutcome> {
    let fold = spec
        .folds
        .get(i)
        .ok_or_else(|| Error::Usage(format!("fold {i} out of range (0..{})", spec.folds.len())))?;
    let data = partition(windows, spec.kind, fold);
    if data.test.is_empty() {
        return Err(gestfuse_core::Error::Split(format!("fold {i} has no test windows")).into());
    }
    let trainer_path = opts.dir.as_ref().map(|d| d.join(TRAINER_CKPT));
    let mut trainer = match &trainer_path {
        Some(p) if opts.resume && p.exists() => {
            let (state, _) = checkpoint::load_trainer(p)?;
            if state.model.config != *model_cfg || state.train_config != *train_cfg {
                return Err(Error::Usage(format!(
                    "{} was written with a different configuration",
                    p.display()
                )));
            }
            log.event("resume", json!({"run": tag, "fold": i, "epochs": state.history.epochs.len()}));
            Trainer::from_state(state)?
        }
        _ => Trainer::new(model_cfg.clone(), train_cfg.clone())?,
    };
    let validation = if data.validation.is_empty() { &data.train } else { &data.validation };
    while !trainer.is_done() {
        if let Some(h) = opts.halt_after {
            if trainer.history().epochs.len() >= h {
                if let Some(p) = &trainer_path {
                    checkpoint::save_trainer(p, &trainer.to_state(), opts.meta.clone())?;
                }
                return Ok(FoldOutcome::Halted { epochs: trainer.history().epochs.len() });
            }
        }
        let rec = trainer.run_epoch(&data.train, validation)?.clone();
        log.epoch(tag, i, &rec);
        if let Some(p) = &trainer_path {
            checkpoint::save_trainer(p, &trainer.to_state(), opts.meta.clone())?;
        }
    }
    let (model, history) = trainer.into_best()?;
    let ev = evaluate(&model, &data.test)?;
    let report = FoldReport {
        fold: i,
        test_units: fold.test.clone(),
        validation_units: fold.validation.clone(),
        train_windows: data.train.len(),
        test_windows: data.test.len(),
        precision: ev.macro_precision,
        recall: ev.macro_recall,
        f1: ev.macro_f1,
        accuracy: ev.accuracy,
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
        confusion: ev.confusion,
    };
    if let Some(d) = &opts.dir {
        checkpoint::save_model(&d.join(MODEL_CKPT), &model.to_state(), opts.meta.clone())?;
    }
    log.event(
        "fold",
        json!({"run": tag, "fold": i, "f1": report.f1, "precision": report.precision, "recall": report.recall, "best_epoch": report.best_epoch, "epochs": report.epochs_run}),
    );
    Ok(FoldOutcome::Finished { report, model })
}

/// Cross-validation with folds trained in parallel. Each fold is seeded
/// identically regardless of scheduling, so the report does not depend on
/// the thread count.
pub fn cross_validate(
    windows: &[LabeledWindow],
    kind: SplitKind,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    log: &Logger,
    tag: &str,
) -> Result<(EvalReport, Vec<FusionModel>)> {
    let spec = make_splits(&session_keys(windows), kind)?;
    let pool = thread_pool()?;
    let opts = FoldRunOptions::default();
    let results: Vec<(FoldReport, FusionModel)> = pool.install(|| {
        (0..spec.folds.len())
            .into_par_iter()
            .map(|i| match train_fold_resumable(windows, &spec, i, model_cfg, train_cfg, &opts, log, tag)? {
                FoldOutcome::Finished { report, model } => Ok((report, model)),
                FoldOutcome::Halted { .. } => unreachable!("no halt requested"),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (reports, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((EvalReport::from_folds(kind, model_cfg, reports), models))
}

/// The ablation harness over `subsets` x `splits`.
pub fn run_ablation(
    windows: &[LabeledWindow],
    subsets: &[ModalitySubset],
    splits: &[SplitKind],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    log: &Logger,
) -> Result<AblationTable> {
    let mut err = None;
    let table = ablate(subsets, splits, base, |subset, cfg, split| {
        let tag = format!("{}:{}", subset.name(), split.key());
        match cross_validate(windows, split, cfg, train_cfg, log, &tag) {
            Ok((r, _)) => {
                log.event("subset", json!({"subset": subset.name(), "split": split.key(), "f1": r.f1.mean}));
                Ok(r)
            }
            Err(Error::Core(e)) => Err(e),
            Err(e) => {
                let msg = e.to_string();
                err = Some(e);
                Err(gestfuse_core::Error::Config(msg))
            }
        }
    });
    match (table, err) {
        (_, Some(e)) => Err(e),
        (t, None) => Ok(t?),
    }
}

/// Model used by the `gradcheck` subcommand: the full default architecture
/// with the feature width reduced.
pub fn gradcheck_config(feature_dim: usize) -> Result<ModelConfig> {
    Ok(ModelConfig {
        feature_dim,
        ..ModelConfig::default()
    }
    .normalized()?)
}

/// Random inputs in `[-1, 1]` with distinct labels for every active pair.
pub fn random_windows(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<LabeledWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let inputs = cfg
                .active_pairs
                .iter()
                .map(|&p| {
                    let (t, c) = cfg.input_shape(p);
                    let data = (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (p, gestfuse_core::nn::Tensor::new(vec![t, c], data).expect("shape"))
                })
                .collect();
            LabeledWindow {
                label: GestureLabel::from_id((k * 7 % cfg.num_classes) as u8).expect("gesture id"),
                inputs,
                source: WindowSource {
                    participant_id: "random".into(),
                    session_id: "S0".into(),
                    start: k as f64,
                },
            }
        })
        .collect()
}

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Central-difference check of every parameter of a freshly initialised
/// model on a random batch.
pub fn gradcheck(seed: u64, feature_dim: usize, batch_size: usize) -> Result<GradCheckReport> {
    let cfg = gradcheck_config(feature_dim)?;
    let mut model = FusionModel::new(cfg.clone(), seed)?;
    let ws = random_windows(&cfg, batch_size, seed ^ 0x9e37_79b9_7f4a_7c15);
    let refs: Vec<&LabeledWindow> = ws.iter().collect();
    let batch = model.make_batch(&refs)?;
    let targets = model.targets(&refs)?;
    Ok(model.gradient_check(&batch, &targets, GRADCHECK_STEP)?)
}
