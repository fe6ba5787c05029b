//! Cross-validation splits, the training loop with early stopping, and
//! macro-averaged metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusionKind, FusionModel, ModelConfig, ModelState};
use crate::nn::{adam_step, AdamConfig};
use crate::types::{LabeledWindow, SessionKey, WindowSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Leave one session id out (across all participants).
    Loso,
    /// Leave one participant out.
    Lopo,
}

impl SplitKind {
    pub fn key(self) -> &'static str {
        match self {
            SplitKind::Loso => "loso",
            SplitKind::Lopo => "lopo",
        }
    }

    pub fn parse(s: &str) -> Option<SplitKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "loso" => Some(SplitKind::Loso),
            "lopo" => Some(SplitKind::Lopo),
            _ => None,
        }
    }

    /// The held-out unit a session belongs to.
    pub fn unit_of<'a>(self, participant_id: &'a str, session_id: &'a str) -> &'a str {
        match self {
            SplitKind::Loso => session_id,
            SplitKind::Lopo => participant_id,
        }
    }

    pub fn unit_of_window(self, src: &WindowSource) -> &str {
        self.unit_of(&src.participant_id, &src.session_id)
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Loso => "LOSO",
            SplitKind::Lopo => "LOPO",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test: Vec<String>,
    pub validation: Vec<String>,
    pub train: Vec<String>,
}

impl Fold {
    pub fn role(&self, unit: &str) -> Option<Role> {
        if self.test.iter().any(|u| u == unit) {
            Some(Role::Test)
        } else if self.validation.iter().any(|u| u == unit) {
            // With two units the validation unit doubles as training data.
            if self.train.iter().any(|u| u == unit) {
                Some(Role::TrainAndValidation)
            } else {
                Some(Role::Validation)
            }
        } else if self.train.iter().any(|u| u == unit) {
            Some(Role::Train)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    TrainAndValidation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub folds: Vec<Fold>,
}

/// One fold per held-out unit, in sorted unit order. Validation is the next
/// unit cyclically; with exactly two units it is the training unit itself.
pub fn make_splits(sessions: &[SessionKey], kind: SplitKind) -> Result<SplitSpec> {
    let units: Vec<String> = sessions
        .iter()
        .map(|k| String::from(kind.unit_of(&k.participant_id, &k.session_id)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if units.len() < 2 {
        return Err(Error::Split(format!(
            "{} needs at least 2 distinct {}, found {}",
            kind,
            match kind {
                SplitKind::Loso => "sessions",
                SplitKind::Lopo => "participants",
            },
            units.len()
        )));
    }
    let n = units.len();
    let folds = (0..n)
        .map(|i| {
            let val = units[(i + 1) % n].clone();
            let train: Vec<String> = units
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && (n == 2 || j != (i + 1) % n))
                .map(|(_, u)| u.clone())
                .collect();
            Fold {
                test: vec![units[i].clone()],
                validation: vec![val],
                train,
            }
        })
        .collect();
    Ok(SplitSpec { kind, folds })
}

/// Windows of one fold, partitioned by role.
pub struct FoldData<'a> {
    pub train: Vec<&'a LabeledWindow>,
    pub validation: Vec<&'a LabeledWindow>,
    pub test: Vec<&'a LabeledWindow>,
}

pub fn partition<'a>(windows: &'a [LabeledWindow], kind: SplitKind, fold: &Fold) -> FoldData<'a> {
    let mut d = FoldData {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for w in windows {
        match fold.role(kind.unit_of_window(&w.source)) {
            Some(Role::Train) => d.train.push(w),
            Some(Role::Validation) => d.validation.push(w),
            Some(Role::TrainAndValidation) => {
                d.train.push(w);
                d.validation.push(w);
            }
            Some(Role::Test) => d.test.push(w),
            None => {}
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        TrainConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            max_epochs: 150,
            batch_size: 32,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("lr, batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

/// Resumable training state: current weights, the best weights so far and
/// the early-stopping bookkeeping.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    model: FusionModel,
    best: ModelState,
    history: History,
    stale: usize,
    done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub train_config: TrainConfig,
    pub model: ModelState,
    pub best: ModelState,
    pub history: History,
    pub stale: usize,
    pub done: bool,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = FusionModel::new(model_config, cfg.seed)?;
        let best = model.to_state();
        Ok(Trainer {
            cfg,
            model,
            best,
            history: History {
                best_val_f1: f64::NEG_INFINITY,
                ..History::default()
            },
            stale: 0,
            done: false,
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn model(&self) -> &FusionModel {
        &self.model
    }

    /// One pass over `train` in a seeded shuffled order, then validation.
    /// The shuffle depends only on `(seed, epoch)`, so a resumed run sees
    /// the same batches as an uninterrupted one.
    pub fn run_epoch(&mut self, train: &[&LabeledWindow], validation: &[&LabeledWindow]) -> Result<&EpochRecord> {
        if self.done {
            return Err(Error::Precondition("training already finished".into()));
        }
        if train.is_empty() {
            return Err(Error::Precondition("empty training set".into()));
        }
        let epoch = self.history.epochs.len();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let adam = self.cfg.adam();
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let ws: Vec<&LabeledWindow> = chunk.iter().map(|&i| train[i]).collect();
            let batch = self.model.make_batch(&ws)?;
            let targets = self.model.targets(&ws)?;
            let loss = self.model.accumulate_gradients(&batch, &targets)?;
            adam_step(self.model.params_mut(), &adam);
            loss_sum += loss * ws.len() as f64;
            count += ws.len();
        }
        let val = if validation.is_empty() { train } else { validation };
        let val_f1 = evaluate(&self.model, val)?.macro_f1;
        let improved = val_f1 > self.history.best_val_f1;
        if improved {
            self.history.best_val_f1 = val_f1;
            self.history.best_epoch = epoch;
            self.best = self.model.to_state();
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            val_f1,
            improved,
        });
        if self.stale > self.cfg.patience {
            self.done = true;
            self.history.stopped_early = true;
        } else if self.history.epochs.len() >= self.cfg.max_epochs {
            self.done = true;
        }
        Ok(self.history.epochs.last().expect("just pushed"))
    }

    /// The best-validation model.
    pub fn best_model(&self) -> Result<FusionModel> {
        FusionModel::from_state(self.best.clone())
    }

    pub fn into_best(self) -> Result<(FusionModel, History)> {
        Ok((FusionModel::from_state(self.best)?, self.history))
    }

    pub fn to_state(&self) -> TrainerState {
        TrainerState {
            train_config: self.cfg.clone(),
            model: self.model.to_state(),
            best: self.best.clone(),
            history: self.history.clone(),
            stale: self.stale,
            done: self.done,
        }
    }

    pub fn from_state(state: TrainerState) -> Result<Self> {
        state.train_config.validate()?;
        Ok(Trainer {
            cfg: state.train_config,
            model: FusionModel::from_state(state.model)?,
            best: state.best,
            history: state.history,
            stale: state.stale,
            done: state.done,
        })
    }
}

/// Trains until early stopping or `max_epochs`; returns the best model.
pub fn train_fold<F>(
    train: &[&LabeledWindow],
    validation: &[&LabeledWindow],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(FusionModel, History)>
where
    F: FnMut(&EpochRecord),
{
    let classes: BTreeSet<u8> = train.iter().map(|w| w.label.id()).collect();
    if classes.len() < 2 {
        return Err(Error::Precondition(format!(
            "training set needs at least 2 classes, has {}",
            classes.len()
        )));
    }
    let mut t = Trainer::new(model_config.clone(), cfg.clone())?;
    while !t.is_done() {
        on_epoch(t.run_epoch(train, validation)?);
    }
    t.into_best()
}

/// Confusion matrix, rows = true class, columns = predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub n: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n: usize) -> Self {
        Confusion {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_pairs(n: usize, truth: &[usize], pred: &[usize]) -> Self {
        let mut c = Confusion::new(n);
        for (&t, &p) in truth.iter().zip(pred) {
            c.add(t, p);
        }
        c
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.n).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, class)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class precision, recall and F1 (0 where undefined).
    pub fn class_metrics(&self, class: usize) -> (f64, f64, f64) {
        let tp = self.get(class, class) as f64;
        let pp = self.predicted(class) as f64;
        let sp = self.support(class) as f64;
        let p = if pp > 0.0 { tp / pp } else { 0.0 };
        let r = if sp > 0.0 { tp / sp } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f)
    }

    /// Classes that occur as a true label or a prediction.
    pub fn present_classes(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&c| self.support(c) > 0 || self.predicted(c) > 0)
            .collect()
    }

    pub fn metrics(&self) -> Metrics {
        let classes = self.present_classes();
        let k = classes.len().max(1) as f64;
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for &c in &classes {
            let (cp, cr, cf) = self.class_metrics(c);
            p += cp;
            r += cr;
            f += cf;
        }
        let correct: u64 = (0..self.n).map(|c| self.get(c, c)).sum();
        Metrics {
            macro_precision: p / k,
            macro_recall: r / k,
            macro_f1: f / k,
            accuracy: if self.total() > 0 {
                correct as f64 / self.total() as f64
            } else {
                0.0
            },
            count: self.total() as usize,
        }
    }
}

/// Macro averages over the classes present in the truth or the predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub predictions: Vec<usize>,
}

/// Inference batch size used by [`predict`].
const EVAL_BATCH: usize = 64;

pub fn predict(model: &FusionModel, windows: &[&LabeledWindow]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_BATCH) {
        let batch = model.make_batch(chunk)?;
        out.extend(model.forward_batch(&batch)?.iter().map(|o| o.predicted()));
    }
    Ok(out)
}

pub fn evaluate(model: &FusionModel, windows: &[&LabeledWindow]) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Precondition("empty evaluation set".into()));
    }
    let truth = model.targets(windows)?;
    let predictions = predict(model, windows)?;
    let confusion = Confusion::from_pairs(model.config().num_classes, &truth, &predictions);
    let m = confusion.metrics();
    Ok(Evaluation {
        macro_precision: m.macro_precision,
        macro_recall: m.macro_recall,
        macro_f1: m.macro_f1,
        accuracy: m.accuracy,
        confusion,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_units: Vec<String>,
    pub validation_units: Vec<String>,
    pub train_windows: usize,
    pub test_windows: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: SplitKind,
    pub fusion: FusionKind,
    pub pairs: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    /// Sum of the per-fold confusion matrices.
    pub confusion: Confusion,
}

impl EvalReport {
    pub fn from_folds(split: SplitKind, model: &ModelConfig, mut folds: Vec<FoldReport>) -> EvalReport {
        folds.sort_by_key(|f| f.fold);
        let n = model.num_classes;
        let mut confusion = Confusion::new(n);
        for f in &folds {
            confusion.merge(&f.confusion);
        }
        let col = |g: fn(&FoldReport) -> f64| MeanStd::of(&folds.iter().map(g).collect::<Vec<_>>());
        EvalReport {
            split,
            fusion: model.fusion,
            pairs: model.active_pairs.iter().map(|p| p.key()).collect(),
            precision: col(|f| f.precision),
            recall: col(|f| f.recall),
            f1: col(|f| f.f1),
            folds,
            confusion,
        }
    }

    /// Plain-text table: one row per fold plus the mean +- std row, in percent.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} / {} fusion ({} pairs)\n{:<12}{:>18}{:>18}{:>18}\n",
            self.split,
            self.fusion,
            self.pairs.len(),
            "Fold",
            "Precision",
            "Recall",
            "F1"
        );
        for f in &self.folds {
            s += &format!(
                "{:<12}{:>18.2}{:>18.2}{:>18.2}\n",
                format!("{} ({})", f.fold, f.test_units.join(",")),
                100.0 * f.precision,
                100.0 * f.recall,
                100.0 * f.f1
            );
        }
        let pm = |m: &MeanStd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
        s += &format!(
            "{:<12}{:>18}{:>18}{:>18}\n",
            "Mean",
            pm(&self.precision),
            pm(&self.recall),
            pm(&self.f1)
        );
        s
    }
}

/// Trains and tests one fold of `spec`.
pub fn run_fold<F>(
    windows: &[LabeledWindow],
    spec: &SplitSpec,
    fold_index: usize,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<(FoldReport, FusionModel, History)>
where
    F: FnMut(&EpochRecord),
{
    let fold = spec
        .folds
        .get(fold_index)
        .ok_or_else(|| Error::Split(format!("fold {fold_index} out of range")))?;
    let data = partition(windows, spec.kind, fold);
    if data.test.is_empty() {
        return Err(Error::Split(format!("fold {fold_index} has no test windows")));
    }
    for w in data.train.iter().chain(&data.validation) {
        if fold.role(spec.kind.unit_of_window(&w.source)) == Some(Role::Test) {
            return Err(Error::Split("test window leaked into training".into()));
        }
    }
    let (model, history) = train_fold(&data.train, &data.validation, model_config, cfg, on_epoch)?;
    let ev = evaluate(&model, &data.test)?;
    let report = FoldReport {
        fold: fold_index,
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
    Ok((report, model, history))
}

/// Full cross-validation, folds run sequentially.
pub fn cross_validate<F>(
    windows: &[LabeledWindow],
    kind: SplitKind,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<EvalReport>
where
    F: FnMut(usize, &EpochRecord),
{
    let spec = make_splits(&session_keys(windows), kind)?;
    let mut folds = Vec::new();
    for i in 0..spec.folds.len() {
        let (r, _, _) = run_fold(windows, &spec, i, model_config, cfg, |e| on_epoch(i, e))?;
        folds.push(r);
    }
    Ok(EvalReport::from_folds(kind, model_config, folds))
}

/// Distinct sessions that windows came from, sorted.
pub fn session_keys(windows: &[LabeledWindow]) -> Vec<SessionKey> {
    windows
        .iter()
        .map(|w| SessionKey {
            participant_id: w.source.participant_id.clone(),
            session_id: w.source.session_id.clone(),
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Drops windows from excluded sessions (`"participant/session"` or a bare
/// participant id).
pub fn exclude_sessions(windows: Vec<LabeledWindow>, excluded: &[String]) -> Vec<LabeledWindow> {
    if excluded.is_empty() {
        return windows;
    }
    windows
        .into_iter()
        .filter(|w| {
            let full = format!("{}/{}", w.source.participant_id, w.source.session_id);
            !excluded.iter().any(|e| *e == full || *e == w.source.participant_id)
        })
        .collect()
}

/// Per-class window counts.
pub fn class_counts(windows: &[&LabeledWindow]) -> BTreeMap<u8, usize> {
    let mut m = BTreeMap::new();
    for w in windows {
        *m.entry(w.label.id()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(p: usize, s: usize) -> Vec<SessionKey> {
        let mut v = Vec::new();
        for i in 0..p {
            for j in 0..s {
                v.push(SessionKey {
                    participant_id: format!("P{i}"),
                    session_id: format!("S{j}"),
                });
            }
        }
        v
    }

    #[test]
    fn split_counts() {
        let k = keys(6, 5);
        let loso = make_splits(&k, SplitKind::Loso).unwrap();
        assert_eq!(loso.folds.len(), 5);
        let lopo = make_splits(&k, SplitKind::Lopo).unwrap();
        assert_eq!(lopo.folds.len(), 6);
        for f in loso.folds.iter().chain(&lopo.folds) {
            assert_eq!(f.test.len(), 1);
            assert!(!f.train.contains(&f.test[0]));
            assert!(!f.validation.contains(&f.test[0]));
            assert!(!f.train.contains(&f.validation[0]));
        }
        assert_eq!(loso.folds[4].validation, vec![String::from("S0")]);
        assert!(matches!(make_splits(&keys(1, 1), SplitKind::Loso), Err(Error::Split(_))));
        let two = make_splits(&keys(1, 2), SplitKind::Loso).unwrap();
        assert_eq!(two.folds[0].train, two.folds[0].validation);
    }

    #[test]
    fn metrics_hand_example() {
        let c = Confusion::from_pairs(2, &[0, 0, 1, 1], &[0, 0, 0, 1]);
        let (p0, r0, f0) = c.class_metrics(0);
        assert!((p0 - 2.0 / 3.0).abs() < 1e-15 && r0 == 1.0 && (f0 - 0.8).abs() < 1e-15);
        let (p1, r1, f1) = c.class_metrics(1);
        assert!(p1 == 1.0 && r1 == 0.5 && (f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.metrics().macro_f1 - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn metric_extremes() {
        let t = [0, 1, 2, 3, 3];
        let all = Confusion::from_pairs(20, &t, &t).metrics();
        assert_eq!((all.macro_precision, all.macro_recall, all.macro_f1), (1.0, 1.0, 1.0));
        let wrong = Confusion::from_pairs(20, &t, &[5; 5]);
        for c in [0, 1, 2, 3] {
            assert_eq!(wrong.class_metrics(c).2, 0.0);
        }
        assert_eq!(wrong.metrics().macro_f1, 0.0);
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }
}
