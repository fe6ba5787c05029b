//! Post-hoc views of the fusion stage and the modality-ablation harness.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusionKind, FusionOutput, ModelConfig};
use crate::train::{EvalReport, MeanStd, SplitKind};
use crate::types::{GestureLabel, Hand, ModalityPair, SensorType, WindowSource};

/// Stable identifier of a window: `participant/session@start`.
pub fn window_id(src: &WindowSource) -> String {
    format!("{}/{}@{:.3}", src.participant_id, src.session_id, src.start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    pub pair: String,
    /// Signed LLR of this pair for the predicted class.
    pub llr: f64,
    /// `1 / |llr|`; `None` when the LLR is exactly zero.
    pub score: Option<f64>,
    pub neutral: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub window: String,
    pub predicted: u8,
    pub predicted_name: String,
    pub contributions: Vec<PairContribution>,
}

pub fn llr_contributions(output: &FusionOutput, window: &str) -> Result<ContributionReport> {
    let llr = match (&output.kind, &output.per_pair_llr) {
        (FusionKind::Llr, Some(t)) => t,
        _ => return Err(Error::WrongFusionKind { expected: "llr" }),
    };
    let c = output.predicted();
    let contributions = output
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = llr.row(i)[c];
            PairContribution {
                pair: p.key(),
                llr: v,
                score: (v != 0.0).then(|| 1.0 / v.abs()),
                neutral: v == 0.0,
            }
        })
        .collect();
    let label = GestureLabel::from_id(c as u8).ok_or_else(|| Error::Data(format!("class {c} has no label")))?;
    Ok(ContributionReport {
        window: String::from(window),
        predicted: label.id(),
        predicted_name: String::from(label.name()),
        contributions,
    })
}

/// Largest elementwise gap between the summed per-pair LLRs and the fused
/// vector fed to the final layer.
pub fn decomposition_error(output: &FusionOutput) -> Result<f64> {
    let llr = output
        .per_pair_llr
        .as_ref()
        .ok_or(Error::WrongFusionKind { expected: "llr" })?;
    let mut worst = 0.0f64;
    for (i, f) in output.fused.iter().enumerate() {
        let s: f64 = (0..output.pairs.len()).map(|p| llr.row(p)[i]).sum();
        worst = worst.max((s - f).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub window: String,
    pub predicted: u8,
    pub predicted_name: String,
    /// Row and column labels.
    pub pairs: Vec<String>,
    /// Row `i` holds the weights pair `i` puts on every pair.
    pub matrix: Vec<Vec<f64>>,
}

impl AttentionReport {
    pub fn max_row_sum_error(&self) -> f64 {
        self.matrix
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn attention_heatmap(output: &FusionOutput, window: &str) -> Result<AttentionReport> {
    let a = match (&output.kind, &output.attention) {
        (FusionKind::SelfAttention, Some(t)) => t,
        _ => return Err(Error::WrongFusionKind { expected: "self_attention" }),
    };
    let n = output.pairs.len();
    let c = output.predicted();
    let label = GestureLabel::from_id(c as u8).ok_or_else(|| Error::Data(format!("class {c} has no label")))?;
    Ok(AttentionReport {
        window: String::from(window),
        predicted: label.id(),
        predicted_name: String::from(label.name()),
        pairs: output.pairs.iter().map(|p| p.key()).collect(),
        matrix: (0..n).map(|i| a.row(i).to_vec()).collect(),
    })
}

/// A set of sensor types, applied to both hands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySubset {
    sensors: Vec<SensorType>,
}

/// Display order used for subset names.
const NAME_ORDER: [SensorType; 4] = [SensorType::Capa, SensorType::Acc, SensorType::Gyro, SensorType::Quat];

impl ModalitySubset {
    pub fn new(sensors: &[SensorType]) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::Config("modality subset is empty".into()));
        }
        let sensors = NAME_ORDER.into_iter().filter(|s| sensors.contains(s)).collect();
        Ok(ModalitySubset { sensors })
    }

    /// Parses `CAP+ACC+GYRO` (also accepts `,` or `-` as separators).
    pub fn parse(s: &str) -> Result<Self> {
        let mut sensors = Vec::new();
        for part in s.split(['+', ',', '-']).filter(|p| !p.trim().is_empty()) {
            let t = SensorType::parse(part).ok_or_else(|| Error::Config(format!("unknown sensor type `{part}`")))?;
            sensors.push(t);
        }
        Self::new(&sensors)
    }

    pub fn sensors(&self) -> &[SensorType] {
        &self.sensors
    }

    pub fn pairs(&self) -> Vec<ModalityPair> {
        ModalityPair::ALL
            .into_iter()
            .filter(|p| self.sensors.contains(&p.sensor))
            .collect()
    }

    pub fn contains(&self, s: SensorType) -> bool {
        self.sensors.contains(&s)
    }

    pub fn is_inertial(&self) -> bool {
        self.sensors.iter().any(|s| *s != SensorType::Capa)
    }

    pub fn name(&self) -> String {
        let parts: Vec<&str> = self.sensors.iter().map(|s| s.short_name()).collect();
        parts.join("+")
    }
}

impl fmt::Display for ModalitySubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// The eleven combinations of the ablation table, best-known first.
pub fn default_subsets() -> Vec<ModalitySubset> {
    use SensorType::{Acc as A, Capa as C, Gyro as G, Quat as Q};
    let rows: [&[SensorType]; 11] = [
        &[C, A, G, Q],
        &[C, A, G],
        &[C, A, Q],
        &[A, G, Q],
        &[A, Q],
        &[A, G],
        &[C, Q],
        &[C, A],
        &[C],
        &[A],
        &[G],
    ];
    rows.iter().map(|r| ModalitySubset::new(r).expect("non-empty")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: String,
    pub split: SplitKind,
    pub f1: MeanStd,
    /// Predicted-class histogram pooled over all test folds.
    pub predictions: Vec<u64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, subset: &str, split: SplitKind) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.subset == subset && r.split == split)
    }

    /// One line per subset, F1 in percent for each split present.
    pub fn table(&self) -> String {
        let mut splits: Vec<SplitKind> = Vec::new();
        for r in &self.rows {
            if !splits.contains(&r.split) {
                splits.push(r.split);
            }
        }
        let mut s = format!("{:<18}", "Modalities");
        for k in &splits {
            s += &format!("{:>18}", format!("{k} F1"));
        }
        s.push('\n');
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.subset.as_str()) {
                names.push(&r.subset);
            }
        }
        for n in names {
            s += &format!("{n:<18}");
            for k in &splits {
                match self.row(n, *k) {
                    Some(r) => s += &format!("{:>18}", format!("{:.2} ± {:.2}", 100.0 * r.f1.mean, 100.0 * r.f1.std)),
                    None => s += &format!("{:>18}", "-"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `evaluate(model_config, split)` for every subset and split. The
/// callback performs the cross-validation, so callers choose how to schedule
/// folds.
pub fn ablate<F>(
    subsets: &[ModalitySubset],
    splits: &[SplitKind],
    base: &ModelConfig,
    mut evaluate: F,
) -> Result<AblationTable>
where
    F: FnMut(&ModalitySubset, &ModelConfig, SplitKind) -> Result<EvalReport>,
{
    if subsets.is_empty() {
        return Err(Error::Config("no modality subsets given".into()));
    }
    let mut rows = Vec::new();
    for subset in subsets {
        let cfg = base.clone().with_active_pairs(subset.pairs()).normalized()?;
        for &split in splits {
            let report = evaluate(subset, &cfg, split)?;
            let predictions = (0..report.confusion.n).map(|c| report.confusion.predicted(c)).collect();
            rows.push(AblationRow {
                subset: subset.name(),
                split,
                f1: report.f1,
                predictions,
                report,
            });
        }
    }
    Ok(AblationTable { rows })
}

/// Hands covered by a subset's pairs, for display.
pub fn hands(pairs: &[ModalityPair]) -> Vec<Hand> {
    Hand::ALL.into_iter().filter(|h| pairs.iter().any(|p| p.hand == *h)).collect()
}
