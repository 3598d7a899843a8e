//! Report files written by the subcommands.
//!
//! | file            | content                                                   |
//! |-----------------|-----------------------------------------------------------|
//! | `model.bin`     | trained model                                             |
//! | `history.jsonl` | one `{"meta": HistoryMeta}` line, then one `EpochRecord` per line |
//! | `report.json`   | `FairnessReport` on the test split                        |
//! | `attention.json`| `AttentionStats` on the test split                        |
//! | `tradeoff.csv`  | `lambda_ifc,lambda_fc,auc,ddp,deo`, one row per grid point |

use std::io::{BufRead, BufReader};
use std::path::Path;

use fairint::metrics::GroupSource;
use fairint::model::{Architecture, ForwardTrace, ModelConfig};
use fairint::training::{EpochRecord, StopReason, SweepPoint, TrainConfig, TrainHistory};
use fairint::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, SplitConfig};

pub const MODEL_FILE: &str = "model.bin";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const ATTENTION_FILE: &str = "attention.json";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Statistics of one attention weight across the rows of an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureAttention {
    pub feature: String,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadAttention {
    pub head: usize,
    pub features: Vec<FeatureAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionStats {
    /// `train`, `val`, `test` or `all`.
    pub split: String,
    pub rows: usize,
    pub heads: Vec<HeadAttention>,
}

impl AttentionStats {
    /// Fails with a usage error for a model without the attention layer.
    pub fn from_trace(trace: &ForwardTrace, features: &[String], split: &str) -> Result<Self> {
        if trace.attention.is_empty() {
            return Err(Error::Usage(
                "model was trained without the bias interaction detection layer; it has no attention weights".into(),
            ));
        }
        let rows = trace.attention[0].rows();
        let heads = trace
            .attention
            .iter()
            .enumerate()
            .map(|(head, a)| HeadAttention {
                head,
                features: features
                    .iter()
                    .enumerate()
                    .map(|(c, name)| {
                        let col: Vec<f64> = (0..a.rows()).map(|r| a.at(r, c)).collect();
                        let n = col.len() as f64;
                        let mean = col.iter().sum::<f64>() / n;
                        FeatureAttention {
                            feature: name.clone(),
                            mean,
                            variance: col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
                            min: col.iter().copied().fold(f64::INFINITY, f64::min),
                            max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(AttentionStats {
            split: split.to_string(),
            rows,
            heads,
        })
    }

    /// Mean over heads and features of the per-feature variance.
    pub fn mean_variance(&self) -> f64 {
        let all: Vec<f64> = self
            .heads
            .iter()
            .flat_map(|h| h.features.iter().map(|f| f.variance))
            .collect();
        all.iter().sum::<f64>() / all.len() as f64
    }
}

/// Where `report.json` was computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub split: String,
    pub threshold: f64,
    pub groups_from: GroupSource,
}

/// First line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryMeta {
    pub data: DataSource,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub best_epoch: Option<usize>,
    pub stopping_reason: StopReason,
    pub report: ReportMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: HistoryMeta,
}

pub fn history_jsonl(meta: &HistoryMeta, history: &TrainHistory) -> String {
    let mut out = serde_json::to_string(&MetaLine { meta: meta.clone() }).expect("meta serializes");
    out.push('\n');
    for e in &history.epochs {
        out.push_str(&serde_json::to_string(e).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_history(path: &Path) -> Result<(HistoryMeta, Vec<EpochRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, e: serde_json::Error| {
        Error::Data(format!("{}: line {line}: {e}", path.display()))
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty history", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let meta: MetaLine = serde_json::from_str(&first).map_err(|e| bad(1, e))?;
    let epochs = lines
        .enumerate()
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| bad(i + 2, e))
        })
        .collect::<Result<_>>()?;
    Ok((meta.meta, epochs))
}

/// Trade-off table. Failed points are left out; numbers use the shortest
/// representation that parses back to the same value.
pub fn tradeoff_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("lambda_ifc,lambda_fc,auc,ddp,deo\n");
    for p in points {
        if let Ok(r) = &p.outcome {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.lambda_ifc, p.lambda_fc, r.auc, r.ddp, r.deo
            ));
        }
    }
    out
}
