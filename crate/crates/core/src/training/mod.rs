//! Mini-batch training of the joint objective, evaluation and λ sweeps.

mod adam;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{group_ids, FairnessReport, GroupSource, DEFAULT_THRESHOLD};
use crate::model::{Architecture, DropoutCtx, FairIntModel, ForwardTrace, ModelConfig};
use crate::objectives::{joint_loss_graph, LossBreakdown, LossWeights};
use crate::rng::{self, Stream};
use crate::tensor::Graph;

pub use adam::Adam;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default = "yes")]
    pub enable_ifc: bool,
    #[serde(default = "yes")]
    pub enable_fc: bool,
    #[serde(default = "yes")]
    pub enable_bid: bool,
}

fn yes() -> bool {
    true
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            enable_ifc: true,
            enable_fc: true,
            enable_bid: true,
        }
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_dropout() -> f64 {
    0.1
}
fn default_l2() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub lambda_ifc: f64,
    #[serde(default)]
    pub lambda_fc: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_ifc: 0.0,
            lambda_fc: 0.0,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            dropout: default_dropout(),
            l2: default_l2(),
            seed: 0,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        LossWeights::new(self.lambda_ifc, self.lambda_fc)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size and patience must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }

    /// Loss weights after the ablation switches.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_ifc: if self.ablation.enable_ifc {
                self.lambda_ifc
            } else {
                0.0
            },
            lambda_fc: if self.ablation.enable_fc {
                self.lambda_fc
            } else {
                0.0
            },
        }
    }

    pub fn architecture(&self) -> Architecture {
        if self.ablation.enable_bid {
            Architecture::FairInt
        } else {
            Architecture::Vanilla
        }
    }
}

/// One line of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l0: f64,
    pub l_sar: f64,
    pub l_ifc: f64,
    pub l_fc: f64,
    pub total: f64,
    pub val_auc: f64,
    pub val_ddp: f64,
    pub val_deo: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `max_epochs` was zero.
    NoEpochs,
    MaxEpochs,
    EarlyStopping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; `None` without epochs.
    pub best_epoch: Option<usize>,
    pub stopping_reason: StopReason,
}

/// Evaluation-mode forward pass over a whole split.
pub fn predict_split(
    model: &FairIntModel,
    dataset: &Dataset,
    split: Split,
) -> Result<ForwardTrace> {
    let rows = dataset.rows_of(split)?;
    if rows.is_empty() {
        return Err(Error::Usage(format!("{split:?} split is empty")));
    }
    model.trace(&dataset.input(&rows))
}

pub fn evaluate(
    model: &FairIntModel,
    dataset: &Dataset,
    split: Split,
    threshold: f64,
    groups_from: GroupSource,
) -> Result<FairnessReport> {
    let trace = predict_split(model, dataset, split)?;
    let batch = dataset.full_batch(split)?;
    let groups = match groups_from {
        GroupSource::True => group_ids(&batch.sensitive, 0.5),
        GroupSource::Pseudo => group_ids(&trace.pseudo, 0.5),
    };
    FairnessReport::compute(
        &trace.prediction,
        &batch.labels,
        &groups,
        &trace.pseudo,
        &batch.sensitive,
        threshold,
    )
}

fn training_error(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Domain(message) => Error::Training {
            epoch,
            batch,
            message,
        },
        other => other,
    }
}

/// Trains a fresh model on the train split with early stopping on
/// validation AUC, and returns it with the best epoch's parameters.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(FairIntModel, TrainHistory)> {
    cfg.validate()?;
    let mut model = FairIntModel::new(model_config.clone(), cfg.architecture(), dataset, cfg.seed)?;
    let weights = cfg.weights();
    let val = dataset.full_batch(Split::Val)?;
    if dataset.rows_of(Split::Train)?.is_empty() || val.is_empty() {
        return Err(Error::Usage(
            "train and validation splits must be nonempty".into(),
        ));
    }

    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: None,
        stopping_reason: StopReason::NoEpochs,
    };
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let batches = dataset.batches(Split::Train, cfg.batch_size, cfg.seed, epoch)?;
        let mut drop_rng = rng::stream(cfg.seed, Stream::Dropout, epoch as u64);
        let mut sum = LossBreakdown::default();
        let mut rows = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let mut g = Graph::new();
            let mut step = || -> Result<_> {
                let dropout = Some(DropoutCtx {
                    rate: cfg.dropout,
                    rng: &mut drop_rng,
                });
                let f = model.forward(&mut g, &batch.input, dropout)?;
                let (root, br) =
                    joint_loss_graph(&mut g, &f, &batch.labels, &batch.sensitive, weights)?;
                if !br.total.is_finite() {
                    return Err(Error::Domain(format!("non-finite loss {}", br.total)));
                }
                let mut grads = g.backward(root)?.for_params(model.params());
                if cfg.l2 > 0.0 {
                    for (id, p) in model.params().iter() {
                        if model.is_weight(id) {
                            for (gv, w) in grads.get_mut(id).iter_mut().zip(p.tensor.values()) {
                                *gv += 2.0 * cfg.l2 * w;
                            }
                        }
                    }
                }
                Ok((br, grads))
            };
            let (mut br, grads) = step().map_err(|e| training_error(epoch, b + 1, e))?;
            adam.step(model.params_mut(), &grads);
            if !cfg.ablation.enable_ifc {
                br.l_ifc = 0.0;
            }
            if !cfg.ablation.enable_fc {
                br.l_fc = 0.0;
            }
            let n = batch.len();
            rows += n;
            let w = n as f64;
            sum.l0 += w * br.l0;
            sum.l_sar += w * br.l_sar;
            sum.l_ifc += w * br.l_ifc;
            sum.l_fc += w * br.l_fc;
            sum.total += w * br.total;
        }
        let n = rows as f64;
        let report = evaluate(
            &model,
            dataset,
            Split::Val,
            DEFAULT_THRESHOLD,
            GroupSource::True,
        )
        .map_err(|e| training_error(epoch, 0, e))?;
        history.epochs.push(EpochRecord {
            epoch,
            l0: sum.l0 / n,
            l_sar: sum.l_sar / n,
            l_ifc: sum.l_ifc / n,
            l_fc: sum.l_fc / n,
            total: sum.total / n,
            val_auc: report.auc,
            val_ddp: report.ddp,
            val_deo: report.deo,
        });

        if best.as_ref().is_none_or(|(auc, _)| report.auc > *auc) {
            best = Some((report.auc, model.params().clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.stopping_reason = StopReason::MaxEpochs;
        if since_best >= cfg.patience {
            history.stopping_reason = StopReason::EarlyStopping;
            break;
        }
    }
    if let Some((_, params)) = best {
        model.set_params(params)?;
    }
    Ok((model, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda_ifc: f64,
    pub lambda_fc: f64,
    /// Test-split report, or the error that stopped this point.
    pub outcome: std::result::Result<FairnessReport, String>,
    pub best_epoch: Option<usize>,
}

/// One independent train + test evaluation per `(λ_IFC, λ_FC)` pair, run in
/// parallel. Results keep grid order; a failing point does not stop the
/// others.
pub fn sweep(
    dataset: &Dataset,
    model_config: &ModelConfig,
    base: &TrainConfig,
    grid: &[(f64, f64)],
    threshold: f64,
    groups_from: GroupSource,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    base.validate()?;
    Ok(grid
        .par_iter()
        .map(|&(lambda_ifc, lambda_fc)| {
            let cfg = TrainConfig {
                lambda_ifc,
                lambda_fc,
                ..base.clone()
            };
            let run = train(dataset, model_config, &cfg).and_then(|(model, history)| {
                let report = evaluate(&model, dataset, Split::Test, threshold, groups_from)?;
                Ok((report, history.best_epoch))
            });
            match run {
                Ok((report, best_epoch)) => SweepPoint {
                    lambda_ifc,
                    lambda_fc,
                    outcome: Ok(report),
                    best_epoch,
                },
                Err(e) => SweepPoint {
                    lambda_ifc,
                    lambda_fc,
                    outcome: Err(e.to_string()),
                    best_epoch: None,
                },
            }
        })
        .collect())
}
