//! Subcommand implementations. Each returns what it wrote so `main` can
//! summarize it.

use std::path::{Path, PathBuf};

use fairint::data::{synth_generate, synth_schema, Dataset, Split};
use fairint::metrics::{FairnessReport, GroupSource};
use fairint::model::{Architecture, FairIntModel};
use fairint::training::{evaluate, predict_split, sweep, train, SweepPoint, TrainHistory};
use fairint::{Error, Result};

use crate::config::{load_csv, ExperimentConfig};
use crate::probe::{probe, ProbeReport};
use crate::reports::{
    history_jsonl, to_json, tradeoff_csv, write_file, AttentionStats, HistoryMeta, ReportMeta,
    ATTENTION_FILE, HISTORY_FILE, MODEL_FILE, REPORT_FILE, TRADEOFF_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    /// Every row of the data source.
    All,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
            SplitArg::All => "all",
        }
    }
}

/// Rows to score with an existing model.
#[derive(Clone, Debug)]
pub enum DataArg {
    /// The config's data source and split.
    Config(Box<ExperimentConfig>),
    /// A CSV file; without a schema path the model's own schema is used.
    Csv {
        data: PathBuf,
        schema: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricOptions {
    pub threshold: f64,
    pub groups_from: GroupSource,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            threshold: 0.5,
            groups_from: GroupSource::True,
        }
    }
}

impl MetricOptions {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Usage(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Reads a config file and applies a `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn feature_names(model: &FairIntModel) -> Vec<String> {
    model.features().iter().map(|f| f.name.clone()).collect()
}

pub struct TrainOutput {
    pub dir: PathBuf,
    pub history: TrainHistory,
    pub report: FairnessReport,
}

/// Trains on the config's data and writes the model, history, test report
/// and, for models with attention, the test-split attention statistics.
pub fn cmd_train(cfg: &ExperimentConfig, metrics: MetricOptions) -> Result<TrainOutput> {
    metrics.validate()?;
    let ds = cfg.load_dataset(None)?;
    let (model, history) = train(&ds, &cfg.model, &cfg.train)?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    model.save(&dir.join(MODEL_FILE))?;
    let meta = HistoryMeta {
        data: cfg.source(),
        split: cfg.split(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        architecture: model.architecture(),
        best_epoch: history.best_epoch,
        stopping_reason: history.stopping_reason,
        report: ReportMeta {
            split: SplitArg::Test.name().into(),
            threshold: metrics.threshold,
            groups_from: metrics.groups_from,
        },
    };
    write_file(&dir.join(HISTORY_FILE), history_jsonl(&meta, &history))?;

    let report = evaluate(
        &model,
        &ds,
        Split::Test,
        metrics.threshold,
        metrics.groups_from,
    )?;
    write_file(&dir.join(REPORT_FILE), to_json(&report))?;
    if model.architecture() == Architecture::FairInt {
        let trace = predict_split(&model, &ds, Split::Test)?;
        let stats =
            AttentionStats::from_trace(&trace, &feature_names(&model), SplitArg::Test.name())?;
        write_file(&dir.join(ATTENTION_FILE), to_json(&stats))?;
    }
    Ok(TrainOutput {
        dir,
        history,
        report,
    })
}

/// Loads `data` in the model's encoding and returns it with every selected
/// row tagged as `Split::Test` or left in its split.
fn model_rows(
    model: &FairIntModel,
    data: &DataArg,
    split: Option<SplitArg>,
) -> Result<(Dataset, Split, SplitArg)> {
    let enc = model.encoding();
    let (ds, split) = match data {
        DataArg::Config(cfg) => (
            cfg.load_dataset(Some(enc))?,
            split.unwrap_or(SplitArg::Test),
        ),
        DataArg::Csv { data, schema } => {
            if split.is_some_and(|s| s != SplitArg::All) {
                return Err(Error::Usage(
                    "--split train/val/test needs --config; a CSV is scored whole".into(),
                ));
            }
            let ds = match schema {
                Some(schema) => load_csv(data, schema, Some(enc))?,
                None => {
                    if !data.exists() {
                        return Err(Error::Config(format!(
                            "data file {} does not exist",
                            data.display()
                        )));
                    }
                    Dataset::load_csv_with(data, model.schema(), Some(enc))?
                }
            };
            (ds, SplitArg::All)
        }
    };
    if !model.compatible_with(&ds) {
        return Err(Error::Usage(
            "data columns do not match the model's features".into(),
        ));
    }
    Ok(match split {
        SplitArg::All => (ds.all_in(Split::Test), Split::Test, split),
        SplitArg::Train => (ds, Split::Train, split),
        SplitArg::Val => (ds, Split::Val, split),
        SplitArg::Test => (ds, Split::Test, split),
    })
}

pub fn cmd_eval(
    model_path: &Path,
    data: &DataArg,
    split: Option<SplitArg>,
    metrics: MetricOptions,
) -> Result<FairnessReport> {
    metrics.validate()?;
    let model = FairIntModel::load(model_path)?;
    let (ds, split, _) = model_rows(&model, data, split)?;
    evaluate(&model, &ds, split, metrics.threshold, metrics.groups_from)
}

pub fn cmd_explain(
    model_path: &Path,
    data: &DataArg,
    split: Option<SplitArg>,
) -> Result<AttentionStats> {
    let model = FairIntModel::load(model_path)?;
    if model.architecture() == Architecture::Vanilla {
        return Err(Error::Usage(format!(
            "{} was trained without the bias interaction detection layer; nothing to explain",
            model_path.display()
        )));
    }
    let (ds, split, arg) = model_rows(&model, data, split)?;
    let trace = predict_split(&model, &ds, split)?;
    AttentionStats::from_trace(&trace, &feature_names(&model), arg.name())
}

pub struct SweepOutput {
    pub path: PathBuf,
    pub points: Vec<SweepPoint>,
}

/// Runs the config's `[sweep] grid` and writes the trade-off table. Points
/// that fail are reported and make the command fail after the table is
/// written.
pub fn cmd_sweep(cfg: &ExperimentConfig, metrics: MetricOptions) -> Result<SweepOutput> {
    metrics.validate()?;
    if cfg.sweep.grid.is_empty() {
        return Err(Error::Config("[sweep] grid is empty".into()));
    }
    let ds = cfg.load_dataset(None)?;
    let points = sweep(
        &ds,
        &cfg.model,
        &cfg.train,
        &cfg.sweep.grid,
        metrics.threshold,
        metrics.groups_from,
    )?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(TRADEOFF_FILE);
    write_file(&path, tradeoff_csv(&points))?;
    let failed: Vec<String> = points
        .iter()
        .filter_map(|p| {
            p.outcome.as_ref().err().map(|e| {
                format!(
                    "(lambda_ifc={}, lambda_fc={}): {e}",
                    p.lambda_ifc, p.lambda_fc
                )
            })
        })
        .collect();
    if !failed.is_empty() {
        return Err(Error::Metric(format!(
            "{} of {} sweep points failed: {}",
            failed.len(),
            points.len(),
            failed.join("; ")
        )));
    }
    Ok(SweepOutput { path, points })
}

/// Probe input: a config's data source, or a CSV with its schema.
#[derive(Clone, Debug)]
pub enum ProbeData {
    Config(Box<ExperimentConfig>),
    Csv { data: PathBuf, schema: PathBuf },
}

pub fn cmd_probe(data: &ProbeData) -> Result<ProbeReport> {
    let ds = match data {
        ProbeData::Config(cfg) => cfg.load_raw(None)?,
        ProbeData::Csv { data, schema } => load_csv(data, schema, None)?,
    };
    probe(&ds)
}

/// Path of the schema written next to a synthetic CSV: `x.csv` gives
/// `x.schema.toml`.
pub fn schema_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("schema.toml")
}

pub fn cmd_synth(
    n: usize,
    beta: f64,
    rho: f64,
    seed: u64,
    out: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let ds = synth_generate(n, beta, rho, seed)?;
    ds.write_csv(out)?;
    let schema = schema_path_for(out);
    write_file(&schema, synth_schema().to_toml())?;
    Ok((out.to_path_buf(), schema))
}
