//! Experiment configuration files.
//!
//! Relative paths inside a config file are resolved against the directory
//! containing it.

use std::path::{Path, PathBuf};

use fairint::data::{synth_generate, Dataset, Encoding, Schema};
use fairint::model::ModelConfig;
use fairint::training::TrainConfig;
use fairint::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SPLIT: SplitConfig = SplitConfig {
    train: 0.6,
    val: 0.2,
    test: 0.2,
    seed: None,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub csv_path: PathBuf,
    pub schema_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub n: usize,
    pub beta: f64,
    pub rho: f64,
    /// Generator seed; defaults to the training seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Where the rows come from, with defaults resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Dataset(CsvSource),
    Synth(SynthSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Shuffle seed; defaults to the training seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `(λ_IFC, λ_FC)` pairs.
    #[serde(default)]
    pub grid: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<CsvSource>,
    #[serde(default)]
    pub synth: Option<SynthSource>,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &mut cfg.dataset {
            d.csv_path = base.join(&d.csv_path);
            d.schema_path = base.join(&d.schema_path);
        }
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config(
                    "exactly one of [dataset] and [synth] must be given".into(),
                ))
            }
            _ => {}
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Split ratios and seed, with the seed defaulting to the training seed.
    pub fn split(&self) -> SplitConfig {
        let mut split = self.split.clone().unwrap_or(DEFAULT_SPLIT);
        split.seed.get_or_insert(self.train.seed);
        split
    }

    pub fn source(&self) -> DataSource {
        match (&self.dataset, &self.synth) {
            (Some(src), _) => DataSource::Dataset(src.clone()),
            (None, Some(s)) => DataSource::Synth(SynthSource {
                seed: Some(s.seed.unwrap_or(self.train.seed)),
                ..s.clone()
            }),
            (None, None) => unreachable!("validated"),
        }
    }

    /// Loads or generates every row, encoded with `encoding` when given.
    pub fn load_raw(&self, encoding: Option<&Encoding>) -> Result<Dataset> {
        match self.source() {
            DataSource::Dataset(src) => load_csv(&src.csv_path, &src.schema_path, encoding),
            DataSource::Synth(s) => {
                let ds = synth_generate(s.n, s.beta, s.rho, s.seed.unwrap_or_default())?;
                match encoding {
                    Some(enc) => ds.with_encoding(enc),
                    None => Ok(ds),
                }
            }
        }
    }

    /// Loads the data and splits it.
    pub fn load_dataset(&self, encoding: Option<&Encoding>) -> Result<Dataset> {
        let split = self.split();
        self.load_raw(encoding)?.split(
            (split.train, split.val, split.test),
            split.seed.unwrap_or_default(),
        )
    }
}

pub fn load_csv(
    csv_path: &Path,
    schema_path: &Path,
    encoding: Option<&Encoding>,
) -> Result<Dataset> {
    let schema = Schema::from_file(schema_path)?;
    if !csv_path.exists() {
        return Err(Error::Config(format!(
            "data file {} does not exist",
            csv_path.display()
        )));
    }
    Dataset::load_csv_with(csv_path, &schema, encoding)
}
