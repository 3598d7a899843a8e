use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, Kind, Role, Schema};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// z-score parameters; the standard deviation is the population (1/n) one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Constant columns get `std = 1` so they map to zero.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Standardizer { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    /// `vocab[i]` is the raw value for id `i`; id `cardinality` is the
    /// unknown slot.
    Categorical {
        ids: Vec<usize>,
        vocab: Vec<String>,
        cardinality: usize,
    },
    Numerical {
        raw: Vec<f64>,
        stats: Option<Standardizer>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub data: ColumnData,
}

impl FeatureColumn {
    /// Number of embedding slots: declared cardinality plus the unknown slot
    /// for categoricals, 1 for numericals.
    pub fn slots(&self) -> usize {
        match &self.data {
            ColumnData::Categorical { cardinality, .. } => cardinality + 1,
            ColumnData::Numerical { .. } => 1,
        }
    }
}

/// Everything needed to encode new rows exactly as a training dataset was
/// encoded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub columns: Vec<ColumnEncoding>,
    pub sensitive_vocab: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Categorical { vocab: Vec<String> },
    Numerical { stats: Option<Standardizer> },
}

/// One column of a batch as seen by the model.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureView {
    Categorical { ids: Vec<usize>, slots: usize },
    Numerical(Vec<f64>),
}

/// Model-input features for a set of rows. The sensitive column is never
/// part of this type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub columns: Vec<FeatureView>,
    pub rows: usize,
}

impl ModelInput {
    /// Reorders the feature columns; `order[i]` is the source column for
    /// output column `i`.
    pub fn permuted(&self, order: &[usize]) -> ModelInput {
        ModelInput {
            columns: order.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self.rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub input: ModelInput,
    pub labels: Vec<f64>,
    /// Ground-truth sensitive attribute, consumed only by losses and metrics.
    pub sensitive: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    features: Vec<FeatureColumn>,
    labels: Vec<f64>,
    sensitive: Vec<f64>,
    sensitive_vocab: Vec<String>,
    split_tags: Option<Vec<Split>>,
}

fn parse_label(raw: &str) -> Option<f64> {
    match raw.to_ascii_lowercase().as_str() {
        "0" | "0.0" | "false" => Some(0.0),
        "1" | "1.0" | "true" => Some(1.0),
        _ => None,
    }
}

impl Dataset {
    /// Assembles a dataset from already-encoded columns.
    pub fn from_parts(
        schema: Schema,
        features: Vec<FeatureColumn>,
        labels: Vec<f64>,
        sensitive: Vec<f64>,
        sensitive_vocab: Vec<String>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = labels.len();
        if sensitive.len() != n || features.iter().any(|f| column_len(&f.data) != n) {
            return Err(Error::Data("column lengths differ".into()));
        }
        let expected: Vec<&str> = schema.features().map(|c| c.name.as_str()).collect();
        let got: Vec<&str> = features.iter().map(|f| f.name.as_str()).collect();
        if expected != got {
            return Err(Error::Data(format!(
                "feature columns {got:?} do not match schema {expected:?}"
            )));
        }
        Ok(Dataset {
            schema,
            features,
            labels,
            sensitive,
            sensitive_vocab,
            split_tags: None,
        })
    }

    pub fn load_csv(path: &Path, schema: &Schema) -> Result<Self> {
        Self::load_csv_with(path, schema, None)
    }

    /// Loads a CSV, reusing `encoding`'s vocabularies and standardization
    /// statistics when given. Without one, categorical vocabularies are built
    /// in order of first appearance; once a column has `cardinality` known
    /// values, further new values map to the unknown id.
    pub fn load_csv_with(
        path: &Path,
        schema: &Schema,
        encoding: Option<&Encoding>,
    ) -> Result<Self> {
        schema.validate()?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let position: HashMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
        for c in &schema.columns {
            if !position.contains_key(c.name.as_str()) {
                return Err(Error::Data(format!(
                    "{}: missing column `{}`",
                    path.display(),
                    c.name
                )));
            }
        }
        if let Some(extra) = headers
            .iter()
            .find(|h| !schema.columns.iter().any(|c| c.name == *h))
        {
            return Err(Error::Data(format!(
                "{}: column `{extra}` is not in the schema",
                path.display()
            )));
        }

        let feature_schemas: Vec<&FeatureSchema> = schema.features().collect();
        if let Some(enc) = encoding {
            if enc.columns.len() != feature_schemas.len() {
                return Err(Error::Data("encoding does not match schema".into()));
            }
        }
        let mut builders: Vec<ColumnBuilder> = feature_schemas
            .iter()
            .enumerate()
            .map(|(i, c)| ColumnBuilder::new(c, encoding.map(|e| &e.columns[i])))
            .collect::<Result<_>>()?;
        let mut labels = Vec::new();
        let mut raw_sensitive = Vec::new();
        let label_pos = position[schema.label().name.as_str()];
        let sens_pos = position[schema.sensitive().name.as_str()];

        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let loc = |col: &str| {
                format!(
                    "{}: row {} (line {}), column `{col}`",
                    path.display(),
                    r + 1,
                    r + 2
                )
            };
            for (b, c) in builders.iter_mut().zip(&feature_schemas) {
                let raw = record.get(position[c.name.as_str()]).unwrap_or("");
                b.push(raw)
                    .map_err(|msg| Error::Data(format!("{}: {msg}", loc(&c.name))))?;
            }
            let raw_label = record.get(label_pos).unwrap_or("");
            labels.push(parse_label(raw_label).ok_or_else(|| {
                Error::Data(format!(
                    "{}: label `{raw_label}` is not one of 0/1/true/false",
                    loc(&schema.label().name)
                ))
            })?);
            raw_sensitive.push(record.get(sens_pos).unwrap_or("").to_string());
        }
        if labels.is_empty() {
            return Err(Error::Data(format!("{}: no data rows", path.display())));
        }

        let sensitive_vocab = match encoding {
            Some(e) => e.sensitive_vocab.clone(),
            None => {
                let mut v: Vec<String> = raw_sensitive.clone();
                v.sort();
                v.dedup();
                v
            }
        };
        if sensitive_vocab.len() > 2 {
            return Err(Error::Data(format!(
                "sensitive column `{}` has {} distinct values; only binary sensitive attributes are supported",
                schema.sensitive().name,
                sensitive_vocab.len()
            )));
        }
        let sensitive = raw_sensitive
            .iter()
            .enumerate()
            .map(|(r, v)| {
                sensitive_vocab
                    .iter()
                    .position(|s| s == v)
                    .map(|i| i as f64)
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "{}: row {}, sensitive value `{v}` not in {sensitive_vocab:?}",
                            path.display(),
                            r + 1
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;

        let features = builders
            .into_iter()
            .zip(&feature_schemas)
            .map(|(b, c)| FeatureColumn {
                name: c.name.clone(),
                data: b.finish(),
            })
            .collect();
        Dataset::from_parts(schema.clone(), features, labels, sensitive, sensitive_vocab)
    }

    /// Writes raw (unstandardized) values with a header row. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))
            .map_err(|e| csv_error(path, e))?;
        for r in 0..self.len() {
            let mut feats = self.features.iter();
            let record: Vec<String> = self
                .schema
                .columns
                .iter()
                .map(|c| match c.role {
                    Role::Label => format!("{}", self.labels[r] as u8),
                    Role::Sensitive => self.sensitive_vocab[self.sensitive[r] as usize].clone(),
                    Role::NonSensitive => match &feats.next().unwrap().data {
                        ColumnData::Numerical { raw, .. } => format!("{}", raw[r]),
                        ColumnData::Categorical { ids, vocab, .. } => {
                            vocab.get(ids[r]).cloned().unwrap_or_default()
                        }
                    },
                })
                .collect();
            w.write_record(&record).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn features(&self) -> &[FeatureColumn] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[f64] {
        &self.sensitive
    }

    pub fn sensitive_vocab(&self) -> &[String] {
        &self.sensitive_vocab
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split_tags(&self) -> Option<&[Split]> {
        self.split_tags.as_deref()
    }

    /// Raw value for categorical id `id` of feature column `col`.
    pub fn decode(&self, col: usize, id: usize) -> Option<&str> {
        match &self.features.get(col)?.data {
            ColumnData::Categorical { vocab, .. } => vocab.get(id).map(String::as_str),
            ColumnData::Numerical { .. } => None,
        }
    }

    pub fn encoding(&self) -> Encoding {
        Encoding {
            columns: self
                .features
                .iter()
                .map(|f| match &f.data {
                    ColumnData::Categorical { vocab, .. } => ColumnEncoding::Categorical {
                        vocab: vocab.clone(),
                    },
                    ColumnData::Numerical { stats, .. } => {
                        ColumnEncoding::Numerical { stats: *stats }
                    }
                })
                .collect(),
            sensitive_vocab: self.sensitive_vocab.clone(),
        }
    }

    /// Assigns train/val/test tags by a seeded shuffle and fits numerical
    /// standardization on the train rows (unless statistics were already
    /// supplied by an [`Encoding`]).
    ///
    /// Split sizes use largest-remainder rounding, so each differs from its
    /// exact fraction by less than one row.
    pub fn split(&self, ratios: (f64, f64, f64), seed: u64) -> Result<Dataset> {
        let r = [ratios.0, ratios.1, ratios.2];
        if r.iter().any(|&x| x.is_nan() || x <= 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {ratios:?} must be positive and sum to 1"
            )));
        }
        let n = self.len();
        let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "split of {n} rows by {ratios:?} leaves an empty split"
            )));
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::stream(seed, Stream::Split, 0));
        let mut tags = vec![Split::Train; n];
        for (k, &row) in perm.iter().enumerate() {
            tags[row] = if k < counts[0] {
                Split::Train
            } else if k < counts[0] + counts[1] {
                Split::Val
            } else {
                Split::Test
            };
        }

        let mut out = self.clone();
        for f in &mut out.features {
            if let ColumnData::Numerical { raw, stats } = &mut f.data {
                if stats.is_none() {
                    let train = raw
                        .iter()
                        .zip(&tags)
                        .filter(|(_, t)| **t == Split::Train)
                        .map(|(v, _)| *v);
                    *stats = Some(Standardizer::fit(train));
                }
            }
        }
        out.split_tags = Some(tags);
        Ok(out)
    }

    /// Tags every row with `split`, for scoring a whole file with a trained
    /// model. Numerical statistics are left as they are.
    pub fn all_in(&self, split: Split) -> Dataset {
        let mut out = self.clone();
        out.split_tags = Some(vec![split; self.len()]);
        out
    }

    /// Re-expresses this dataset in `encoding`'s vocabularies and statistics.
    /// Categorical values missing from a stored vocabulary map to the unknown
    /// id; a sensitive value missing from it is a data error. Values this
    /// dataset already folded into its own unknown slot stay unknown, so
    /// prefer [`Dataset::load_csv_with`] for CSV input.
    pub fn with_encoding(&self, encoding: &Encoding) -> Result<Dataset> {
        if encoding.columns.len() != self.features.len() {
            return Err(Error::Data(format!(
                "encoding has {} columns, dataset has {}",
                encoding.columns.len(),
                self.features.len()
            )));
        }
        let mut out = self.clone();
        for (f, enc) in out.features.iter_mut().zip(&encoding.columns) {
            match (&mut f.data, enc) {
                (ColumnData::Numerical { stats, .. }, ColumnEncoding::Numerical { stats: s }) => {
                    *stats = *s
                }
                (
                    ColumnData::Categorical {
                        ids,
                        vocab,
                        cardinality,
                    },
                    ColumnEncoding::Categorical { vocab: target },
                ) => {
                    for id in ids.iter_mut() {
                        *id = vocab
                            .get(*id)
                            .and_then(|v| target.iter().position(|t| t == v))
                            .unwrap_or(*cardinality);
                    }
                    *vocab = target.clone();
                }
                _ => {
                    return Err(Error::Data(format!(
                        "column `{}` has a different kind than its stored encoding",
                        f.name
                    )))
                }
            }
        }
        for s in out.sensitive.iter_mut() {
            let raw = &self.sensitive_vocab[*s as usize];
            *s = encoding
                .sensitive_vocab
                .iter()
                .position(|t| t == raw)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "sensitive value `{raw}` not in {:?}",
                        encoding.sensitive_vocab
                    ))
                })? as f64;
        }
        out.sensitive_vocab = encoding.sensitive_vocab.clone();
        Ok(out)
    }

    /// Row indices belonging to `split`, ascending.
    pub fn rows_of(&self, split: Split) -> Result<Vec<usize>> {
        let tags = self
            .split_tags
            .as_ref()
            .ok_or_else(|| Error::Usage("dataset has not been split".into()))?;
        Ok(tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == split)
            .map(|(i, _)| i)
            .collect())
    }

    /// Model input for `rows`: categorical ids and standardized numericals
    /// (raw values if no statistics have been fitted yet).
    pub fn input(&self, rows: &[usize]) -> ModelInput {
        let columns = self
            .features
            .iter()
            .map(|f| match &f.data {
                ColumnData::Categorical {
                    ids, cardinality, ..
                } => FeatureView::Categorical {
                    ids: rows.iter().map(|&r| ids[r]).collect(),
                    slots: cardinality + 1,
                },
                ColumnData::Numerical { raw, stats } => FeatureView::Numerical(
                    rows.iter()
                        .map(|&r| stats.map_or(raw[r], |s| s.apply(raw[r])))
                        .collect(),
                ),
            })
            .collect();
        ModelInput {
            columns,
            rows: rows.len(),
        }
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            rows: rows.to_vec(),
            input: self.input(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sensitive: rows.iter().map(|&r| self.sensitive[r]).collect(),
        }
    }

    /// Whole split as one batch, in row order.
    pub fn full_batch(&self, split: Split) -> Result<Batch> {
        let rows = self.rows_of(split)?;
        if rows.is_empty() {
            return Err(Error::Usage(format!("split {split:?} is empty")));
        }
        Ok(self.batch(&rows))
    }

    /// Mini-batches over `split`, shuffled by `(seed, epoch)`; the final
    /// partial batch is kept.
    pub fn batches(
        &self,
        split: Split,
        batch_size: usize,
        seed: u64,
        epoch: usize,
    ) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut rows = self.rows_of(split)?;
        rows.shuffle(&mut rng::stream(seed, Stream::Shuffle, epoch as u64));
        Ok(rows.chunks(batch_size).map(|c| self.batch(c)).collect())
    }
}

fn column_len(d: &ColumnData) -> usize {
    match d {
        ColumnData::Categorical { ids, .. } => ids.len(),
        ColumnData::Numerical { raw, .. } => raw.len(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Data(format!("{}: {e}", path.display()))
    }
}

enum ColumnBuilder {
    Categorical {
        ids: Vec<usize>,
        vocab: Vec<String>,
        index: HashMap<String, usize>,
        cardinality: usize,
        frozen: bool,
    },
    Numerical {
        raw: Vec<f64>,
        stats: Option<Standardizer>,
    },
}

impl ColumnBuilder {
    fn new(c: &FeatureSchema, enc: Option<&ColumnEncoding>) -> Result<Self> {
        Ok(match (c.kind, enc) {
            (Kind::Categorical, None) => ColumnBuilder::Categorical {
                ids: Vec::new(),
                vocab: Vec::new(),
                index: HashMap::new(),
                cardinality: c.cardinality.unwrap(),
                frozen: false,
            },
            (Kind::Categorical, Some(ColumnEncoding::Categorical { vocab })) => {
                ColumnBuilder::Categorical {
                    ids: Vec::new(),
                    index: vocab
                        .iter()
                        .enumerate()
                        .map(|(i, v)| (v.clone(), i))
                        .collect(),
                    vocab: vocab.clone(),
                    cardinality: c.cardinality.unwrap(),
                    frozen: true,
                }
            }
            (Kind::Numerical, None) => ColumnBuilder::Numerical {
                raw: Vec::new(),
                stats: None,
            },
            (Kind::Numerical, Some(ColumnEncoding::Numerical { stats })) => {
                ColumnBuilder::Numerical {
                    raw: Vec::new(),
                    stats: *stats,
                }
            }
            _ => {
                return Err(Error::Data(format!(
                    "encoding kind does not match column `{}`",
                    c.name
                )))
            }
        })
    }

    fn push(&mut self, raw: &str) -> std::result::Result<(), String> {
        match self {
            ColumnBuilder::Categorical {
                ids,
                vocab,
                index,
                cardinality,
                frozen,
            } => {
                let id = match index.get(raw) {
                    Some(&i) => i,
                    None if !*frozen && vocab.len() < *cardinality => {
                        vocab.push(raw.to_string());
                        index.insert(raw.to_string(), vocab.len() - 1);
                        vocab.len() - 1
                    }
                    None => *cardinality,
                };
                ids.push(id);
            }
            ColumnBuilder::Numerical { raw: vals, .. } => {
                if raw.is_empty() {
                    return Err("missing numerical value".into());
                }
                let v: f64 = raw
                    .parse()
                    .map_err(|_| format!("cannot parse `{raw}` as a number"))?;
                if !v.is_finite() {
                    return Err(format!("non-finite value `{raw}`"));
                }
                vals.push(v);
            }
        }
        Ok(())
    }

    fn finish(self) -> ColumnData {
        match self {
            ColumnBuilder::Categorical {
                ids,
                vocab,
                cardinality,
                ..
            } => ColumnData::Categorical {
                ids,
                vocab,
                cardinality,
            },
            ColumnBuilder::Numerical { raw, stats } => ColumnData::Numerical { raw, stats },
        }
    }
}
