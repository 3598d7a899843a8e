//! The FairInt network and the vanilla MLP baseline.
//!
//! FairInt forward pass for a batch of `B` rows with `C` non-sensitive
//! features:
//!
//! 1. each feature is embedded into `R^d` (`e_c`, `[B, d]` per feature);
//! 2. the sensitive-attribute reconstructor (SAR) maps the concatenated
//!    embeddings to a pseudo-sensitive embedding `ê_s` (`[B, d]`) and a
//!    pseudo-sensitive probability `ŝ = sigmoid(w · ê_s + b)`;
//! 3. bias-interaction detection (BID): per head, `ê_s` is the only query,
//!    so each row gets exactly `C` scores `<Wq ê_s, Wk e_c>`, softmaxed over
//!    the features;
//! 4. the attention-weighted value projections are concatenated over heads
//!    and fused with the residual branch: `ē = ReLU(Σ a·Wv e_c ‖ … + W_res ê_s)`;
//! 5. a prediction head maps `ē` to the label logit.
//!
//! The vanilla baseline feeds the concatenated embeddings through an MLP
//! instead of steps 3-5. It still carries a SAR, reading detached
//! embeddings, so pseudo-groups exist without the SAR shaping the
//! predictor.

mod layers;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Dataset, Encoding, FeatureView, ModelInput, Schema};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub use layers::Linear;

fn default_embed_dim() -> usize {
    4
}
fn default_heads() -> usize {
    1
}
fn default_sar_hidden() -> Vec<usize> {
    vec![16, 16, 8]
}
fn default_baseline_hidden() -> Vec<usize> {
    vec![64, 32]
}

/// Architecture sizes.
///
/// The SAR has `sar_hidden.len() + 1` layers: the listed ReLU hidden widths
/// followed by a linear layer of width `embed_dim`. `value_dim` is the
/// per-head width of the value projection and defaults to `embed_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_heads")]
    pub attention_heads: usize,
    #[serde(default)]
    pub value_dim: Option<usize>,
    #[serde(default = "default_sar_hidden")]
    pub sar_hidden: Vec<usize>,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    #[serde(default = "default_baseline_hidden")]
    pub baseline_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: default_embed_dim(),
            attention_heads: default_heads(),
            value_dim: None,
            sar_hidden: default_sar_hidden(),
            head_hidden: Vec::new(),
            baseline_hidden: default_baseline_hidden(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.attention_heads == 0 || self.value_dim == Some(0) {
            return Err(Error::Config(
                "embed_dim, attention_heads and value_dim must be positive".into(),
            ));
        }
        let widths = self
            .sar_hidden
            .iter()
            .chain(&self.head_hidden)
            .chain(&self.baseline_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim.unwrap_or(self.embed_dim)
    }

    /// Width of the fused representation `ē`.
    pub fn fused_dim(&self) -> usize {
        self.value_dim() * self.attention_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// SAR + BID + residual fusion + head.
    FairInt,
    /// Concatenated embeddings through an MLP.
    Vanilla,
}

/// One model-input column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub numerical: bool,
    /// Embedding table width (`V`); 1 for numericals.
    pub slots: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Bid {
    query: Vec<ParamId>,
    key: Vec<ParamId>,
    value: Vec<ParamId>,
    res: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    embed: Vec<ParamId>,
    sar: Vec<Linear>,
    sar_scalar: Linear,
    bid: Option<Bid>,
    head: Vec<Linear>,
    baseline: Vec<Linear>,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub embeddings: Vec<Var>,
    /// `ê_s`, `[B, d]`.
    pub pseudo_embed: Var,
    /// `ŝ`, `[B, 1]`.
    pub pseudo: Var,
    /// Per head, `[B, C]` attention weights. Empty for the baseline.
    pub attention: Vec<Var>,
    /// `ē`, `[B, fused_dim]`. `None` for the baseline.
    pub fused: Option<Var>,
    /// Label logit, `[B, 1]`.
    pub logits: Var,
    /// `ŷ`, `[B, 1]`.
    pub prediction: Var,
}

/// Plain values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub embeddings: Vec<Tensor>,
    pub pseudo_embed: Tensor,
    pub pseudo: Vec<f64>,
    pub attention: Vec<Tensor>,
    pub fused: Option<Tensor>,
    pub logits: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Dropout settings for a training-mode forward pass.
pub struct DropoutCtx<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    architecture: Architecture,
    schema: Schema,
    encoding: Encoding,
    features: Vec<FeatureSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairIntModel {
    config: ModelConfig,
    architecture: Architecture,
    schema: Schema,
    encoding: Encoding,
    features: Vec<FeatureSpec>,
    store: ParamStore,
    ids: Ids,
}

impl FairIntModel {
    /// Fresh model for `dataset`'s feature layout, initialized from `seed`.
    ///
    /// Weights and biases are uniform in `±1/sqrt(fan_in)`; embedding tables
    /// are `Normal(0, 0.1²)`.
    pub fn new(
        config: ModelConfig,
        architecture: Architecture,
        dataset: &Dataset,
        seed: u64,
    ) -> Result<Self> {
        let features = dataset
            .features()
            .iter()
            .map(|f| FeatureSpec {
                name: f.name.clone(),
                numerical: matches!(f.data, ColumnData::Numerical { .. }),
                slots: f.slots(),
            })
            .collect();
        let mut rng = rng::stream(seed, Stream::Init, 0);
        Self::build(
            config,
            architecture,
            dataset.schema().clone(),
            dataset.encoding(),
            features,
            &mut |shape, kind| {
                let n = shape.iter().product();
                let values = match kind {
                    Init::Embedding => (0..n)
                        .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    Init::Uniform(fan_in) => {
                        let b = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-b..b)).collect()
                    }
                };
                Tensor::new(shape, values)
            },
        )
    }

    fn build(
        config: ModelConfig,
        architecture: Architecture,
        schema: Schema,
        encoding: Encoding,
        features: Vec<FeatureSpec>,
        init: &mut dyn FnMut(Vec<usize>, Init) -> Result<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        if features.is_empty() {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        let d = config.embed_dim;
        let mut store = ParamStore::new();
        let mut embed = Vec::with_capacity(features.len());
        for f in &features {
            let t = init(vec![d, f.slots], Init::Embedding)?;
            embed.push(store.add(format!("embed.{}", f.name), t)?);
        }
        let concat = d * features.len();

        let mut sar_widths = config.sar_hidden.clone();
        sar_widths.push(d);
        let sar = Linear::stack(&mut store, "sar", concat, &sar_widths, init)?;
        let sar_scalar = Linear::add(&mut store, "sar.scalar", d, 1, init)?;

        let (bid, head, baseline) = match architecture {
            Architecture::FairInt => {
                let dv = config.value_dim();
                let (mut query, mut key, mut value) = (Vec::new(), Vec::new(), Vec::new());
                for h in 0..config.attention_heads {
                    query.push(store.add(
                        format!("bid.w_query.h{h}"),
                        init(vec![d, d], Init::Uniform(d))?,
                    )?);
                    key.push(store.add(
                        format!("bid.w_key.h{h}"),
                        init(vec![d, d], Init::Uniform(d))?,
                    )?);
                    value.push(store.add(
                        format!("bid.w_value.h{h}"),
                        init(vec![d, dv], Init::Uniform(d))?,
                    )?);
                }
                let res = store.add(
                    "bid.w_res",
                    init(vec![d, config.fused_dim()], Init::Uniform(d))?,
                )?;
                let bid = Bid {
                    query,
                    key,
                    value,
                    res,
                };
                let mut widths = config.head_hidden.clone();
                widths.push(1);
                let head = Linear::stack(&mut store, "head", config.fused_dim(), &widths, init)?;
                (Some(bid), head, Vec::new())
            }
            Architecture::Vanilla => {
                let mut widths = config.baseline_hidden.clone();
                widths.push(1);
                let baseline = Linear::stack(&mut store, "baseline", concat, &widths, init)?;
                (None, Vec::new(), baseline)
            }
        };

        Ok(FairIntModel {
            config,
            architecture,
            schema,
            encoding,
            features,
            store,
            ids: Ids {
                embed,
                sar,
                sar_scalar,
                bid,
                head,
                baseline,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces every parameter value; names and shapes must match.
    pub fn set_params(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::Usage("parameter count mismatch".into()));
        }
        for ((_, a), (_, b)) in self.store.iter().zip(store.iter()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Usage(format!(
                    "parameter `{}` does not match",
                    b.name
                )));
            }
        }
        self.store = store;
        Ok(())
    }

    /// Whether L2 regularization applies: every parameter except biases.
    pub fn is_weight(&self, id: ParamId) -> bool {
        !self.store.get(id).name.ends_with(".bias")
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.columns.len() != self.features.len() {
            return Err(Error::Dimension(format!(
                "model expects {} feature columns, got {}",
                self.features.len(),
                input.columns.len()
            )));
        }
        if input.rows == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        for (f, col) in self.features.iter().zip(&input.columns) {
            let ok = match col {
                FeatureView::Numerical(v) => f.numerical && v.len() == input.rows,
                FeatureView::Categorical { ids, slots } => {
                    !f.numerical && *slots == f.slots && ids.len() == input.rows
                }
            };
            if !ok {
                return Err(Error::Dimension(format!(
                    "column `{}` does not match the model",
                    f.name
                )));
            }
        }
        Ok(())
    }

    /// Per-feature embeddings `e_c`, each `[B, d]`. Categoricals select a
    /// table column; numericals scale a learned vector by the standardized
    /// value.
    pub fn embed_features(&self, g: &mut Graph, input: &ModelInput) -> Result<Vec<Var>> {
        self.check_input(input)?;
        let mut out = Vec::with_capacity(self.features.len());
        for (col, &id) in input.columns.iter().zip(&self.ids.embed) {
            let table = g.param(&self.store, id);
            let e = match col {
                FeatureView::Categorical { ids, .. } => g.embedding_lookup(table, ids)?,
                FeatureView::Numerical(values) => {
                    let base = g.embedding_lookup(table, &vec![0; values.len()])?;
                    let scale = g.constant(Tensor::column(values.clone())?);
                    g.mul_col(base, scale)?
                }
            };
            out.push(e);
        }
        Ok(out)
    }

    /// Reconstructs `(ê_s, ŝ)` from the concatenated feature embeddings.
    pub fn sar_forward<R: Rng>(
        &self,
        g: &mut Graph,
        embeddings: &[Var],
        dropout: &mut Option<DropoutCtx<'_, R>>,
    ) -> Result<(Var, Var)> {
        let x = g.concat_lastdim(embeddings)?;
        let pseudo_embed = layers::mlp(g, &self.store, &self.ids.sar, x, dropout)?;
        let z = self.ids.sar_scalar.apply(g, &self.store, pseudo_embed)?;
        let pseudo = g.sigmoid(z)?;
        Ok((pseudo_embed, pseudo))
    }

    fn bid(&self) -> Result<&Bid> {
        self.ids
            .bid
            .as_ref()
            .ok_or_else(|| Error::Usage("model was built without the interaction layer".into()))
    }

    /// Attention of head `head` from the pseudo-sensitive query onto each
    /// feature: `[B, C]`, rows summing to one.
    pub fn bid_attention(
        &self,
        g: &mut Graph,
        pseudo_embed: Var,
        embeddings: &[Var],
        head: usize,
    ) -> Result<Var> {
        let bid = self.bid()?;
        let wq = g.param(&self.store, bid.query[head]);
        let wk = g.param(&self.store, bid.key[head]);
        let q = g.matmul(pseudo_embed, wq)?;
        let mut scores = Vec::with_capacity(embeddings.len());
        for &e in embeddings {
            let k = g.matmul(e, wk)?;
            let qk = g.mul(q, k)?;
            scores.push(g.sum_lastdim(qk)?);
        }
        let scores = g.concat_lastdim(&scores)?;
        g.softmax_lastdim(scores)
    }

    /// `ê^H_s`: per head, the attention-weighted sum of value projections,
    /// concatenated across heads.
    pub fn interaction_embedding(
        &self,
        g: &mut Graph,
        attention: &[Var],
        embeddings: &[Var],
    ) -> Result<Var> {
        let bid = self.bid()?;
        let mut heads = Vec::with_capacity(attention.len());
        for (h, &a) in attention.iter().enumerate() {
            let wv = g.param(&self.store, bid.value[h]);
            let mut acc: Option<Var> = None;
            for (c, &e) in embeddings.iter().enumerate() {
                let v = g.matmul(e, wv)?;
                let w = g.slice_lastdim(a, c, 1)?;
                let term = g.mul_col(v, w)?;
                acc = Some(match acc {
                    None => term,
                    Some(s) => g.add(s, term)?,
                });
            }
            heads.push(acc.expect("at least one feature"));
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            g.concat_lastdim(&heads)
        }
    }

    /// `ē = ReLU(ê^H_s + W_res ê_s)`.
    pub fn residual_fuse(&self, g: &mut Graph, interaction: Var, pseudo_embed: Var) -> Result<Var> {
        let wres = g.param(&self.store, self.bid()?.res);
        let r = g.matmul(pseudo_embed, wres)?;
        let s = g.add(interaction, r)?;
        g.relu(s)
    }

    /// Prediction head on `ē`; returns the logit.
    pub fn predict<R: Rng>(
        &self,
        g: &mut Graph,
        fused: Var,
        dropout: &mut Option<DropoutCtx<'_, R>>,
    ) -> Result<Var> {
        layers::mlp(g, &self.store, &self.ids.head, fused, dropout)
    }

    /// Baseline MLP on the concatenated embeddings; returns the logit.
    pub fn vanilla_mlp_forward<R: Rng>(
        &self,
        g: &mut Graph,
        embeddings: &[Var],
        dropout: &mut Option<DropoutCtx<'_, R>>,
    ) -> Result<Var> {
        if self.ids.baseline.is_empty() {
            return Err(Error::Usage(
                "model was built without the baseline MLP".into(),
            ));
        }
        let x = g.concat_lastdim(embeddings)?;
        layers::mlp(g, &self.store, &self.ids.baseline, x, dropout)
    }

    /// Full forward pass. `dropout = None` is evaluation mode.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        input: &ModelInput,
        mut dropout: Option<DropoutCtx<'_, R>>,
    ) -> Result<Forward> {
        let embeddings = self.embed_features(g, input)?;
        match self.architecture {
            Architecture::FairInt => {
                let (pseudo_embed, pseudo) = self.sar_forward(g, &embeddings, &mut dropout)?;
                let attention = (0..self.config.attention_heads)
                    .map(|h| self.bid_attention(g, pseudo_embed, &embeddings, h))
                    .collect::<Result<Vec<_>>>()?;
                let inter = self.interaction_embedding(g, &attention, &embeddings)?;
                let fused = self.residual_fuse(g, inter, pseudo_embed)?;
                let logits = self.predict(g, fused, &mut dropout)?;
                let prediction = g.sigmoid(logits)?;
                Ok(Forward {
                    embeddings,
                    pseudo_embed,
                    pseudo,
                    attention,
                    fused: Some(fused),
                    logits,
                    prediction,
                })
            }
            Architecture::Vanilla => {
                let detached: Vec<Var> = embeddings.iter().map(|&e| g.detach(e)).collect();
                let (pseudo_embed, pseudo) = self.sar_forward(g, &detached, &mut dropout)?;
                let logits = self.vanilla_mlp_forward(g, &embeddings, &mut dropout)?;
                let prediction = g.sigmoid(logits)?;
                Ok(Forward {
                    embeddings,
                    pseudo_embed,
                    pseudo,
                    attention: Vec::new(),
                    fused: None,
                    logits,
                    prediction,
                })
            }
        }
    }

    /// Evaluation-mode forward pass, returned as plain values.
    pub fn trace(&self, input: &ModelInput) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let f = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, input, None)?;
        let v = |x: Var| g.value(x).clone();
        Ok(ForwardTrace {
            embeddings: f.embeddings.iter().map(|&e| v(e)).collect(),
            pseudo_embed: v(f.pseudo_embed),
            pseudo: g.value(f.pseudo).values().to_vec(),
            attention: f.attention.iter().map(|&a| v(a)).collect(),
            fused: f.fused.map(v),
            logits: g.value(f.logits).values().to_vec(),
            prediction: g.value(f.prediction).values().to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ModelMeta {
            config: self.config.clone(),
            architecture: self.architecture,
            schema: self.schema.clone(),
            encoding: self.encoding.clone(),
            features: self.features.clone(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        self.store.to_bytes(&meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (store, meta) = ParamStore::from_bytes(bytes)?;
        let meta: ModelMeta =
            serde_json::from_slice(&meta).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        meta.schema
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut model = Self::build(
            meta.config,
            meta.architecture,
            meta.schema,
            meta.encoding,
            meta.features,
            &mut |shape, _| Tensor::zeros(shape),
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        model
            .set_params(store)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Whether `dataset` has the feature layout this model was built for.
    pub fn compatible_with(&self, dataset: &Dataset) -> bool {
        let cols = dataset.features();
        cols.len() == self.features.len()
            && cols.iter().zip(&self.features).all(|(f, s)| {
                let numerical = matches!(f.data, ColumnData::Numerical { .. });
                f.name == s.name && f.slots() == s.slots && numerical == s.numerical
            })
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    Uniform(usize),
}

#[cfg(test)]
mod tests;
