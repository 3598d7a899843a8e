//! Schema-driven ingestion, encoding, splitting, batching and the synthetic
//! biased-data generator.

mod dataset;
mod schema;
mod synth;

pub use dataset::{
    Batch, ColumnData, ColumnEncoding, Dataset, Encoding, FeatureColumn, FeatureView, ModelInput,
    Split, Standardizer,
};
pub use schema::{FeatureSchema, Kind, Role, Schema};
pub use synth::{synth_generate, synth_schema, FEATURE_NAMES, LABEL_NAME, SENSITIVE_NAME};
