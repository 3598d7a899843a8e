//! Fair tabular classification by detecting and mitigating biased feature
//! interactions.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
