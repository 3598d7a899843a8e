//! Synthetic biased tabular data with a known generative process.
//!
//! For each row, in this order, from one ChaCha8 stream seeded by `seed`:
//!
//! ```text
//! s        ~ Bernoulli(0.5)            (uniform u < 0.5  =>  s = 1)
//! eps1..5  ~ Normal(0, 1)
//! t        = 2s - 1
//! proxy1   = rho * t       + (1 - rho) * eps1
//! proxy2   = rho * t * 0.5 + (1 - rho) * eps2
//! noise1   = eps3,  noise2 = eps4,  noise3 = eps5
//! logit    = 1.0 * proxy1 - 0.8 * noise1 + 0.5 * noise2 + beta * t
//! y        ~ Bernoulli(sigmoid(logit))  (uniform u < sigmoid(logit)  =>  y = 1)
//! ```
//!
//! These constants are part of the public contract: tests and reports depend
//! on them.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{ColumnData, Dataset, FeatureColumn};
use super::schema::{FeatureSchema, Role, Schema};
use crate::error::{Error, Result};
use crate::tensor::sigmoid;

pub const FEATURE_NAMES: [&str; 5] = ["proxy1", "proxy2", "noise1", "noise2", "noise3"];
pub const SENSITIVE_NAME: &str = "s";
pub const LABEL_NAME: &str = "y";

pub fn synth_schema() -> Schema {
    let mut columns: Vec<FeatureSchema> = FEATURE_NAMES
        .iter()
        .map(|n| FeatureSchema::numerical(n, Role::NonSensitive))
        .collect();
    columns.push(FeatureSchema::categorical(
        SENSITIVE_NAME,
        2,
        Role::Sensitive,
    ));
    columns.push(FeatureSchema::categorical(LABEL_NAME, 2, Role::Label));
    Schema::new(columns).expect("synthetic schema is valid")
}

pub fn synth_generate(n: usize, beta: f64, rho: f64, seed: u64) -> Result<Dataset> {
    if n < 100 {
        return Err(Error::Config(format!(
            "synthetic n must be at least 100, got {n}"
        )));
    }
    if beta.is_nan() || beta < 0.0 || !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!(
            "need beta >= 0 and rho in [0, 1], got beta={beta}, rho={rho}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    let mut sensitive = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let s = if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let eps: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let t = 2.0 * s - 1.0;
        let proxy1 = rho * t + (1.0 - rho) * eps[0];
        let proxy2 = rho * t * 0.5 + (1.0 - rho) * eps[1];
        let (noise1, noise2, noise3) = (eps[2], eps[3], eps[4]);
        let logit = 1.0 * proxy1 - 0.8 * noise1 + 0.5 * noise2 + beta * t;
        let y = if rng.gen::<f64>() < sigmoid(logit) {
            1.0
        } else {
            0.0
        };
        for (c, v) in cols
            .iter_mut()
            .zip([proxy1, proxy2, noise1, noise2, noise3])
        {
            c.push(v);
        }
        sensitive.push(s);
        labels.push(y);
    }
    let features = FEATURE_NAMES
        .iter()
        .zip(cols)
        .map(|(name, raw)| FeatureColumn {
            name: name.to_string(),
            data: ColumnData::Numerical { raw, stats: None },
        })
        .collect();
    Dataset::from_parts(
        synth_schema(),
        features,
        labels,
        sensitive,
        vec!["0".into(), "1".into()],
    )
}
