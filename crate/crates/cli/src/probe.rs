//! Linear probe: how well do the non-sensitive features predict the
//! sensitive attribute?
//!
//! A logistic regression fitted by full-batch gradient descent on the mean
//! cross-entropy, 500 epochs at learning rate 0.1, from all-zero weights.
//! Numerical features are z-scored over the probed rows; categorical
//! features are one-hot encoded, one column per embedding slot. The label
//! is not a probe input.

use fairint::data::{ColumnData, Dataset};
use fairint::{Error, Result};
use serde::{Deserialize, Serialize};

pub const EPOCHS: usize = 500;
pub const LEARNING_RATE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficient {
    /// Column name, or `column=value` for a one-hot column. The unknown
    /// slot is named `column=<unknown>`.
    pub feature: String,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeReport {
    /// Sensitive value modelled as the positive class.
    pub positive_class: String,
    pub rows: usize,
    pub intercept: f64,
    /// Sorted by decreasing magnitude; ties keep column order.
    pub coefficients: Vec<Coefficient>,
}

struct Design {
    names: Vec<String>,
    /// Row-major, `names.len()` columns.
    x: Vec<f64>,
}

fn design(ds: &Dataset) -> Design {
    let n = ds.len();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for f in ds.features() {
        match &f.data {
            ColumnData::Numerical { raw, .. } => {
                let mean = raw.iter().sum::<f64>() / n as f64;
                let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                names.push(f.name.clone());
                cols.push(raw.iter().map(|v| (v - mean) / std).collect());
            }
            ColumnData::Categorical {
                ids,
                vocab,
                cardinality,
            } => {
                let slots = (0..vocab.len()).chain([*cardinality]);
                for slot in slots {
                    let value = vocab.get(slot).map_or("<unknown>", String::as_str);
                    names.push(format!("{}={value}", f.name));
                    cols.push(
                        ids.iter()
                            .map(|&i| if i == slot { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }
    let k = cols.len();
    let mut x = vec![0.0; n * k];
    for (j, c) in cols.iter().enumerate() {
        for (r, v) in c.iter().enumerate() {
            x[r * k + j] = *v;
        }
    }
    Design { names, x }
}

/// Gradient descent on the mean cross-entropy; returns `(weights, intercept)`.
fn fit(x: &[f64], s: &[f64], k: usize, epochs: usize) -> (Vec<f64>, f64) {
    let n = s.len() as f64;
    let mut w = vec![0.0; k];
    let mut b = 0.0;
    let mut grad = vec![0.0; k];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &target) in x.chunks_exact(k).zip(s) {
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - target;
            grad_b += err;
            for (g, a) in grad.iter_mut().zip(row) {
                *g += err * a;
            }
        }
        b -= LEARNING_RATE * grad_b / n;
        for (c, g) in w.iter_mut().zip(&grad) {
            *c -= LEARNING_RATE * g / n;
        }
    }
    (w, b)
}

pub fn probe(ds: &Dataset) -> Result<ProbeReport> {
    let s = ds.sensitive();
    if s.is_empty() || s.iter().all(|v| *v == s[0]) {
        return Err(Error::Data(format!(
            "sensitive column `{}` has a single class; nothing to probe",
            ds.schema().sensitive().name
        )));
    }
    let Design { names, x } = design(ds);
    let (w, b) = fit(&x, s, names.len(), EPOCHS);
    let mut coefficients: Vec<Coefficient> = names
        .into_iter()
        .zip(w)
        .map(|(feature, coef)| Coefficient { feature, coef })
        .collect();
    coefficients.sort_by(|a, b| b.coef.abs().total_cmp(&a.coef.abs()));
    Ok(ProbeReport {
        positive_class: ds.sensitive_vocab().get(1).cloned().unwrap_or_default(),
        rows: s.len(),
        intercept: b,
        coefficients,
    })
}
