//! Loss terms: task cross-entropy, SAR reconstruction, the interaction
//! fairness constraint (IFC), the prediction fairness constraint (FC) and
//! their weighted sum.
//!
//! Each term exists twice: as a plain function over values, and as a graph
//! builder used for training. Both compute the same quantity.
//!
//! IFC: for every pseudo-group present in the batch, the fused embeddings of
//! its rows are averaged and softmaxed into a distribution over embedding
//! coordinates; the loss is the KL divergence summed over ordered pairs of
//! groups. FC: the absolute difference of per-group mean cross-entropy,
//! summed over ordered pairs. Groups with no rows in a batch are skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Forward, ForwardTrace};
use crate::tensor::{softmax_row, Graph, Tensor, Var};

/// Group id threshold on `ŝ`; ties go to group 1.
pub const GROUP_THRESHOLD: f64 = 0.5;
const GROUPS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ifc: f64,
    pub lambda_fc: f64,
}

impl LossWeights {
    pub fn new(lambda_ifc: f64, lambda_fc: f64) -> Result<Self> {
        if !(lambda_ifc >= 0.0 && lambda_fc >= 0.0)
            || !lambda_ifc.is_finite()
            || !lambda_fc.is_finite()
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got lambda_ifc={lambda_ifc}, lambda_fc={lambda_fc}"
            )));
        }
        Ok(LossWeights {
            lambda_ifc,
            lambda_fc,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l0: f64,
    pub l_sar: f64,
    pub l_ifc: f64,
    pub l_fc: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(l0: f64, l_sar: f64, l_ifc: f64, l_fc: f64, w: LossWeights) -> Self {
        LossBreakdown {
            l0,
            l_sar,
            l_ifc,
            l_fc,
            total: l0 + w.lambda_ifc * l_ifc + w.lambda_fc * l_fc + l_sar,
        }
    }
}

fn check_pair(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: {a} predictions vs {b} targets"
        )));
    }
    if a == 0 {
        return Err(Error::Usage(format!("{what}: empty batch")));
    }
    Ok(())
}

fn bce(p: f64, y: f64) -> f64 {
    let mut l = 0.0;
    if y > 0.0 {
        l -= y * p.ln();
    }
    if y < 1.0 {
        l -= (1.0 - y) * (1.0 - p).ln();
    }
    l
}

/// Mean binary cross-entropy of probabilities `p` against labels `y`.
pub fn ce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(p.len(), y.len(), "ce_loss")?;
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("ce_loss: prediction outside [0, 1]".into()));
    }
    Ok(p.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum::<f64>() / p.len() as f64)
}

/// Mean squared error between `ŝ` and `s`.
pub fn sar_loss(pseudo: &[f64], s: &[f64]) -> Result<f64> {
    check_pair(pseudo.len(), s.len(), "sar_loss")?;
    Ok(pseudo
        .iter()
        .zip(s)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / s.len() as f64)
}

pub fn assign_groups(pseudo: &[f64]) -> Vec<usize> {
    pseudo
        .iter()
        .map(|&p| usize::from(p >= GROUP_THRESHOLD))
        .collect()
}

/// Rows of each group, in group-id order; empty groups are dropped.
fn members(groups: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); GROUPS];
    for (r, &g) in groups.iter().enumerate() {
        if g >= out.len() {
            out.resize(g + 1, Vec::new());
        }
        out[g].push(r);
    }
    out.retain(|m| !m.is_empty());
    out
}

/// Value form of the IFC over `fused` (`[B, D]`).
pub fn ifc_loss(fused: &Tensor, groups: &[usize]) -> Result<f64> {
    if fused.shape().len() != 2 || fused.rows() != groups.len() {
        return Err(Error::Dimension(
            "ifc_loss: one group id per embedding row".into(),
        ));
    }
    let dists: Vec<Vec<f64>> = members(groups)
        .iter()
        .map(|rows| {
            let mut mean = vec![0.0; fused.cols()];
            for &r in rows {
                for (m, v) in mean.iter_mut().zip(fused.row_slice(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
            softmax_row(&mean).collect()
        })
        .collect();
    let mut total = 0.0;
    for (i, p) in dists.iter().enumerate() {
        for (j, q) in dists.iter().enumerate() {
            if i != j {
                total += p
                    .iter()
                    .zip(q)
                    .map(|(&a, &b)| a * (a / b).ln())
                    .sum::<f64>();
            }
        }
    }
    Ok(total)
}

/// Value form of the FC: `Σ_{i≠j} |CE_i − CE_j|` over present groups.
pub fn fc_loss(p: &[f64], y: &[f64], groups: &[usize]) -> Result<f64> {
    check_pair(p.len(), y.len(), "fc_loss")?;
    if groups.len() != p.len() {
        return Err(Error::Dimension("fc_loss: one group id per row".into()));
    }
    let ce: Vec<f64> = members(groups)
        .iter()
        .map(|rows| rows.iter().map(|&r| bce(p[r], y[r])).sum::<f64>() / rows.len() as f64)
        .collect();
    let mut total = 0.0;
    for a in &ce {
        for b in &ce {
            total += (a - b).abs();
        }
    }
    Ok(total)
}

/// Value form of the joint objective on an evaluated batch. A trace without
/// a fused embedding (the baseline) has `l_ifc = 0`.
pub fn joint_loss(
    trace: &ForwardTrace,
    y: &[f64],
    s: &[f64],
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let groups = assign_groups(&trace.pseudo);
    let l0 = ce_loss(&trace.prediction, y)?;
    let l_sar = sar_loss(&trace.pseudo, s)?;
    let l_ifc = match &trace.fused {
        Some(f) => ifc_loss(f, &groups)?,
        None => 0.0,
    };
    let l_fc = fc_loss(&trace.prediction, y, &groups)?;
    Ok(LossBreakdown::assemble(l0, l_sar, l_ifc, l_fc, weights))
}

/// `[1, B]` constant whose product with a `[B, k]` node is the mean over
/// `rows`.
fn averager(g: &mut Graph, n: usize, rows: &[usize]) -> Result<Var> {
    let mut w = vec![0.0; n];
    for &r in rows {
        w[r] = 1.0 / rows.len() as f64;
    }
    Ok(g.constant(Tensor::row(w)?))
}

/// Mean cross-entropy from logits.
pub fn ce_term(g: &mut Graph, logits: Var, y: &[f64]) -> Result<Var> {
    check_pair(g.value(logits).len(), y.len(), "ce_loss")?;
    let l = g.bce_with_logits(logits, y)?;
    g.mean(l)
}

pub fn sar_term(g: &mut Graph, pseudo: Var, s: &[f64]) -> Result<Var> {
    check_pair(g.value(pseudo).len(), s.len(), "sar_loss")?;
    let target = g.constant(Tensor::new(g.value(pseudo).shape().to_vec(), s.to_vec())?);
    let d = g.sub(pseudo, target)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

pub fn ifc_term(g: &mut Graph, fused: Var, groups: &[usize]) -> Result<Var> {
    let n = g.value(fused).rows();
    if groups.len() != n {
        return Err(Error::Dimension(
            "ifc_loss: one group id per embedding row".into(),
        ));
    }
    let mut logp = Vec::new();
    for rows in members(groups) {
        let avg = averager(g, n, &rows)?;
        let mean = g.matmul(avg, fused)?;
        logp.push(g.log_softmax_lastdim(mean)?);
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    for i in 0..logp.len() {
        let p = g.exp(logp[i])?;
        for j in 0..logp.len() {
            if i != j {
                let ratio = g.sub(logp[i], logp[j])?;
                let terms = g.mul(p, ratio)?;
                let kl = g.sum(terms)?;
                total = g.add(total, kl)?;
            }
        }
    }
    Ok(total)
}

pub fn fc_term(g: &mut Graph, logits: Var, y: &[f64], groups: &[usize]) -> Result<Var> {
    let n = g.value(logits).len();
    check_pair(n, y.len(), "fc_loss")?;
    if groups.len() != n {
        return Err(Error::Dimension("fc_loss: one group id per row".into()));
    }
    let per_row = g.bce_with_logits(logits, y)?;
    let mut ce = Vec::new();
    for rows in members(groups) {
        let avg = averager(g, n, &rows)?;
        let m = g.matmul(avg, per_row)?;
        ce.push(g.sum(m)?);
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    for i in 0..ce.len() {
        for j in 0..ce.len() {
            if i != j {
                let d = g.sub(ce[i], ce[j])?;
                let a = g.abs(d)?;
                total = g.add(total, a)?;
            }
        }
    }
    Ok(total)
}

/// Graph form of the joint objective. Returns the total node and its
/// breakdown. Pseudo-groups come from the forward pass's `ŝ` values and are
/// not differentiated through.
pub fn joint_loss_graph(
    g: &mut Graph,
    forward: &Forward,
    y: &[f64],
    s: &[f64],
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let groups = assign_groups(g.value(forward.pseudo).values());
    let l0 = ce_term(g, forward.logits, y)?;
    let l_sar = sar_term(g, forward.pseudo, s)?;
    let l_fc = fc_term(g, forward.logits, y, &groups)?;
    let mut total = g.add(l0, l_sar)?;
    let mut l_ifc_value = 0.0;
    if let Some(fused) = forward.fused {
        let l_ifc = ifc_term(g, fused, &groups)?;
        l_ifc_value = g.value(l_ifc).values()[0];
        if weights.lambda_ifc != 0.0 {
            let t = g.scale(l_ifc, weights.lambda_ifc)?;
            total = g.add(total, t)?;
        }
    }
    if weights.lambda_fc != 0.0 {
        let t = g.scale(l_fc, weights.lambda_fc)?;
        total = g.add(total, t)?;
    }
    let scalar = |g: &Graph, v: Var| g.value(v).values()[0];
    let breakdown = LossBreakdown::assemble(
        scalar(g, l0),
        scalar(g, l_sar),
        l_ifc_value,
        scalar(g, l_fc),
        weights,
    );
    Ok((total, breakdown))
}
