use rand::Rng;

use super::{DropoutCtx, Init};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Affine layer `x W + b` with `W: [in, out]` and `b: [1, out]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(super) fn add(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        init: &mut dyn FnMut(Vec<usize>, Init) -> Result<Tensor>,
    ) -> Result<Linear> {
        let weight = store.add(
            format!("{prefix}.weight"),
            init(vec![fan_in, fan_out], Init::Uniform(fan_in))?,
        )?;
        let bias = store.add(
            format!("{prefix}.bias"),
            init(vec![1, fan_out], Init::Uniform(fan_in))?,
        )?;
        Ok(Linear { weight, bias })
    }

    pub(super) fn stack(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        widths: &[usize],
        init: &mut dyn FnMut(Vec<usize>, Init) -> Result<Tensor>,
    ) -> Result<Vec<Linear>> {
        let mut prev = fan_in;
        let mut out = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            out.push(Linear::add(
                store,
                &format!("{prefix}.l{i}"),
                prev,
                w,
                init,
            )?);
            prev = w;
        }
        Ok(out)
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// ReLU between layers, dropout after each hidden activation, linear output.
pub(super) fn mlp<R: Rng>(
    g: &mut Graph,
    store: &ParamStore,
    layers: &[Linear],
    mut x: Var,
    dropout: &mut Option<DropoutCtx<'_, R>>,
) -> Result<Var> {
    let last = layers.len().saturating_sub(1);
    for (i, layer) in layers.iter().enumerate() {
        x = layer.apply(g, store, x)?;
        if i < last {
            x = g.relu(x)?;
            if let Some(ctx) = dropout.as_mut() {
                x = g.dropout(x, ctx.rate, &mut *ctx.rng, true)?;
            }
        }
    }
    Ok(x)
}
