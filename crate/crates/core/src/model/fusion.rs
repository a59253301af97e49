//! Intent-slot attention: the sentence vector attends over the token vectors,
//! and the attended summary is projected together with the sentence vector
//! into the representation used for contrastive learning.
//!
//! ```text
//! h_intent  = MultiHead(q = h_cls Wq, k = H_slot Wk, v = H_slot Wv) Wo
//! h_intent' = W [h_intent, h_cls] + b          W: d x 2d, b: d
//! ```

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::encoder::multi_head_attention;
use super::{xavier, ModelError};
use crate::autograd::{Graph, ParamId, ParamStore, Var};

/// Graph handles for the fusion weights.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
    pub projection: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    /// `1 x d` representation `h_intent'`.
    pub representation: Var,
    /// Per head, the `1 x n` attention weights over token positions.
    pub attention: Vec<Var>,
}

pub fn fuse_intent_slot(
    g: &mut Graph,
    h_cls: Var,
    h_slot: Var,
    p: &FusionVars,
    heads: usize,
) -> Result<FusionOutput, ModelError> {
    let (cls_rows, d) = g.shape(h_cls);
    let (n, slot_d) = g.shape(h_slot);
    let mismatch = |what: String| Err(ModelError::ShapeMismatch(what));
    if cls_rows != 1 || slot_d != d || n == 0 {
        return mismatch(format!("h_cls {cls_rows}x{d} vs H_slot {n}x{slot_d}"));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return mismatch(format!("{heads} heads do not divide d = {d}"));
    }
    for (name, v) in [("query", p.query), ("key", p.key), ("value", p.value), ("output", p.output)] {
        if g.shape(v) != (d, d) {
            return mismatch(format!("{name} projection is {:?}, expected {d}x{d}", g.shape(v)));
        }
    }
    if g.shape(p.projection) != (d, 2 * d) || g.shape(p.bias) != (1, d) {
        return mismatch(format!(
            "W is {:?} and b is {:?}, expected {d}x{} and 1x{d}",
            g.shape(p.projection),
            g.shape(p.bias),
            2 * d
        ));
    }

    let q = g.matmul(h_cls, p.query);
    let k = g.matmul(h_slot, p.key);
    let v = g.matmul(h_slot, p.value);
    let (heads_out, attention) = multi_head_attention(g, q, k, v, heads);
    let h_intent = g.matmul(heads_out, p.output);
    let joined = g.concat_cols(&[h_intent, h_cls]);
    let projected = g.matmul_t(joined, p.projection);
    let representation = g.add_row(projected, p.bias);
    Ok(FusionOutput {
        representation,
        attention,
    })
}

/// Plain-value fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParameters {
    pub heads: usize,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub projection: Array2<f64>,
    pub bias: Array2<f64>,
}

impl FusionParameters {
    /// Computes `(h_intent', per-head attention weights)` outside any training graph.
    pub fn fuse(&self, h_cls: &Array2<f64>, h_slot: &Array2<f64>) -> Result<(Array2<f64>, Vec<Array2<f64>>), ModelError> {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let cls = g.input(h_cls.clone());
        let slots = g.input(h_slot.clone());
        let vars = FusionVars {
            query: g.input(self.query.clone()),
            key: g.input(self.key.clone()),
            value: g.input(self.value.clone()),
            output: g.input(self.output.clone()),
            projection: g.input(self.projection.clone()),
            bias: g.input(self.bias.clone()),
        };
        let out = fuse_intent_slot(&mut g, cls, slots, &vars, self.heads)?;
        Ok((
            g.value(out.representation).clone(),
            out.attention.iter().map(|a| g.value(*a).clone()).collect(),
        ))
    }
}

/// Fusion weights registered in a model's parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionLayer {
    pub heads: usize,
    query: ParamId,
    key: ParamId,
    value: ParamId,
    output: ParamId,
    projection: ParamId,
    bias: ParamId,
}

impl FusionLayer {
    pub fn new(store: &mut ParamStore, d: usize, heads: usize, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(ModelError::ShapeMismatch(format!("{heads} fusion heads do not divide d = {d}")));
        }
        Ok(Self {
            heads,
            query: store.add("fusion.query", xavier(d, d, rng)),
            key: store.add("fusion.key", xavier(d, d, rng)),
            value: store.add("fusion.value", xavier(d, d, rng)),
            output: store.add("fusion.output", xavier(d, d, rng)),
            projection: store.add("fusion.projection", xavier(d, 2 * d, rng)),
            bias: store.add("fusion.bias", Array2::zeros((1, d))),
        })
    }

    pub fn vars(&self, g: &mut Graph) -> FusionVars {
        FusionVars {
            query: g.param(self.query),
            key: g.param(self.key),
            value: g.param(self.value),
            output: g.param(self.output),
            projection: g.param(self.projection),
            bias: g.param(self.bias),
        }
    }

    pub fn parameters(&self, store: &ParamStore) -> FusionParameters {
        FusionParameters {
            heads: self.heads,
            query: store.get(self.query).clone(),
            key: store.get(self.key).clone(),
            value: store.get(self.value).clone(),
            output: store.get(self.output).clone(),
            projection: store.get(self.projection).clone(),
            bias: store.get(self.bias).clone(),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.query, self.key, self.value, self.output, self.projection, self.bias]
    }
}
