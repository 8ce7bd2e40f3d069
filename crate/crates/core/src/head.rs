//! Anchor-query attention pooling and the feed-forward regressor.
//!
//! With GCN outputs `h_1..h_n` and the anchor at `k`:
//!
//! ```text
//! α_i  = (W_q h_k + b_q) · (W_k h_i + b_k)
//! α'   = softmax(α)
//! V    = Σ_i α'_i (W_v h_i + b_v)
//! pred = W_2 relu(W_1 V + b_1) + b_2
//! ```
//!
//! Without attention the feature is `W_v h_k + b_v` and `α'` is one-hot at `k`.

use rand::Rng;

use crate::error::{Error, Result as CrateResult};
use crate::graph::{self, Graph, Var};
use crate::params::{Bindings, Linear, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    /// `F → T`; absent when attention is disabled.
    pub query: Option<Linear>,
    pub key: Option<Linear>,
    pub value: Linear,
    /// `T → R`
    pub hidden: Linear,
    /// `R → 1`
    pub output: Linear,
}

impl HeadParams {
    pub fn new(
        store: &mut ParamStore,
        input: usize,
        attention: usize,
        regression: usize,
        use_attention: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (query, key) = if use_attention {
            (
                Some(Linear::new(store, "head.query", input, attention, rng)),
                Some(Linear::new(store, "head.key", input, attention, rng)),
            )
        } else {
            (None, None)
        };
        Self {
            query,
            key,
            value: Linear::new(store, "head.value", input, attention, rng),
            hidden: Linear::new(store, "head.ffn1", attention, regression, rng),
            output: Linear::new(store, "head.ffn2", regression, 1, rng),
        }
    }
}

/// Feature vector `V: [1×T]` and attention weights `α': [n×1]`.
#[derive(Debug, Clone, Copy)]
pub struct Pooled {
    pub feature: Var,
    pub attention: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub attention: Vec<f64>,
}

pub fn attention_pool(
    g: &mut Graph,
    p: &Bindings,
    head: &HeadParams,
    hg: Var,
    anchor: usize,
) -> Result<Pooled> {
    let n = g.value(hg).rows();
    if anchor >= n {
        return Err(TensorError::Contract(format!(
            "anchor {anchor} out of bounds for {n} tokens"
        )));
    }
    let hk = g.row(hg, anchor)?;
    let (Some(query), Some(key)) = (head.query, head.key) else {
        let feature = head.value.forward(g, p, hk)?;
        let mut one_hot = Tensor::zeros(&[n, 1]);
        one_hot.data_mut()[anchor] = 1.0;
        let attention = g.constant(one_hot);
        return Ok(Pooled { feature, attention });
    };
    let q = query.forward(g, p, hk)?;
    let keys = key.forward(g, p, hg)?;
    let qt = g.transpose(q)?;
    let scores = g.matmul(keys, qt)?;
    let attention = g.softmax(scores)?;
    let values = head.value.forward(g, p, hg)?;
    let weights = g.transpose(attention)?;
    let feature = g.matmul(weights, values)?;
    Ok(Pooled { feature, attention })
}

/// `[1×T] → [1×1]` factuality score, unclamped.
pub fn regress(g: &mut Graph, p: &Bindings, head: &HeadParams, feature: Var) -> Result<Var> {
    let z = head.hidden.forward(g, p, feature)?;
    let r = g.relu(z);
    head.output.forward(g, p, r)
}

/// Huber loss with threshold `delta`; a non-positive `delta` is a config error.
pub fn huber_loss(pred: f64, gold: f64, delta: f64) -> CrateResult<f64> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!(
            "huber delta must be positive, got {delta}"
        )));
    }
    Ok(graph::huber(pred, gold, delta))
}
