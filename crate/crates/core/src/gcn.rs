//! Graph convolution over the blended affinity matrix: `H' = g(A·H·W + b)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{Bindings, Linear, ParamStore};
use crate::tensor::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!(
                "unknown activation {other:?}, expected relu or tanh"
            )),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Independent weights per layer; the first maps `2H → F`, the rest `F → F`.
#[derive(Debug, Clone)]
pub struct GcnParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl GcnParams {
    pub fn new(
        store: &mut ParamStore,
        input: usize,
        features: usize,
        num_layers: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let d_in = if l == 0 { input } else { features };
                Linear::new(store, &format!("gcn.l{l}"), d_in, features, rng)
            })
            .collect();
        Self { layers, activation }
    }
}

pub fn gcn_layer(
    g: &mut Graph,
    p: &Bindings,
    a: Var,
    h: Var,
    layer: &Linear,
    activation: Activation,
) -> Result<Var> {
    let ah = g.matmul(a, h)?;
    let z = layer.forward(g, p, ah)?;
    Ok(activation.apply(g, z))
}

/// Applies every layer in turn; rows of the result are the contextualized
/// token vectors.
pub fn gcn_stack(g: &mut Graph, p: &Bindings, a: Var, h0: Var, params: &GcnParams) -> Result<Var> {
    params.layers.iter().try_fold(h0, |h, layer| {
        gcn_layer(g, p, a, h, layer, params.activation)
    })
}
