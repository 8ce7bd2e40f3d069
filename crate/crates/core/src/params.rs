//! Named trainable tensors and the affine layer shared by every module.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{Result, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Registers every tensor as a leaf of `g`, in store order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bindings {
        Bindings(
            self.values
                .iter()
                .map(|t| g.leaf(t.clone(), requires_grad))
                .collect(),
        )
    }
}

/// Graph variables for the tensors of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Uniform samples in `[-bound, bound]`.
pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-bound..=bound));
    t
}

/// `x·W + b` with `W: [in×out]` and `b: [1×out]`; rows of `x` are samples.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights uniform in `±1/√in_dim`, bias zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[in_dim, out_dim], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let xw = g.matmul(x, p[self.weight])?;
        add_row_bias(g, xw, p[self.bias])
    }
}

/// Adds a `[1×d]` bias to every row of an `[m×d]` matrix.
///
/// For `m > 1` the bias is lifted with a ones column, `1ₘ·b`, so the addition
/// stays an equal-shape one.
pub fn add_row_bias(g: &mut Graph, x: Var, bias: Var) -> Result<Var> {
    let rows = g.value(x).rows();
    if rows == 1 {
        return g.add(x, bias);
    }
    let ones = g.constant(Tensor::filled(&[rows, 1], 1.0));
    let tiled = g.matmul(ones, bias)?;
    g.add(x, tiled)
}
