//! The full factuality model: encoder, structure induction, GCN and head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::SentenceInstance;
use crate::embeddings::EmbeddingTable;
use crate::encoder::{encode, Encoder};
use crate::error::{Error, Result as CrateResult};
use crate::gcn::{gcn_stack, Activation, GcnParams};
use crate::gradcheck::{grad_check_report, TensorCheck};
use crate::graph::{Fault, Graph, Var};
use crate::head::{attention_pool, regress, HeadParams, Prediction};
use crate::params::{Bindings, ParamStore};
use crate::structure::{
    blend, check_lambda, semantic_affinity, syntactic_adjacency, AffinityMatrices, StructureParams,
};
use crate::tensor::{Result, Tensor};

/// Architecture hyperparameters; everything needed to rebuild the parameter
/// shapes plus the forward-time switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub projection: usize,
    pub gcn_features: usize,
    pub gcn_layers: usize,
    pub gcn_activation: Activation,
    pub attention: usize,
    pub regression: usize,
    pub forget_bias: f64,
    pub lambda: f64,
    pub no_structure: bool,
    pub no_attention: bool,
    pub row_normalize: bool,
}

impl ModelSpec {
    pub fn from_config(cfg: &TrainConfig, embedding_dim: usize) -> CrateResult<Self> {
        if cfg.embedding_dim != 0 && cfg.embedding_dim != embedding_dim {
            return Err(Error::Config(format!(
                "config embedding_dim {} does not match embedding table dimension {embedding_dim}",
                cfg.embedding_dim
            )));
        }
        check_lambda(cfg.lambda)?;
        Ok(Self {
            embedding_dim,
            hidden: cfg.hidden,
            projection: cfg.projection,
            gcn_features: cfg.gcn_features,
            gcn_layers: cfg.gcn_layers,
            gcn_activation: cfg.gcn_activation,
            attention: cfg.attention,
            regression: cfg.regression,
            forget_bias: cfg.forget_bias,
            lambda: cfg.lambda,
            no_structure: cfg.no_structure,
            no_attention: cfg.no_attention,
            row_normalize: cfg.row_normalize,
        })
    }
}

/// An instance with its embedding matrix and syntactic adjacency resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInstance {
    pub sentence_id: String,
    pub anchor: usize,
    pub gold: f64,
    /// `[n×D]`
    pub embeddings: Tensor,
    /// `[n×n]`
    pub adjacency: Tensor,
}

impl PreparedInstance {
    pub fn new(inst: &SentenceInstance, table: &EmbeddingTable) -> CrateResult<Self> {
        Ok(Self {
            sentence_id: inst.sentence_id.clone(),
            anchor: inst.anchor_index,
            gold: inst.gold_score,
            embeddings: table.embed(inst.tokens.iter().map(|t| t.form.as_str())),
            adjacency: syntactic_adjacency(&inst.tokens)?,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn prepare_all(
    instances: &[SentenceInstance],
    table: &EmbeddingTable,
) -> CrateResult<Vec<PreparedInstance>> {
    instances
        .iter()
        .map(|i| PreparedInstance::new(i, table))
        .collect()
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub h0: Var,
    pub hg: Var,
    pub semantic: Option<Var>,
    pub blended: Option<Var>,
    pub attention: Var,
    pub score: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Contextualized {
    pub hg: Var,
    pub semantic: Option<Var>,
    pub blended: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct EfpModel {
    spec: ModelSpec,
    params: ParamStore,
    encoder: Encoder,
    structure: Option<StructureParams>,
    gcn: Option<GcnParams>,
    head: HeadParams,
}

impl EfpModel {
    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(
            &mut params,
            spec.embedding_dim,
            spec.hidden,
            spec.forget_bias,
            &mut rng,
        );
        let h_dim = encoder.output_dim();
        let (structure, gcn, head_in) = if spec.no_structure {
            (None, None, h_dim)
        } else {
            let s = StructureParams::new(&mut params, h_dim, spec.projection, &mut rng);
            let g = GcnParams::new(
                &mut params,
                h_dim,
                spec.gcn_features,
                spec.gcn_layers,
                spec.gcn_activation,
                &mut rng,
            );
            (Some(s), Some(g), spec.gcn_features)
        };
        let head = HeadParams::new(
            &mut params,
            head_in,
            spec.attention,
            spec.regression,
            !spec.no_attention,
            &mut rng,
        );
        Self {
            spec,
            params,
            encoder,
            structure,
            gcn,
            head,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn structure_params(&self) -> Option<&StructureParams> {
        self.structure.as_ref()
    }

    /// Switches the blend weight without touching parameters.
    pub fn set_lambda(&mut self, lambda: f64) -> CrateResult<()> {
        check_lambda(lambda)?;
        self.spec.lambda = lambda;
        Ok(())
    }

    /// Replaces all parameter values; shapes must match exactly.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> CrateResult<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (id, v) in self
            .params
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(values)
        {
            let cur = self.params.get(id);
            if cur.shape() != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected shape {:?}, got {:?}",
                    self.params.name(id),
                    cur.shape(),
                    v.shape()
                )));
            }
            *self.params.get_mut(id) = v;
        }
        Ok(())
    }

    /// Structure induction and graph convolution on top of `h0`.
    ///
    /// With `no_structure` the encoder states pass through unchanged.
    pub fn contextualize(
        &self,
        g: &mut Graph,
        p: &Bindings,
        h0: Var,
        adjacency: Var,
    ) -> Result<Contextualized> {
        let (Some(structure), Some(gcn)) = (&self.structure, &self.gcn) else {
            return Ok(Contextualized {
                hg: h0,
                semantic: None,
                blended: None,
            });
        };
        let semantic = semantic_affinity(g, p, structure, h0)?;
        let mut a = blend(g, semantic, adjacency, self.spec.lambda)?;
        if self.spec.row_normalize {
            a = g.row_normalize(a)?;
        }
        let hg = gcn_stack(g, p, a, h0, gcn)?;
        Ok(Contextualized {
            hg,
            semantic: Some(semantic),
            blended: Some(a),
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bindings,
        embeddings: Var,
        adjacency: Var,
        anchor: usize,
    ) -> Result<Forward> {
        let h0 = encode(g, p, &self.encoder, embeddings)?;
        let ctx = self.contextualize(g, p, h0, adjacency)?;
        let pooled = attention_pool(g, p, &self.head, ctx.hg, anchor)?;
        let score = regress(g, p, &self.head, pooled.feature)?;
        Ok(Forward {
            h0,
            hg: ctx.hg,
            semantic: ctx.semantic,
            blended: ctx.blended,
            attention: pooled.attention,
            score,
        })
    }

    /// Builds the Huber loss of one instance on `g` with the given bindings.
    pub fn loss_on(
        &self,
        g: &mut Graph,
        p: &Bindings,
        inst: &PreparedInstance,
        delta: f64,
    ) -> Result<(Var, Forward)> {
        let emb = g.constant(inst.embeddings.clone());
        let adj = g.constant(inst.adjacency.clone());
        let fwd = self.forward(g, p, emb, adj, inst.anchor)?;
        let loss = g.huber(fwd.score, inst.gold, delta)?;
        Ok((loss, fwd))
    }

    /// Loss value and parameter gradients for one instance.
    pub fn instance_gradients(
        &self,
        inst: &PreparedInstance,
        delta: f64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let (loss, _) = self.loss_on(&mut g, &p, inst, delta)?;
        g.backward(loss)?;
        let value = g.value(loss).item()?;
        let grads = p
            .vars()
            .iter()
            .map(|&v| g.grad(v).expect("bound as param").clone())
            .collect();
        Ok((value, grads))
    }

    pub fn predict(&self, inst: &PreparedInstance) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let emb = g.constant(inst.embeddings.clone());
        let adj = g.constant(inst.adjacency.clone());
        let fwd = self.forward(&mut g, &p, emb, adj, inst.anchor)?;
        Ok(Prediction {
            score: g.value(fwd.score).item()?,
            attention: g.value(fwd.attention).data().to_vec(),
        })
    }

    /// The affinity matrices for one instance, or `None` without structure.
    pub fn affinity(&self, inst: &PreparedInstance) -> Result<Option<AffinityMatrices>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let emb = g.constant(inst.embeddings.clone());
        let adj = g.constant(inst.adjacency.clone());
        let fwd = self.forward(&mut g, &p, emb, adj, inst.anchor)?;
        Ok(fwd
            .semantic
            .zip(fwd.blended)
            .map(|(s, b)| AffinityMatrices {
                semantic: g.value(s).clone(),
                syntactic: inst.adjacency.clone(),
                blended: g.value(b).clone(),
                lambda: self.spec.lambda,
            }))
    }
}

/// Finite-difference check of every model parameter on one instance.
#[derive(Debug, Clone)]
pub struct ModelGradCheck {
    pub max_rel_error: f64,
    /// Parameter name and its per-tensor outcome, in store order.
    pub params: Vec<(String, TensorCheck)>,
}

impl ModelGradCheck {
    /// Largest central-difference gradient magnitude over parameters whose
    /// name starts with `prefix`.
    pub fn max_numeric(&self, prefix: &str) -> f64 {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, c)| c.max_abs_numeric)
            .fold(0.0, f64::max)
    }

    pub fn max_analytic(&self, prefix: &str) -> f64 {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, c)| c.max_abs_analytic)
            .fold(0.0, f64::max)
    }
}

/// Compares the backward pass of the Huber loss on `inst` with central
/// differences of step `epsilon` over all parameters of `model`.
///
/// `fault` corrupts the backward pass of the analytic graph only.
pub fn grad_check_model(
    model: &EfpModel,
    inst: &PreparedInstance,
    delta: f64,
    epsilon: f64,
    fault: Option<Fault>,
) -> Result<ModelGradCheck> {
    let mut values = model.params().values().to_vec();
    let report = grad_check_report(
        |g, vars| {
            if let Some(f) = fault {
                g.inject_fault(f);
            }
            let p = Bindings::from_vars(vars.to_vec());
            Ok(model.loss_on(g, &p, inst, delta)?.0)
        },
        &mut values,
        epsilon,
    )?;
    let params = model
        .params()
        .names()
        .iter()
        .cloned()
        .zip(report.tensors)
        .collect();
    Ok(ModelGradCheck {
        max_rel_error: report.max_rel_error,
        params,
    })
}
