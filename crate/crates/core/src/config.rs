//! Flat `key = value` configuration.
//!
//! Lines starting with `#` and text after ` #` are comments. Keys not present
//! in a file keep their [`TrainConfig::default`] value (the desk profile).
//! Unknown or repeated keys are errors.
//!
//! | key | type | meaning |
//! |---|---|---|
//! | `lambda` | real in [0,1] | semantic/syntactic blend weight |
//! | `embedding_dim` | int, 0 = infer | word vector size D |
//! | `hidden` | int | LSTM units per direction H |
//! | `projection` | int | semantic projection size P |
//! | `gcn_features` | int | GCN feature maps F |
//! | `gcn_layers` | int | number of GCN layers |
//! | `gcn_activation` | relu/tanh | GCN nonlinearity |
//! | `attention` | int | attention transform size T |
//! | `regression` | int | regressor hidden units R |
//! | `forget_bias` | real | initial LSTM forget-gate bias |
//! | `lr`, `beta1`, `beta2`, `adam_eps` | real | Adam hyperparameters |
//! | `epochs`, `batch_size`, `patience` | int | training loop |
//! | `seed` | int | initialization and shuffling seed |
//! | `huber_delta` | real > 0 | Huber threshold |
//! | `no_structure`, `no_attention` | bool | ablations |
//! | `row_normalize` | bool | divide each row of A by its sum |
//! | `clip_eval` | bool | clip reported predictions to [-3, 3] |

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::read_file;
use crate::error::{Error, Result};
use crate::gcn::Activation;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub projection: usize,
    pub gcn_features: usize,
    pub gcn_layers: usize,
    pub gcn_activation: Activation,
    pub attention: usize,
    pub regression: usize,
    pub forget_bias: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub huber_delta: f64,
    pub no_structure: bool,
    pub no_attention: bool,
    pub row_normalize: bool,
    pub clip_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            embedding_dim: 0,
            hidden: 16,
            projection: 32,
            gcn_features: 16,
            gcn_layers: 2,
            gcn_activation: Activation::Relu,
            attention: 32,
            regression: 16,
            forget_bias: 1.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            batch_size: 32,
            patience: 10,
            seed: 1,
            huber_delta: 1.0,
            no_structure: false,
            no_attention: false,
            row_normalize: false,
            clip_eval: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {raw:?} for {key}")))
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split(" #").next().unwrap_or("").trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            cfg.set(key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse_value(key, v, line)?,
            "embedding_dim" => self.embedding_dim = parse_value(key, v, line)?,
            "hidden" => self.hidden = parse_value(key, v, line)?,
            "projection" => self.projection = parse_value(key, v, line)?,
            "gcn_features" => self.gcn_features = parse_value(key, v, line)?,
            "gcn_layers" => self.gcn_layers = parse_value(key, v, line)?,
            "gcn_activation" => {
                self.gcn_activation = v
                    .parse()
                    .map_err(|e| Error::Config(format!("line {line}: {e}")))?
            }
            "attention" => self.attention = parse_value(key, v, line)?,
            "regression" => self.regression = parse_value(key, v, line)?,
            "forget_bias" => self.forget_bias = parse_value(key, v, line)?,
            "lr" => self.lr = parse_value(key, v, line)?,
            "beta1" => self.beta1 = parse_value(key, v, line)?,
            "beta2" => self.beta2 = parse_value(key, v, line)?,
            "adam_eps" => self.adam_eps = parse_value(key, v, line)?,
            "epochs" => self.epochs = parse_value(key, v, line)?,
            "batch_size" => self.batch_size = parse_value(key, v, line)?,
            "patience" => self.patience = parse_value(key, v, line)?,
            "seed" => self.seed = parse_value(key, v, line)?,
            "huber_delta" => self.huber_delta = parse_value(key, v, line)?,
            "no_structure" => self.no_structure = parse_value(key, v, line)?,
            "no_attention" => self.no_attention = parse_value(key, v, line)?,
            "row_normalize" => self.row_normalize = parse_value(key, v, line)?,
            "clip_eval" => self.clip_eval = parse_value(key, v, line)?,
            other => return Err(Error::Config(format!("line {line}: unknown key {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("projection", self.projection),
            ("gcn_features", self.gcn_features),
            ("gcn_layers", self.gcn_layers),
            ("attention", self.attention),
            ("regression", self.regression),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("lr and adam_eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!(
                "huber_delta must be positive, got {}",
                self.huber_delta
            )));
        }
        Ok(())
    }

    /// Every key in a fixed order; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("lambda", self.lambda.to_string());
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("hidden", self.hidden.to_string());
        kv("projection", self.projection.to_string());
        kv("gcn_features", self.gcn_features.to_string());
        kv("gcn_layers", self.gcn_layers.to_string());
        kv("gcn_activation", self.gcn_activation.to_string());
        kv("attention", self.attention.to_string());
        kv("regression", self.regression.to_string());
        kv("forget_bias", self.forget_bias.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("patience", self.patience.to_string());
        kv("seed", self.seed.to_string());
        kv("huber_delta", self.huber_delta.to_string());
        kv("no_structure", self.no_structure.to_string());
        kv("no_attention", self.no_attention.to_string());
        kv("row_normalize", self.row_normalize.to_string());
        kv("clip_eval", self.clip_eval.to_string());
        s
    }
}
