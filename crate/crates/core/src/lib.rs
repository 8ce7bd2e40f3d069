//! Event factuality prediction with a graph convolutional network over a
//! blend of learned semantic affinity and dependency-tree adjacency.
//!
//! Everything runs on a small reverse-mode autodiff [`graph::Graph`] in
//! double precision. A prediction goes through:
//!
//! 1. [`encoder`]: two stacked bidirectional LSTM layers over word vectors;
//! 2. [`structure`]: pairwise semantic affinity blended with the syntactic
//!    adjacency of the parse tree;
//! 3. [`gcn`]: graph convolution layers over the blended matrix;
//! 4. [`head`]: anchor-query attention pooling and a feed-forward regressor.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod gcn;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod structure;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{EfpModel, ModelSpec, PreparedInstance};
pub use tensor::{Tensor, TensorError};
