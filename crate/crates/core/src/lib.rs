//! Structural probes and structured perceptron parsers over contextual word
//! embeddings.
//!
//! Both models learn the same linear map `B` and predict the distance between
//! two words as `‖B (h_i − h_j)‖` (optionally squared). They differ only in
//! their training loss: the probe regresses onto tree path lengths, the
//! perceptron compares the gold tree's predicted weight against the minimum
//! spanning tree's. Trees are decoded with Prim's algorithm and scored with
//! UUAS, distance Spearman (DSpr), and DSpr over the decoded tree's metric.

pub mod config;
pub mod conllu;
pub mod embeddings;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod train;

pub use conllu::{Sentence, Token, TreebankSplit};
pub use embeddings::{EmbeddingSequence, EmbeddingStore};
pub use error::{Error, ErrorKind, Result};
pub use graph::{DepTree, DistanceMatrix};
pub use losses::ModelKind;
pub use metrics::EvalReport;
pub use model::ProbeParams;
pub use train::{TrainConfig, TrainRecord};
