//! Crowdsourced collective entity resolution between two knowledge bases.
//!
//! The pipeline turns label-similar entity pairs into an ER graph whose
//! vertices are candidate matches and whose edges follow relationship triples
//! in both KBs. A handful of crowd-labeled matches are then propagated along
//! that graph; question batches are chosen to maximize the expected number of
//! inferred matches, and noisy worker answers are fused with a Bayesian
//! worker-quality model.
//!
//! Module map:
//!
//! * [`kb`] - triple store with adjacency indexes and TSV I/O
//! * [`text_sim`] - label normalization and literal similarity
//! * [`candidates`] - blocking, attribute matching, similarity vectors, pruning
//! * [`er_graph`] - ER graph and its probabilistic variant
//! * [`propagation`] - relationship consistency MLE and neighbor posteriors
//! * [`selection`] - inferred-set discovery and lazy greedy question selection
//! * [`truth`] - label fusion, resolution bookkeeping, isolated-pair classifier
//! * [`crowd`] - workers, assignments, simulated answers, the labeling desk
//! * [`engine`] - the human-machine loop, metrics and file formats

pub mod candidates;
pub mod crowd;
pub mod engine;
pub mod er_graph;
pub mod error;
pub mod kb;
pub mod propagation;
pub mod selection;
pub mod text_sim;
pub mod truth;

pub use error::{Error, Result};
pub use kb::{AttrId, EntityId, KnowledgeBase, LiteralKind, RelId, TypedLiteral};
