//! Hierarchical multi-class classification over a learned category tree.
//!
//! Classifying against thousands of categories with one-vs-rest linear
//! classifiers costs one evaluation per category per query. This crate
//! instead arranges the categories into a tree grouped by visual
//! similarity and classifies by descending it, so the per-query cost is
//! bounded by the tree shape rather than by the category count.
//!
//! The pipeline, in the order the pieces run:
//!
//! 1. [`dataio`] loads or synthesizes labelled feature vectors.
//! 2. [`metric`] turns per-category statistics into an inter-category
//!    distance and a self-tuned affinity matrix.
//! 3. [`spectral`] partitions a set of categories into at most `K`
//!    groups from that affinity (normalized spectral clustering).
//! 4. [`tree`] applies the partitioner recursively to build a category
//!    tree of bounded branching `K` and depth `L`.
//! 5. [`svm`] trains one linear classifier per tree edge, positives
//!    against sibling negatives.
//! 6. [`infer`] descends a trained tree greedily, exhaustively, or with
//!    an N-best beam, and can average scores across an ensemble of trees.
//! 7. [`eval`] measures accuracy and per-query cost against a flat
//!    one-vs-rest baseline.
//!
//! [`model`] holds the trained artifacts and their binary format;
//! [`eigen`] supplies the dense symmetric eigensolver used by
//! [`spectral`].
//!
//! Every random choice in the crate is derived from a single `u64` seed
//! (see [`rng`]), so training and inference are bit-reproducible.

pub mod dataio;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod infer;
pub mod metric;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod svm;
pub mod tree;

pub use dataio::{DataFormat, FeatureDataset, SynthConfig};
pub use error::{Error, Result};
pub use infer::Prediction;
pub use model::{ModelContainer, TreeModel};
pub use svm::TrainConfig;
pub use tree::VisualTree;
