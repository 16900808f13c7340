//! Graph-learning recommender for glass-forming alloy systems.
//!
//! `glassrec` ingests fixed element embeddings and labelled alloy records,
//! builds binary (two-element) or ternary (three-element) material networks,
//! trains graph neural encoders (GCN, NGCF, TransGNN) with a Bayesian
//! personalized ranking objective, and ranks candidate alloy systems for a
//! query element or element pair. It also ships the surrounding analysis
//! toolkit: top-K ranking metrics, stratified cross-validation, grid search,
//! Ward-linkage clustering of the embedding space, and PCA projection.
//!
//! The crate is organised as a library; the `examples/` directory is the
//! front door and demonstrates one capability per example:
//!
//! | Example | Run with | Shows |
//! |---------|----------|-------|
//! | `end_to_end` | `cargo run --release -p glassrec --example end_to_end` | synthetic data → training → partner recommendation |
//! | `gradient_check` | `... --example gradient_check` | tape gradients vs central finite differences |
//! | `ternary_completion` | `... --example ternary_completion` | both ternary query modes (pair-for-element, third-for-pair) |
//! | `binary_to_ternary` | `... --example binary_to_ternary` | transfer of a binary-trained encoder to ternary queries |
//! | `grid_search` | `... --example grid_search` | hyper-parameter sweep and winner selection |
//! | `language_comparison` | `... --example language_comparison` | the same task over several embedding tables |
//! | `cluster_elements` | `... --example cluster_elements` | Ward dendrogram over element embeddings, Newick export |
//! | `pca_projection` | `... --example pca_projection` | 2-d element map with explained variance |
//!
//! A thin binary (`glassrec`) exposes the same operations as subcommands
//! (`train`, `recommend`, `evaluate`, `gridsearch`, `cluster`, `pca`,
//! `synth`) for file-based pipelines; see the README for the flag reference.

pub mod analysis;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
