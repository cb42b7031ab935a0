//! Supervised Mahalanobis metric learning over precomputed image features.
//!
//! The pipeline: reduce each feature kind with [`pca`], learn a task metric
//! with one of the [`learners`], project, then classify with one-vs-all
//! linear SVMs ([`classify`]), fuse projections ([`fusion`]) or search for
//! similar images ([`retrieval`]).

pub mod classify;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod learners;
pub mod linalg;
pub mod metric;
pub mod pca;
pub mod retrieval;

pub use error::{Error, Result};
