//! Self-supervised video-level representations of face tracks and their
//! clustering.
//!
//! Tracks of per-frame face embeddings are encoded by a class-token
//! transformer trained with centre-based attract/repel losses, then grouped
//! by hierarchical agglomerative clustering and scored with NMI, WCP,
//! #C DIF and S-Dbw.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod clustereval;
pub mod constraints;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod par;
pub mod params;
pub mod trackio;
pub mod vcl;

pub use error::{Error, Result};
