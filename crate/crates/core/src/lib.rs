//! Relational database synthesis with graph-conditional diffusion.
//!
//! A database is viewed as a heterogeneous graph: rows are nodes and foreign keys
//! are edges. Structure is generated by a degree-preserving random graph model;
//! node attributes are generated jointly by a diffusion model whose denoiser
//! passes messages over each node's K-hop neighborhood.

pub mod codec;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod schema;
pub mod structure;
pub mod toy;

pub use error::{Error, Result};
