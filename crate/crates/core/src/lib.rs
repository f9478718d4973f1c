//! Spectral user profiling on planted-partition models.
//!
//! The crate generates similarity graphs and rating matrices from low-rank
//! class models, computes user profiles from the top eigenvectors (centrally
//! or with a distributed Oja-plus-gossip iteration, synchronous or
//! event-driven), and evaluates class recovery and local-voting
//! recommendations.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
#![allow(clippy::needless_range_loop)] // index loops mirror the matrix formulas

pub mod asyncsim;
pub mod distsync;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod recommend;
pub mod rng;
pub mod spectral;
pub mod synthdata;
pub mod trace;

pub use error::{Error, Result};
pub use graph::{Edge, GraphKind, SparseGraph};
pub use trace::Trace;
