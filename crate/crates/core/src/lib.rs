//! Leader-following cluster synchronization of linear agents over fast
//! switching, signed and trust-weighted digraphs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod benchmark;
pub mod error;
pub mod gains;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
