//! Sample-based transfer operators, occupation-measure LPs and Lyapunov
//! measure certificates for stabilizing feedback design.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certificate;
pub mod error;
pub mod lp;
pub mod models;
pub mod partition;
pub mod policy;
pub mod seed;
pub mod sparse;
pub mod spectral;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
