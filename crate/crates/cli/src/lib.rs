//! Configuration, persistence and stage orchestration for the `pfstab`
//! command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod export;
pub mod pfmat;
pub mod pipeline;
pub mod store;
