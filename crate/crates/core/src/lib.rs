#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod atlas;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod geo;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod scenario;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
