//! Object-aware temporal flow matching for manipulation, at desk scale.

pub mod diffcore;
pub mod error;
pub mod eval;
pub mod factorize;
pub mod pipeline;
pub mod foresight;
pub mod policy;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
