pub mod attribution;
pub mod benchmarks;
pub mod data;
pub mod dist;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod risk;
pub mod quadrature;
pub mod synth;
pub mod vb;

pub use error::{Error, Result};
