//! Learned dual-space traffic engineering.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod network;
pub mod oracle;
pub mod pathgen;
pub mod sparse;
pub mod topogen;
pub mod traffic;
pub mod training;

pub use error::{Error, Result};
