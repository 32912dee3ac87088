//! Compactified trajectory spaces of Euclidean Morse–Smale flow models: exact local
//! charts, global charts with transition-time corner coordinates, the trajectory metric,
//! and associative gluing maps.

pub mod atlas;
pub mod cli;
pub mod config;
pub mod error;
pub mod examples;
pub mod flow;
pub mod global_charts;
pub mod gluing;
pub mod linalg;
pub mod local_charts;
pub mod model;
pub mod rk;
pub mod torus;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};
