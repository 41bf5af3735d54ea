//! Dual-path edge network for infrared small target detection, desk scale.
//!
//! From-scratch tensors and reverse-mode autodiff, an edge-refinement path,
//! a bidirectional attention fusion module, composite loss, detection
//! metrics, a synthetic scene generator and a reproducible trainer.

pub mod bim;
pub mod edge;
pub mod data;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod trainer;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
