//! Graph neural networks on SPD manifolds, hyperbolic space and their
//! Euclidean and product baselines.

pub mod autodiff;
pub mod classifiers;
pub mod data;
pub mod gnn;
pub mod gradcheck;
pub mod harness;
pub mod manifolds;
pub mod params;
pub mod symcore;
