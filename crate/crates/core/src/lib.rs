//! Clustered contact-network simulation, contagion, and doubly-robust
//! augmented GEE estimation of cluster-level exposure effects.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix the
//! scalar to `f64`.

pub mod contagion;
pub mod empirical;
pub mod estimate;
pub mod features;
pub mod gee;
pub mod glm;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod netgen;
pub mod rng;
pub mod scalar;
pub mod study;

pub use graph::Network;
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Columns = glm::Columns<f64>;
pub type RegressionFit = glm::RegressionFit<f64>;
pub type ClusterObs = gee::ClusterObs<f64>;
pub type GeeFit = gee::GeeFit<f64>;
pub type ClusterFrame = estimate::ClusterFrame<f64>;
pub type EffectEstimate = estimate::EffectEstimate<f64>;
