#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dmaop;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod potential;
pub mod problem;
pub mod scalar;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mesh64 = mesh::Mesh<f64>;
pub type Density64 = problem::Density<f64>;
pub type Target64 = problem::TargetDomain<f64>;
pub type Instance64 = problem::ProblemInstance<f64>;
pub type DecisionVector64 = dmaop::DecisionVector<f64>;
pub type Solution64 = solver::Solution<f64>;
pub type Potential64 = potential::OptimizationPotential<f64>;
