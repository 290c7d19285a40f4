//! Black-box thermal modelling of a heterogeneous big.LITTLE SoC.
//!
//! A synthetic lumped-RC plant produces traces of cluster frequencies, core
//! utilizations and die temperature. A static polynomial regressor map
//! feeds an N4SID-identified linear state-space model, which is then used to
//! sweep the whole DVFS configuration space through its steady-state gain.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, with `*32` variants for `f32`.

// `!(x > 0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod explorer;
pub mod features;
pub mod linalg;
pub mod modelselect;
pub mod persist;
pub mod plant;
pub mod scalar;
pub mod seed;
pub mod soc;
pub mod sysid;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use soc::{Cluster, Configuration, CORES};

pub type Trace = trace::Trace<f64>;
pub type Trace32 = trace::Trace<f32>;
pub type PlantParams = plant::PlantParams<f64>;
pub type PlantParams32 = plant::PlantParams<f32>;
pub type RegressorSpec = features::RegressorSpec<f64>;
pub type RegressorSpec32 = features::RegressorSpec<f32>;
pub type StateSpaceModel = sysid::StateSpaceModel<f64>;
pub type StateSpaceModel32 = sysid::StateSpaceModel<f32>;
