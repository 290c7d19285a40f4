//! Subspace identification of the linear block of a Hammerstein model,
//! together with simulation, prediction and error metrics.

mod metrics;
mod model;
mod n4sid;
mod riccati;

pub use metrics::{fit_percent, mse};
pub use model::{parameter_count, StateSpaceModel, STABILITY_MARGIN};
pub use n4sid::{default_horizon, n4sid_identify, LqRoute, N4sid};
pub use riccati::{dare, RiccatiSolution};
