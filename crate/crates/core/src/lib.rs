//! Stationary covariances of partially open linear Hamiltonian systems.
//!
//! A quadratic Hamiltonian `H = ½|p|² + ½(Vq, q)` on a graph is damped and
//! driven by stationary Gaussian forcing on a set of boundary vertices. This
//! crate computes the resulting stationary covariance by several
//! independent routes (Lyapunov, time-domain, spectral, Q-block resolvent
//! quadrature and Monte Carlo), decides whether it is of Gibbs form, and
//! studies its large-system structure.
//!
//! Everything numerical is generic over [`scalar::Real`]; the aliases at
//! the crate root fix the scalar to `f64`.

// `!(x > 0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod covariance;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod quadrature;
pub mod reachability;
pub mod scalar;
pub mod simulate;
pub mod thermo;

pub use covariance::{Engine, EngineOptions as GenericEngineOptions, GibbsVerdict};
pub use error::{Error, Result};
pub use io::{ModelDocument, NoiseSpec};
pub use model::InteractionGraph;
pub use scalar::Real;

pub type Model = model::HamiltonianModel<f64>;
pub type Drift = model::DriftMatrix<f64>;
pub type Noise = noise::NoiseModel<f64>;
pub type Covariance = covariance::CovarianceResult<f64>;
pub type EngineOptions = covariance::EngineOptions<f64>;
pub type SubspaceReport = reachability::SubspaceReport<f64>;
pub type EnsembleStats = simulate::EnsembleStats<f64>;
pub type SimulationConfig = simulate::SimulationConfig<f64>;
pub type RemainderReport = thermo::RemainderReport<f64>;
pub type GrowingGraphTable = thermo::GrowingGraphTable<f64>;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
