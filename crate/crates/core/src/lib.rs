//! Generation of locally optimal minimum-effort trajectories by backward
//! propagation of Hamiltonian extremals, with conjugate-time truncation,
//! dataset emission, a small feedforward network for the optimal feedback
//! control map, and a closed-loop guidance simulator.

pub mod config;
pub mod dataset;
pub mod error;
pub mod extremal;
pub mod manifest;
pub mod mlp;
pub mod ode;
pub mod oracle;
pub mod problem;
pub mod problems;
pub mod sim;
pub mod util;

pub use error::Error;

/// Shorthand result with the crate error type.
pub type Result<T> = std::result::Result<T, Error>;
