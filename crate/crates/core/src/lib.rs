//! Simulator and verification harness for the parabolic-elliptic chemotaxis
//! system with logarithmic sensitivity,
//!
//! ```text
//!   u_t = div( grad u - chi * u / ((1 + eps u) v) * grad v )
//!    0  = lap v - v + u
//! ```
//!
//! with zero-flux boundary conditions. The advective capacity `u / (1 + eps u)`
//! caps the chemotactic speed at `1/eps`; families of runs over decreasing
//! `eps` probe the vanishing-regularization limit.
//!
//! The crate is organized bottom-up: [`geometry`] provides conservative
//! finite-volume grids, [`elliptic`] solves the screened Poisson equation for
//! the signal, [`stepper`] advances the cell density with an IMEX scheme,
//! [`functionals`] tracks the integral quantities the scheme is supposed to
//! control, [`weak`] evaluates weak-form identities and one-sided estimates
//! against analytic test functions, and [`sweep`] orchestrates
//! regularization sweeps. [`sim`] ties a single run together and [`snapshot`]
//! defines the on-disk trajectory format.

pub mod elliptic;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod profile;
pub mod sim;
pub mod snapshot;
pub mod stepper;
pub mod sweep;
pub mod tolerances;
pub mod weak;

pub use error::{KsError, Result};
