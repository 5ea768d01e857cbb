//! Circular restricted three-body dynamics, LVLH relative motion and a
//! Pontryagin-based nonlinear MPC for close-range rendezvous on lunar
//! near rectilinear halo orbits.

pub mod bvp;
pub mod cr3bp;
pub mod error;
pub mod integrate;
pub mod lvlh;
pub mod nmpc;
pub mod orbit;
pub mod pmp;
pub mod relative;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
