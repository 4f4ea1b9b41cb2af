//! Flip-free distortion minimization for triangle and tetrahedral meshes.

pub mod admm;
pub mod energies;
pub mod error;
pub mod fixtures;
pub mod jacobian;
pub mod local_steps;
pub mod mesh;
pub mod smallmat;
pub mod sparse;

pub use error::{Error, Result};
