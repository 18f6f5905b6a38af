//! Hybrid high-order discretization of generalized incompressible
//! Navier-Stokes flows with Carreau-Yasuda viscosity and power-law convection.

pub mod basis;
pub mod forms;
pub mod hho;
pub mod laws;
pub mod mesh;
pub mod solver;
pub mod verify;

pub use mesh::{Mesh, Point};
