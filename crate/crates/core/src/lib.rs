//! Mean first-passage times for surface-mediated diffusion in a disk.

pub mod cli;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod solver;
pub mod sweep;
