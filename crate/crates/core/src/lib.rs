//! Simulation and entanglement characterization of photon pairs encoded in
//! discrete Gaussian transverse paths, generated by pumping a nonlinear
//! crystal with several parallel coherent beams.

pub mod analysis;
pub mod beam;
pub mod config;
pub mod detection;
pub mod io;
pub mod jones;
pub mod pipeline;
mod quad;
pub mod state;
