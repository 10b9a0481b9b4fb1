//! HHG quantum-optics simulator: quantum orbits, back-action on the driving
//! mode, truncated Fock-space states and their entanglement measures.

pub mod field;
pub mod orbits;
pub mod backaction;
pub mod quad;
pub mod fock;
pub mod hhgstate;
pub mod measures;
pub mod pipeline;
pub mod scan;
