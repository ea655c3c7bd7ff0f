//! Numerical laboratory for spectral-shift asymptotics of a one-dimensional
//! periodic Schrödinger operator P0 = -d²/dx² + V(x) under a slowly varying
//! decaying perturbation phi(hx).

pub mod bloch;
pub mod boxdisc;
pub mod coeffs;
pub mod config;
pub mod dos;
pub mod effham;
pub mod error;
pub mod exec;
pub mod harness;
pub mod limabs;
pub mod linalg;
pub mod model;
pub mod quad;
