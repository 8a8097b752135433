//! Space-time quasi-periodic solutions of the 1-D nonlinear Schrödinger
//! equation `i u_t + u_xx = |u|^{2p} u`, built by a multiscale Newton
//! iteration on Fourier coefficients indexed by Z⁴.

pub mod divisors;
pub mod exec;
pub mod lattice;
pub mod linearized;
pub mod newton;
pub mod qmap;
pub mod sweep;
pub mod verify;

pub use exec::Execution;
