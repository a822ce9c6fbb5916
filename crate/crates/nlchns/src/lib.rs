//! Pseudo-spectral simulator and verification harness for a nonlocal
//! Cahn-Hilliard-Navier-Stokes system on the two-dimensional torus.
//!
//! The model couples the incompressible Navier-Stokes equations for the
//! velocity `u` with a nonlocal Cahn-Hilliard equation for the order
//! parameter `phi`:
//!
//! ```text
//! phi_t + u . grad(phi) = lap(mu),        mu = a phi - J * phi + F'(phi),
//! u_t - div(nu(phi) 2Du) + (u . grad) u + grad(pi) = mu grad(phi) + h,
//! div(u) = 0,
//! ```
//!
//! where `J` is an even interaction kernel, `a(x) = int J(x - y) dy`, `F` is
//! a double-well potential and `nu` a concentration-dependent viscosity.
//! On the torus the convolution is diagonal in Fourier space, `a` is
//! constant, and the Fourier modes play the role of a Galerkin basis, which
//! makes the energy bookkeeping of the continuous theory machine-checkable:
//!
//! * the energy balance `dE/dt + 2||sqrt(nu) Du||^2 + ||grad mu||^2 = <h,u>`
//!   is monitored per step ([`energetics`]);
//! * the dissipative envelope `E(t) <= E(0) e^{-kt} + F(m0)|O| + K` is
//!   assembled constant-by-constant and verified along trajectories
//!   ([`energetics::DissipativeConstants`]);
//! * a generalized Gronwall lemma, translation-bounded norms and trajectory
//!   norms are implemented as checkable operations on sampled signals
//!   ([`signals`], [`trajectory`]);
//! * uniqueness of the convective Cahn-Hilliard flow is probed through the
//!   negative-order norm contraction bound ([`convective`]);
//! * absorption into the dissipative ball is measured on seeded ensembles
//!   and compared with the analytic entry-time map ([`ensemble`]).
//!
//! The `nlchns` binary drives all of this from TOML run configurations; see
//! the book under `book/` for a guided tour.

pub mod config;
pub mod convective;
pub mod dynamics;
pub mod energetics;
pub mod ensemble;
mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod ops;
pub mod potential;
pub mod signals;
pub mod trajectory;

pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
pub(crate) mod testutil;
