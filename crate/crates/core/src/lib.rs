//! Numerical laboratory around majorizing kernels for the Fourier-space
//! Navier-Stokes equations: the convolution inequality
//! `h*h(xi) <= B |xi|^theta h(xi)`, the stochastic-cascade Monte Carlo
//! representation of mild solutions, a deterministic Picard solver on a
//! truncated Fourier lattice, and the pseudomeasure / Besov / Carleson
//! norms used to check the associated embedding inequalities at desk scale.

pub mod cascade;
pub mod config;
pub mod convolve;
pub mod error;
pub mod fft;
pub mod kernel;
pub mod lattice;
pub mod picard;
pub mod probe;
pub mod quad;
pub mod report;
pub mod rng;
pub mod spaces;

pub use error::{Error, Result};
pub use kernel::{Kernel, KernelForm};
