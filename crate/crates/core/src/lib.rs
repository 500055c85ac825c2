//! Sampling, frames, and polyharmonic splines for band-limited functions on
//! the hyperbolic plane.

pub mod bandlimited;
pub mod baseline1d;
pub mod cli;
pub mod geometry;
pub mod lattice;
pub mod quadrature;
pub mod sampling;
pub mod spectral;
pub mod sphavg;
pub mod splines;
