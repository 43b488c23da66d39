//! Geodesic deformation modelling on the 2D torus.
//!
//! This crate computes geodesics of diffeomorphic image transformations
//! by shooting the EPDiff equation, registers image pairs by optimizing
//! an initial velocity with an exact discrete adjoint, compresses
//! velocity fields into bandlimited Fourier latents, and learns a latent
//! denoising-diffusion model over whole geodesics conditioned on a
//! template image and a text instruction. Every deformation it produces
//! carries a Jacobian-determinant map, so topology violations are
//! measurable rather than anecdotal.
//!
//! Module map:
//!
//! * [`field`] - grids and scalar/vector/deformation fields.
//! * [`spectral`] - DFTs, the metric operator L/K, difference stencils.
//! * [`epdiff`] - forward geodesic shooting.
//! * [`flow`] - flow integration, warping, DetJac maps.
//! * [`registration`] - energy, adjoint gradient, gradient descent.
//! * [`latent`] - bandlimited Fourier codec and latent geodesics.
//! * [`diffusion`] - noise schedule, denoiser, training, guided sampling.
//! * [`metrics`] - SSIM, DetJac statistics, confidence maps.

pub mod diffusion;
pub(crate) mod linalg;
pub mod epdiff;
pub mod error;
pub mod field;
pub mod flow;
pub mod latent;
pub mod metrics;
pub mod registration;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
