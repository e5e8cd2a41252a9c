//! Simulation-based Bayesian optimal experimental design.
//!
//! The central object is an expected utility surface over designs,
//!
//! ```text
//! U(d) = E[ u(z, d, theta) ],   theta ~ p(theta | y, xi),  z ~ p(z | theta, d),
//! ```
//!
//! explored by samplers on an augmented space of (design, parameter,
//! future-data) blocks whose design marginal is proportional to U(d) or to a
//! power U(d)^J. The crate provides:
//!
//! * a conjugate linear-Gaussian test bed with closed-form posteriors and
//!   expected utilities ([`model`]),
//! * utility functions and positivity handling ([`utility`]),
//! * Metropolis-Hastings samplers on the augmented space, including annealed,
//!   inhomogeneous, prior-observation-corrected, and likelihood-free variants
//!   ([`mcmc`]),
//! * sequential particle counterparts ([`particle`]),
//! * approximate Bayesian computation: rejection, MCMC, and population Monte
//!   Carlo posterior samplers ([`abc`]),
//! * chain and density diagnostics ([`diagnostics`]),
//! * end-to-end experiment drivers ([`pipeline`]).

pub mod abc;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod particle;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
