//! Attribute group editing over multi-layer latent codes.
//!
//! A dictionary of editing directions is learned from seen categories so that
//! each sample's offset from its class mean is a sparse combination of
//! directions orthogonal to every class embedding. Sampling sparse codes and
//! adding the decoded offsets to a single code of an unseen category yields
//! new samples that keep the category. A synthetic generative world with a
//! known irrelevant subspace makes every step measurable.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod io;
pub mod latent;
pub mod linalg;
pub mod rng;
pub mod spectral;
pub mod trainer;
pub mod world;

pub use error::{AgeError, Result};
