//! Image restoration with a diffusion model over a compact prior vector.
//!
//! A small network ([`cpen`]) compresses a ground-truth/degraded pair into a
//! prior vector that modulates a transformer restorer ([`dirformer`]). A
//! second network learns to produce that vector from the degraded image
//! alone by running a short reverse diffusion ([`denoiser`], [`schedule`]).

pub mod cli;
pub mod config;
pub mod cost;
pub mod cpen;
pub mod data;
pub mod denoiser;
pub mod dirformer;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
