//! Surface vision transformer pipeline on icospheric time series.
//!
//! The crate is organised bottom-up:
//!
//! * [`icosphere`]: subdivided icosahedral meshes, patch decomposition and
//!   barycentric resampling between meshes.
//! * [`nn`] and [`sit`]: a small dense autograd-free transformer with
//!   hand-written backward passes, generic over `f32`/`f64`.
//! * [`vsmae`]: tube-masked surface autoencoder pretraining.
//! * [`clip`]: multimodal mappers and the tri-modal contrastive objective.
//! * [`datagen`]: a seeded synthetic world of (fMRI, video, audio) triplets.
//! * [`eval`]: retrieval, ridge baseline, significance tests and lag scans.
//! * [`attnmap`]: CLS attention extraction and surface projection.
//! * [`persist`]: run configuration, checkpoints and the dataset container.

pub mod attnmap;
pub mod clip;
pub mod datagen;
mod error;
pub mod eval;
pub mod icosphere;
pub mod nn;
pub mod persist;
mod real;
pub mod rng;
pub mod sit;
pub mod sphharm;
pub mod vsmae;

pub use error::{Result, SimError};
pub use real::Real;
