//! Diffusion-backed augmentation toolkit for object-detection datasets of
//! historical artworks.
//!
//! The crate covers mask-strategy generation, edge-conditioned object
//! replacement, tiered class balancing, compositing, training-manifest
//! emission and COCO-style evaluation. Image generation is delegated to a
//! [`backend::GenerationBackend`]: a deterministic mock for CPU-only runs
//! or an HTTP client for a diffusion service.
//!
//! Numeric maps and the evaluator are generic over [`num::Scalar`]
//! (`f32`/`f64`); the aliases below name the concrete instantiations.

pub mod analysis;
pub mod backend;
pub mod balance;
pub mod compositor;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod num;
pub mod pipeline;

pub use error::{BackendError, Error, Result};
pub use num::Scalar;

pub type ScalarMap32 = analysis::ScalarMap<f32>;
pub type ScalarMap64 = analysis::ScalarMap<f64>;
pub type EdgeMap32 = analysis::EdgeMap<f32>;
pub type EdgeMap64 = analysis::EdgeMap<f64>;
pub type BBox32 = geometry::BBox<f32>;
pub type BBox64 = geometry::BBox<f64>;
