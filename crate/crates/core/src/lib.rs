//! Open-world superclass reasoning over patch appearance features.
//!
//! Patch features of known-class images are clustered without labels into
//! K appearance clusters. Each cluster then gets a confidence vector: the
//! normalized histogram of class labels among its patches. An image from a
//! class never seen in training is described by averaging the vectors of
//! the clusters its patches fall into, and the class mass is pooled into
//! superclasses to name the coarse category it belongs to.
//!
//! Module map:
//!
//! - [`store`]: `APFT` feature files, manifest, class hierarchy
//! - [`embedding`]: positional mixing and saliency weights
//! - [`clustering`]: mini-batch K-means, assignment, elbow selection
//! - [`semantics`]: the class-by-cluster confidence matrix
//! - [`inference`]: prediction, evaluation, `APMD` model files
//! - [`pipeline`]: training end to end

pub mod clustering;
pub mod embedding;
pub mod error;
pub mod inference;
pub mod pipeline;
pub mod semantics;
pub mod store;
pub mod synthetic;

pub use error::{Error, ErrorCategory, Result};
