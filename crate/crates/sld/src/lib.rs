//! Segmentation-based detection of spinal ligament attachment landmarks
//! on vertebra surface meshes.
//!
//! Pipeline: preprocess (remesh, smooth, anatomical frame) -> segment
//! (body/arch split, process clustering, skeleton classification) ->
//! detect the seven ligament landmark groups -> evaluate against
//! annotations.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod landmarks;
pub mod mesh;
pub mod pipeline;
pub mod preprocess;
pub mod remesh;
pub mod segmentation;
pub mod synth;

pub use error::{Result, SldError};
pub use mesh::TriMesh;
