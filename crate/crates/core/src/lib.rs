//! Synthetic multispectral (RGB + NIR) orchard imagery for walnut detection.
//!
//! The pipeline: [`canopy`] grows labeled tree geometry, [`render`] traces it
//! into per-band radiance with single-scatter sun and sky lighting,
//! [`autolabel`] turns the closest-hit instance ids into detection boxes,
//! [`dataset`] mixes and splits real and synthetic image sets, and [`eval`]
//! scores detector output with precision, recall, AP and F1.

pub mod autolabel;
pub mod bvh;
pub mod camera;
pub mod canopy;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod scene;
pub mod spectral;

pub use autolabel::{Annotation, InstanceBox, LabelImage};
pub use camera::Camera;
pub use canopy::{CanopyParams, OrchardParams, TessellationQuality};
pub use config::{GenerationJob, RunConfig};
pub use dataset::{DatasetEntry, DatasetManifest, ImageBand, Source, Split, SplitRatio};
pub use eval::{Detection, GroundTruthBox, MetricsReport};
pub use geometry::{Ray, Vec3};
pub use render::{RadianceImage, ToneMap};
pub use scene::{ClassId, HitRecord, Primitive, Scene};
pub use spectral::{BandSet, Lighting, Material, MaterialLibrary};
