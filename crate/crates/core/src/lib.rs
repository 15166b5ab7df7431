//! Point-cloud geometry toolkit: local descriptors, octree search, seeded
//! region growing, and weak-label region merging with self-training.
//!
//! Everything is generic over the scalar type via [`scalar::Scalar`]
//! (implemented for `f32` and `f64`); the aliases below fix the common
//! concrete choices.

pub mod augment;
pub mod cloud;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod mat;
pub mod merge;
pub mod metrics;
pub mod octree;
pub mod overseg;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};

pub type Vec3f64 = scalar::Vec3<f64>;
pub type Vec3f32 = scalar::Vec3<f32>;
pub type PointCloudF64 = cloud::PointCloud<f64>;
pub type PointCloudF32 = cloud::PointCloud<f32>;
pub type OctreeF64 = octree::Octree<f64>;
pub type OctreeF32 = octree::Octree<f32>;
pub type DescriptorF64 = descriptor::Descriptor<f64>;
pub type DescriptorF32 = descriptor::Descriptor<f32>;
pub type SceneConfigF64 = config::SceneConfig<f64>;
pub type SceneConfigF32 = config::SceneConfig<f32>;
pub type PartitionF64 = overseg::Partition<f64>;
pub type PartitionF32 = overseg::Partition<f32>;
