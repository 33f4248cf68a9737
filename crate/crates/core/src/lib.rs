//! Cylindrical-transform sampling of sequential images and per-voxel
//! semantic segmentation by whole-image classification.
//!
//! Every voxel of a volume can serve as the pole of a cylindrical transform:
//! polar rays are cast from the pole in a stack of slices around it and the
//! samples are concatenated into one `(S'·M)×N` image. A classifier trained on
//! such images of randomly chosen poles labels every voxel of a new volume.
//!
//! Pipeline stages:
//!
//! 1. [`volume`] – volumes, label volumes and the `rvol` file format.
//! 2. [`synth`] – labeled phantom volumes of geometric primitives.
//! 3. [`transform`] – offset tables, slice sets and the transform itself.
//! 4. [`dataset`] – stratified pole sampling, transform pools, folds.
//! 5. [`classifier`] – pooled features and a softmax baseline model.
//! 6. [`segment`] – dense (or strided) inference and benchmarking.
//! 7. [`metrics`] – Dice, precision/recall/F1, confusion, ROC/AUC.
//!
//! Voxel data is generic over [`Voxel`] (`u8`, `i16`, `f32`), model
//! parameters over any [`num_traits::Float`]. The aliases below name the
//! common instantiations.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod segment;
pub mod synth;
pub mod transform;
pub mod volume;

pub use classifier::{FeatureConfig, Model, TrainConfig};
pub use error::{Error, Result};
pub use scalar::{DType, Voxel};
pub use transform::{OffsetTable, SliceSet, TransformConfig, TransformImage};
pub use volume::{AnyVolume, LabelVolume, Pole, Volume, VolumeHeader};

pub type VolumeU8 = Volume<u8>;
pub type VolumeI16 = Volume<i16>;
pub type VolumeF32 = Volume<f32>;

pub type TransformImageU8 = TransformImage<u8>;
pub type TransformImageI16 = TransformImage<i16>;
pub type TransformImageF32 = TransformImage<f32>;

pub type ModelF32 = Model<f32>;
pub type ModelF64 = Model<f64>;
