//! Few-view radiance-field training with a warped-feature consistency term.
//!
//! The core is generic over [`Scalar`] (`f32` for training, `f64` for gradient
//! checks); concrete aliases for both live at the crate root.

pub mod consistency;
pub mod data;
pub mod error;
pub mod field;
pub mod geometry;
pub mod image;
pub mod linalg;
pub mod renderer;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Camera32 = geometry::Camera<f32>;
pub type Camera64 = geometry::Camera<f64>;
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type FieldParams32 = field::FieldParams<f32>;
pub type FieldParams64 = field::FieldParams<f64>;
pub type RadianceModel32 = renderer::RadianceModel<f32>;
pub type RadianceModel64 = renderer::RadianceModel<f64>;
pub type Vec3f = linalg::Vec3<f32>;
pub type Vec3d = linalg::Vec3<f64>;
