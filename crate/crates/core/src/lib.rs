// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod camera;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod instrument;
pub mod pipeline;
pub mod registration;
pub mod robust;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{Point2, Point3, RigidTransform};
