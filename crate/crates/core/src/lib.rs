//! Measurement core for turning detections on scanned catalogue pages into
//! grave measurements, bearings and outline descriptors.
//!
//! Everything in this crate is pure and allocation-only (`no_std` + `alloc`):
//! rasters come in as byte buffers, results go out as plain values. File
//! formats, persistence, the HTTP surface and the synthetic page generator
//! live in the `gravekit` crate.
//!
//! Coordinates are pixels with the origin at the top-left corner and `y`
//! increasing downward. Angles are degrees measured clockwise from image-up.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assemble;
pub mod calibrate;
pub mod detect;
pub mod geometry;
pub mod metric;
pub mod morpho;
pub mod orient;
pub mod raster;
pub mod workflow;

mod math;

pub use assemble::{assemble_graves, bbox_center_distance, GraveTree};
pub use calibrate::{Conversion, ConversionSource, ScaleBar, ScaleLabel};
pub use detect::{BBox, ClassLabel, Detection, Origin};
pub use geometry::{Contour, Orientation, Point, RotatedRect};
pub use orient::{Bearing, BearingKind, NorthArrow, NorthSource, SpineArrow};
pub use raster::{BinaryRaster, GrayRaster};
pub use workflow::ValidationStatus;
