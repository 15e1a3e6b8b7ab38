//! Desk-scale testbed for reflection-based privacy in AR lighting
//! reconstruction: synthetic RGB-D capture, point-cloud fusion, cubemap
//! environment lighting, reflective rendering, an automated extraction attack,
//! and two defenses (index-based point-cloud color swapping and restricted
//! rendering).

pub mod attack;
pub mod cloud;
pub mod config;
pub mod detect;
pub mod envmap;
pub mod error;
pub mod filter;
pub mod geom;
pub mod glyph;
pub mod metrics;
pub mod pipeline;
pub mod privacy;
pub mod raster;
pub mod render;
pub mod scene;
pub mod session;

pub use error::{Error, Result};
