//! Multi-view consistency machinery for generative material detail
//! enhancement: view-correlated seed noise anchored in UV space,
//! ray-traced cross-view attention bias, conditioning buffers, and
//! differentiable recovery of PBR textures from enhanced views.

pub mod attention;
pub mod correspondence;
pub mod error;
pub mod geometry;
pub mod invrender;
pub mod math;
pub mod noisegen;
pub mod pipeline;
pub mod render;

pub use error::{Error, Result};
