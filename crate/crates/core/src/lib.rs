//! Core of a PV plant mapping pipeline for aerial imagery.
//!
//! Per-image module detections are filtered and fused, organized into
//! rows, benches and sectors, lifted into 3D through calibrated cameras and
//! a point cloud, fused across images into a consistent plant structure, and
//! finally optimized into a compact model with per-module structural ids.
//! A synthetic scene generator and evaluation helpers close the loop.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod camera;
pub mod correction;
pub mod cloud;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod geom;
pub mod lift;
pub mod optimize;
pub mod pipeline;
pub mod raster;
pub mod simulate;
pub mod stats;
pub mod structure;
pub mod union_find;

pub use error::{Error, Result};
