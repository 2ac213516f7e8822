//! Contactless respiratory-motion analysis from stereo image sequences.
//!
//! The processing chain runs stereo frames through rectification, block
//! matching, reprojection to point clouds, rigid registration against a
//! reference frame, a per-frame chest depth measurement, and finally FFT
//! band-pass filtering and breath counting.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod cloud;
pub mod frames;
pub mod icp;
pub mod image;
pub mod kdtree;
pub mod kv;
pub mod par;
pub mod pipeline;
pub mod signal;
pub mod stereo;
pub mod synth;

pub use calib::{PinholeIntrinsics, RectificationMaps, RectifiedGeometry, StereoRig};
pub use frames::{FrameSequence, StereoFrame};
pub use image::GrayImage;
